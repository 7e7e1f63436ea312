"""Command-line interface.

Subcommands cover the full workflow: generate data, initialize and fit the
toy model, certify inputs, attack-verify the certificates, and score
saliency maps.  Flags override values from an optional ``key = value``
config file.  Exit codes: 0 success, 1 usage error, 2 data error,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import attacks, certify, datagen, metrics, model as model_mod
from . import smoothing, topk
from .core import (AttackObjective, AttentionMode, CertParams, ConfidenceMode,
                   DataError, InvariantError, LinfMode, Norm,
                   default_alpha_grid, derive_seed, format_float, seeded_rng)
from .tensorio import write_tensor

_CONFIG_KEYS = {
    "out", "count", "size", "seed", "model", "data", "report",
    "patch", "q", "layers", "classes",
    "sigma", "m", "k", "beta", "norm", "linf_mode", "confidence", "ci_level",
    "alpha_points", "refine_iters", "denoiser", "prior_mean", "prior_var",
    "range_scale", "schedule_start", "schedule_end", "schedule_steps",
    "attention_mode", "saliency_mode", "metrics", "perturb_radius", "fill",
    "factors", "attempts", "steps", "step_size", "fd_epsilon",
    "threads", "limit", "dump_maps", "drop_fraction",
}


class CliUsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to exit code 1
        raise CliUsageError(message)


def load_config(path) -> dict:
    """Parse a ``key = value`` config file; unknown keys are rejected."""
    cfg = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{ln}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in _CONFIG_KEYS:
            raise DataError(f"{path}:{ln}: unknown config key '{key}'")
        cfg[key] = value.strip()
    return cfg


class Settings:
    """Merged view of flags over config over defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = vars(args)
        self.config = load_config(args.config) if args.config else {}

    def get(self, key, default=None, cast=str, required=False):
        flag = self.args.get(key)
        if flag is not None:
            return flag
        if key in self.config:
            raw = self.config[key]
            try:
                if cast is bool:
                    return raw.lower() in ("1", "true", "yes")
                return cast(raw)
            except ValueError:
                raise CliUsageError(f"config value for '{key}' is not a "
                                    f"valid {cast.__name__}: {raw!r}")
        if required and default is None:
            raise CliUsageError(f"missing required setting '{key}'")
        return default


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="base seed (default 0)")


def _add_smoothing_flags(p: argparse.ArgumentParser):
    p.add_argument("--sigma", type=float, help="noise scale (default 0.25)")
    p.add_argument("--m", type=int, help="Monte-Carlo draws (default 1024)")
    p.add_argument("--denoiser", choices=["identity", "shrinkage"])
    p.add_argument("--prior-mean", dest="prior_mean", type=float)
    p.add_argument("--prior-var", dest="prior_var", type=float)
    p.add_argument("--range-scale", dest="range_scale", type=float)
    p.add_argument("--schedule-start", dest="schedule_start", type=float)
    p.add_argument("--schedule-end", dest="schedule_end", type=float)
    p.add_argument("--schedule-steps", dest="schedule_steps", type=int)
    p.add_argument("--attention-mode", dest="attention_mode",
                   choices=["cls_last", "cls_rollout"])


def build_parser() -> _Parser:
    parser = _Parser(prog="attncert",
                     description="Certified stability of smoothed predictions "
                                 "and attention top-k sets")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[], help="generate synthetic data")
    _add_common(p)
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--count", type=int, help="number of images (default 20)")
    p.add_argument("--size", type=int, help="image side length (default 16)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("init-model", help="initialize toy model weights")
    _add_common(p)
    p.add_argument("--out", help="output model directory")
    p.add_argument("--size", type=int, help="image side length (default 16)")
    p.add_argument("--patch", type=int, help="patch side (default 4)")
    p.add_argument("--q", type=int, help="embedding width (default 8)")
    p.add_argument("--layers", type=int, help="attention layers (default 2)")
    p.add_argument("--classes", type=int, help="classes (default 2)")
    p.set_defaults(func=cmd_init_model)

    p = sub.add_parser("fit-head", help="least-squares refit of the head")
    _add_common(p)
    p.add_argument("--model", help="model directory")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", help="output model directory")
    p.set_defaults(func=cmd_fit_head)

    p = sub.add_parser("certify", help="certify inputs, write a CSV report")
    _add_common(p)
    _add_smoothing_flags(p)
    p.add_argument("--model", help="model directory")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--k", type=int, help="attention top-k size (default 4)")
    p.add_argument("--beta", type=float, help="overlap fraction (default 0.75)")
    p.add_argument("--norm", choices=["l2", "linf"])
    p.add_argument("--linf-mode", dest="linf_mode",
                   choices=["sqrt_d", "literal_d"])
    p.add_argument("--confidence", choices=["plugin", "binomial_ci"])
    p.add_argument("--ci-level", dest="ci_level", type=float)
    p.add_argument("--alpha-points", dest="alpha_points", type=int)
    p.add_argument("--refine-iters", dest="refine_iters", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("verify", help="attack inputs at inflated radii")
    _add_common(p)
    _add_smoothing_flags(p)
    p.add_argument("--model", help="model directory")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--report", help="certification CSV from 'certify'")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--factors", help="comma list (default 1.0,1.5,2.0)")
    p.add_argument("--attempts", type=int, help="attacks per factor "
                                                "(default 10)")
    p.add_argument("--steps", type=int, help="PGD steps (default 10)")
    p.add_argument("--step-size", dest="step_size", type=float,
                   help="PGD step (default 2.5*radius/steps)")
    p.add_argument("--fd-epsilon", dest="fd_epsilon", type=float)
    p.add_argument("--threads", type=int)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", help="saliency quality metrics")
    _add_common(p)
    _add_smoothing_flags(p)
    p.add_argument("--model", help="model directory")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--saliency-mode", dest="saliency_mode",
                   choices=["raw", "rollout", "smoothed"])
    p.add_argument("--metrics", help="metric selection (only 'all')")
    p.add_argument("--perturb-radius", dest="perturb_radius", type=float,
                   help="uniform perturbation radius for the stability "
                        "score (default 8/255)")
    p.add_argument("--fill", type=float, help="erasure fill value (default 0)")
    p.add_argument("--dump-maps", dest="dump_maps",
                   help="directory for fused saliency map dumps")
    p.add_argument("--drop-fraction", dest="drop_fraction", type=float)
    p.add_argument("--threads", type=int)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_eval)

    return parser


# ---------------------------------------------------------------------------
# shared assembly helpers
# ---------------------------------------------------------------------------

def _build_smoothed(s: Settings, params) -> certify.SmoothedModel:
    schedule = smoothing.linear_schedule(
        s.get("schedule_start", 1e-4, float),
        s.get("schedule_end", 0.02, float),
        s.get("schedule_steps", 1000, int))
    name = s.get("denoiser", "identity")
    if name == "shrinkage":
        denoiser = smoothing.ShrinkageDenoiser(
            prior_mean=s.get("prior_mean", 0.5, float),
            prior_var=s.get("prior_var", 0.25, float))
    elif name == "identity":
        denoiser = smoothing.IdentityDenoiser()
    else:
        raise CliUsageError(f"unknown denoiser '{name}'")
    mode = AttentionMode(s.get("attention_mode", "cls_last"))
    return certify.SmoothedModel(
        params=params, schedule=schedule, denoiser=denoiser,
        sigma=s.get("sigma", 0.25, float),
        range_scale=s.get("range_scale", 2.0, float),
        attention_mode=mode)


def _load_inputs(s: Settings):
    data_dir = s.get("data", required=True)
    dataset = datagen.load_dataset(data_dir)
    limit = s.get("limit", None, int)
    n = len(dataset) if limit is None else min(limit, len(dataset))
    return dataset, n


def _run_indexed(worker, n: int, threads: int):
    """Run ``worker(i)`` for i in range(n), preserving index order."""
    if threads <= 1:
        return [worker(i) for i in range(n)]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, range(n)))


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    s = Settings(args)
    out = s.get("out", required=True)
    dataset = datagen.synthesize(s.get("count", 20, int),
                                 s.get("size", 16, int),
                                 s.get("seed", 0, int))
    datagen.write_dataset(out, dataset)
    print(f"wrote {len(dataset)} images to {out}")
    return 0


def cmd_init_model(args) -> int:
    s = Settings(args)
    out = s.get("out", required=True)
    params = model_mod.init_params(
        image_size=s.get("size", 16, int), patch_size=s.get("patch", 4, int),
        q=s.get("q", 8, int), layers=s.get("layers", 2, int),
        classes=s.get("classes", 2, int), seed=s.get("seed", 0, int))
    model_mod.save_model(out, params)
    print(f"wrote model ({params.n_tokens} tokens, q={params.q}) to {out}")
    return 0


def cmd_fit_head(args) -> int:
    s = Settings(args)
    params = model_mod.load_model(s.get("model", required=True))
    dataset, n = _load_inputs(s)
    fitted = model_mod.fit_head(params, dataset.images[:n], dataset.labels[:n])
    out = s.get("out", required=True)
    model_mod.save_model(out, fitted)
    preds = [int(np.argmax(model_mod.forward(fitted, img)[0]))
             for img in dataset.images[:n]]
    acc = float(np.mean(np.asarray(preds) == dataset.labels[:n]))
    print(f"fit head on {n} images (train accuracy {acc:.3f}); "
          f"wrote model to {out}")
    return 0


def _cert_params(s: Settings, seed: int) -> CertParams:
    return CertParams(
        sigma=s.get("sigma", 0.25, float), m=s.get("m", 1024, int),
        k=s.get("k", 4, int), beta=s.get("beta", 0.75, float),
        alpha_grid=default_alpha_grid(s.get("alpha_points", 64, int)),
        norm=Norm(s.get("norm", "l2")),
        linf_mode=LinfMode(s.get("linf_mode", "sqrt_d")),
        confidence_mode=ConfidenceMode(s.get("confidence", "plugin")),
        ci_level=s.get("ci_level", 0.999, float),
        refine_iters=s.get("refine_iters", 3, int), seed=seed)


def cmd_certify(args) -> int:
    s = Settings(args)
    params = model_mod.load_model(s.get("model", required=True))
    dataset, n = _load_inputs(s)
    out = s.get("out", required=True)
    base_seed = s.get("seed", 0, int)
    smoothed = _build_smoothed(s, params)
    base = _cert_params(s, base_seed)
    if base.k + topk.min_mismatches(base.k, base.beta) > params.n_patches:
        raise CliUsageError("k/beta do not fit the model's patch count")

    def worker(i):
        p = dataclasses.replace(base, seed=derive_seed(base_seed, i))
        return certify.certify_input(smoothed, dataset.images[i], p,
                                     input_id=dataset.ids[i])

    results = _run_indexed(worker, n, s.get("threads", 1, int))
    certify.write_certification_csv(out, results)
    certified = sum(1 for r in results if r.radius > 0.0)
    print(f"certified {certified}/{n} inputs with positive radius; "
          f"report: {out}")
    return 0


def cmd_verify(args) -> int:
    s = Settings(args)
    params = model_mod.load_model(s.get("model", required=True))
    dataset, _ = _load_inputs(s)
    report = certify.read_certification_csv(s.get("report", required=True))
    limit = s.get("limit", None, int)
    if limit is not None:
        report = report[:limit]
    out = s.get("out", required=True)
    base_seed = s.get("seed", 0, int)
    smoothed = _build_smoothed(s, params)
    factors = [float(f) for f in
               str(s.get("factors", "1.0,1.5,2.0")).split(",")]
    attempts = s.get("attempts", 10, int)
    id_to_index = {d: i for i, d in enumerate(dataset.ids)}

    def worker(j):
        row = report[j]
        if row["input_id"] not in id_to_index:
            raise DataError(f"report input '{row['input_id']}' not in dataset")
        i = id_to_index[row["input_id"]]
        if abs(row["sigma"] - smoothed.sigma) > 1e-12:
            raise DataError("report sigma disagrees with the smoothing flags")
        p = CertParams(sigma=row["sigma"], m=row["m"], k=row["k"],
                       beta=row["beta"], norm=row["norm"],
                       seed=derive_seed(base_seed, i))
        cfg = attacks.AttackConfig(
            objective=AttackObjective.FLIP_PREDICTION, radius=1.0,
            norm=row["norm"], steps=s.get("steps", 10, int),
            step_size=s.get("step_size", None, float),
            fd_epsilon=s.get("fd_epsilon", 1e-3, float),
            seed=derive_seed(base_seed, i, 7))
        return attacks.verify_region(
            smoothed, dataset.images[i], row["R_faithful"], p, factors,
            attempts, cfg, input_id=row["input_id"])

    all_rows = _run_indexed(worker, len(report), s.get("threads", 1, int))
    flat = [
        [r.input_id, format_float(r.factor), r.objective.value, r.attempts,
         r.successes]
        for rows in all_rows for r in rows]
    _write_rows(out, ["input_id", "factor", "objective", "attempts",
                      "successes"], flat)
    total_runs = sum(r.attempts for rows in all_rows for r in rows)
    wins = sum(r.successes for rows in all_rows for r in rows)
    print(f"verification finished: {wins} successes across "
          f"{total_runs} attack slots; report: {out}")
    return 0


def cmd_eval(args) -> int:
    s = Settings(args)
    params = model_mod.load_model(s.get("model", required=True))
    dataset, n = _load_inputs(s)
    out = s.get("out", required=True)
    which = s.get("metrics", "all")
    if which != "all":
        raise CliUsageError("only --metrics all is supported")
    mode = s.get("saliency_mode", "raw")
    if mode not in ("raw", "rollout", "smoothed"):
        raise CliUsageError(f"unknown saliency mode '{mode}'")
    base_seed = s.get("seed", 0, int)
    smoothed = _build_smoothed(s, params)
    m = s.get("m", 1024, int)
    rho = s.get("perturb_radius", 8.0 / 255.0, float)
    fill = s.get("fill", 0.0, float)
    dump_dir = s.get("dump_maps", None)
    drop = s.get("drop_fraction", 0.1, float)
    if dump_dir:
        Path(dump_dir).mkdir(parents=True, exist_ok=True)

    def saliency_for(image, seed):
        """Pixel saliency map plus the per-draw maps used for fusion."""
        if mode == "raw":
            _, attn = model_mod.forward(params, image, AttentionMode.CLS_LAST)
            per_draw = attn[None]
        elif mode == "rollout":
            _, attn = model_mod.forward(params, image,
                                        AttentionMode.CLS_ROLLOUT)
            per_draw = attn[None]
        else:
            noise = smoothing.noise_bank(seed, m, image.shape, smoothed.sigma)
            noisy = image[None] + noise
            _, per_draw = smoothed.outputs_for_noisy(noisy)
            attn = per_draw.mean(axis=0)
            attn = attn / attn.sum()
        up = metrics.upsample_attention(attn, params.image_size,
                                        params.patch_size)
        return up, per_draw

    def predictor(seed):
        noise = smoothing.noise_bank(seed, m, dataset.images[0].shape,
                                     smoothed.sigma)

        def predict(image):
            est = certify.estimate_smoothed(smoothed, image, m, seed,
                                            noise=noise)
            order = np.lexsort((np.arange(est.p_hat.size), -est.p_hat))
            return int(order[0])
        return predict

    def worker(i):
        image = np.asarray(dataset.images[i], dtype=np.float64)
        mask = dataset.masks[i]
        seed = derive_seed(base_seed, i)
        sal, per_draw = saliency_for(image, seed)
        rng = seeded_rng(base_seed, i, 101)
        perturbed = image + rng.uniform(-rho, rho, image.shape)
        sal_pert, _ = saliency_for(perturbed, seed)
        predict = predictor(seed)
        curve_pos = metrics.perturbation_curve(predict, image, sal,
                                               positive=True, fill=fill)
        curve_neg = metrics.perturbation_curve(predict, image, sal,
                                               positive=False, fill=fill)
        if dump_dir:
            maps = [metrics.upsample_attention(a, params.image_size,
                                               params.patch_size)
                    for a in per_draw]
            fused = smoothing.fuse_maps(np.stack(maps), drop_fraction=drop)
            write_tensor(Path(dump_dir) / f"{dataset.ids[i]}_fused.fvtn",
                         fused)
        return [
            ("pixel_accuracy", metrics.pixel_accuracy(sal, mask)),
            ("miou", metrics.miou(sal, mask)),
            ("average_precision", metrics.average_precision(sal, mask)),
            ("s_faith", metrics.s_faith(sal, sal_pert)),
            ("p_auc_positive", metrics.p_auc(curve_pos)),
            ("p_auc_negative", metrics.p_auc(curve_neg)),
        ]

    per_input = _run_indexed(worker, n, s.get("threads", 1, int))
    rows = [[dataset.ids[i], name, format_float(value)]
            for i in range(n) for name, value in per_input[i]]
    _write_rows(out, ["input_id", "metric", "value"], rows)
    print(f"evaluated {n} inputs ({mode} saliency); report: {out}")
    return 0


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except CliUsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # anything unanticipated is an invariant breach
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
