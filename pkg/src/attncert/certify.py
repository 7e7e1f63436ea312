"""Monte-Carlo estimation of the smoothed model and faithful-region radii.

For an input x the smoothed model is estimated from m noise draws with
per-draw seeds ``seed XOR i`` (counter style, so outcomes are independent
of evaluation order and of how many draws follow).  Two certified radii
come out: the largest perturbation that provably cannot flip the argmax
class, and the largest that provably cannot break the attention top-k
overlap; their minimum is the faithful radius.  Each is a supremum over
Renyi orders of ``sigma * sqrt(2 * divergence_budget / alpha)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import beta as beta_dist

from . import divergence, model as model_mod, smoothing, topk
from .core import (AlphaSweepResult, AttentionMode, CertificationResult,
                   CertParams, ConfidenceMode, DataError, LinfMode, Norm,
                   SmoothedEstimate, format_float, normalize_simplex, require)

CSV_COLUMNS = ["input_id", "sigma", "m", "k", "beta", "norm", "p1", "p2",
               "P_bound", "Q_bound", "R_faithful", "best_alpha_P",
               "best_alpha_Q", "argmax_certified"]


@dataclass(frozen=True)
class SmoothedModel:
    """A base model wrapped in the noise-rescale-denoise smoothing stack."""

    params: "model_mod.ToyViTParams"
    schedule: smoothing.NoiseSchedule
    denoiser: smoothing.Denoiser
    sigma: float
    range_scale: float = 2.0
    attention_mode: AttentionMode = AttentionMode.CLS_LAST

    def t_star(self) -> int:
        return smoothing.timestep_for_sigma(self.schedule, self.sigma,
                                            self.range_scale)

    def outputs_for_noisy(self, noisy: np.ndarray):
        """(probs, attention) for a batch that already carries the noise."""
        denoised = smoothing.apply_diffusion(noisy, self.t_star(),
                                             self.schedule, self.denoiser)
        return model_mod.forward_batch(self.params, denoised,
                                       self.attention_mode)


def estimate_smoothed(smoothed: SmoothedModel, x: np.ndarray, m: int,
                      seed: int,
                      noise: np.ndarray = None) -> SmoothedEstimate:
    """Estimate class frequencies and the mean attention vector at ``x``.

    The class estimate is the frequency of each class winning the per-draw
    argmax (ties toward the smaller class index); the attention estimate is
    the plain mean of per-draw attention vectors, renormalized.  Reductions
    run in draw order, so results do not depend on thread count.

    :param noise: optional precomputed ``noise_bank`` (callers evaluating
        many nearby inputs reuse one bank -- common random numbers).
    """
    x = np.asarray(x, dtype=np.float64)
    if noise is None:
        noise = smoothing.noise_bank(seed, m, x.shape, smoothed.sigma)
    require(noise.shape == (m,) + x.shape, "noise bank shape mismatch")
    probs, attn = smoothed.outputs_for_noisy(x[None] + noise)
    draw_classes = np.argmax(probs, axis=1)
    counts = np.bincount(draw_classes, minlength=smoothed.params.classes)
    p_hat = counts / float(m)
    p_soft = probs.mean(axis=0)
    w_tilde = normalize_simplex(attn.mean(axis=0))
    return SmoothedEstimate(p_hat=p_hat, p_soft=p_soft, w_tilde=w_tilde,
                            counts=counts, draw_classes=draw_classes,
                            m=m, seed=seed)


def _clopper_pearson(count: int, m: int, ci_level: float):
    """Two-sided exact binomial limits (lower, upper) at ``ci_level``."""
    tail = (1.0 - ci_level) / 2.0
    lower = 0.0 if count == 0 else float(beta_dist.ppf(tail, count,
                                                       m - count + 1))
    upper = 1.0 if count == m else float(beta_dist.ppf(1.0 - tail, count + 1,
                                                       m - count))
    return lower, upper


def _confidence_adjusted(estimate: SmoothedEstimate, params: CertParams):
    """Top-two classes and their (possibly CI-adjusted) probabilities."""
    p_hat = estimate.p_hat
    order = np.lexsort((np.arange(p_hat.size), -p_hat))
    c1, c2 = int(order[0]), int(order[1])
    p1, p2 = float(p_hat[c1]), float(p_hat[c2])
    if params.confidence_mode is ConfidenceMode.BINOMIAL_CI:
        p1, _ = _clopper_pearson(int(estimate.counts[c1]), estimate.m,
                                 params.ci_level)
        _, p2 = _clopper_pearson(int(estimate.counts[c2]), estimate.m,
                                 params.ci_level)
        p2 = min(p2, 1.0 - p1)
    return c1, c2, p1, p2


def faithful_region(estimate: SmoothedEstimate, params: CertParams,
                    dimension: int) -> CertificationResult:
    """Compute both certified radii and their minimum for one estimate.

    The L2 radii are converted to Linf (when requested) by dividing by
    sqrt(d) -- the norm-equivalence constant -- or by d under the literal
    conversion mode kept for comparison.

    :param dimension: pixel count of the input, used for the Linf division.
    """
    require(dimension >= 1, "dimension must be positive")
    c1, c2, p1, p2 = _confidence_adjusted(estimate, params)
    grid = params.grid()

    if p1 > p2:
        def pred_radius(alpha: float) -> float:
            thresh = divergence.prediction_threshold(p1, p2, alpha)
            return divergence.radius_from_divergence(thresh, params.sigma,
                                                     alpha)
        sweep_p = divergence.sup_over_alpha(pred_radius, grid,
                                            params.refine_iters)
    else:
        sweep_p = AlphaSweepResult(best_alpha=float(grid[0]), best_value=0.0,
                                   samples=((float(grid[0]), 0.0),))

    ctx = topk.make_context(estimate.w_tilde, params.k, params.beta)

    def attn_radius(alpha: float) -> float:
        div = topk.min_divergence_to_break(ctx, alpha)
        return divergence.radius_from_divergence(div, params.sigma, alpha)

    sweep_q = divergence.sup_over_alpha(attn_radius, grid,
                                        params.refine_iters)

    p_bound = sweep_p.best_value
    q_bound = sweep_q.best_value
    if params.norm is Norm.LINF:
        div_by = (math.sqrt(dimension)
                  if params.linf_mode is LinfMode.SQRT_D else float(dimension))
        p_bound /= div_by
        q_bound /= div_by
    radius = min(p_bound, q_bound)

    return CertificationResult(
        input_id="", predicted_class=c1, p1=p1, p2=p2,
        prediction_bound=p_bound, attention_bound=q_bound, radius=radius,
        best_alpha_prediction=sweep_p.best_alpha,
        best_alpha_attention=sweep_q.best_alpha,
        argmax_certified=bool(p_bound > 0.0), norm=params.norm,
        sigma=params.sigma, m=estimate.m, k=params.k, beta=params.beta,
        w_tilde=estimate.w_tilde, sweep_prediction=sweep_p,
        sweep_attention=sweep_q)


def certify_input(smoothed: SmoothedModel, x: np.ndarray,
                  params: CertParams, input_id: str = "",
                  noise: np.ndarray = None) -> CertificationResult:
    """Estimate at ``x`` and certify; convenience composition."""
    require(abs(smoothed.sigma - params.sigma) < 1e-12,
            "smoothing sigma and certification sigma disagree")
    est = estimate_smoothed(smoothed, x, params.m, params.seed, noise=noise)
    result = faithful_region(est, params, int(np.asarray(x).size))
    return _with_id(result, input_id)


def _with_id(result: CertificationResult, input_id: str) -> CertificationResult:
    return replace(result, input_id=input_id)


def write_certification_csv(path, results) -> None:
    """One row per input, stable column order, shortest-round-trip floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in results:
            writer.writerow([
                r.input_id, format_float(r.sigma), r.m, r.k,
                format_float(r.beta), r.norm.value, format_float(r.p1),
                format_float(r.p2), format_float(r.prediction_bound),
                format_float(r.attention_bound), format_float(r.radius),
                format_float(r.best_alpha_prediction),
                format_float(r.best_alpha_attention),
                "true" if r.argmax_certified else "false",
            ])


def read_certification_csv(path):
    """Rows of a certification report as dictionaries (values parsed)."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != CSV_COLUMNS:
                raise DataError(f"{path}: unexpected certification columns")
            rows = []
            for raw in reader:
                rows.append({
                    "input_id": raw["input_id"],
                    "sigma": float(raw["sigma"]),
                    "m": int(raw["m"]),
                    "k": int(raw["k"]),
                    "beta": float(raw["beta"]),
                    "norm": Norm(raw["norm"]),
                    "p1": float(raw["p1"]),
                    "p2": float(raw["p2"]),
                    "P_bound": float(raw["P_bound"]),
                    "Q_bound": float(raw["Q_bound"]),
                    "R_faithful": float(raw["R_faithful"]),
                    "best_alpha_P": float(raw["best_alpha_P"]),
                    "best_alpha_Q": float(raw["best_alpha_Q"]),
                    "argmax_certified": raw["argmax_certified"] == "true",
                })
            return rows
    except OSError as exc:
        raise DataError(f"cannot read certification report {path}: {exc}") \
            from exc
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed certification report: {exc}") \
            from exc
