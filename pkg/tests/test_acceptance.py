"""Acceptance gate: the deliverable's eleven must-hold properties.

Each test prints one PASS/FAIL banner line directly to the terminal
(bypassing capture) so a plain ``pytest -v`` run leaves an auditable
one-line verdict per criterion, then asserts.

Criteria with wall-clock budgets measure and enforce them.  The two
empirical criteria (soundness sweep, region verification) run fixed-seed
regimes chosen during development; every seed is pinned here.
"""

import concurrent.futures
import time

import numpy as np
import pytest

from attncert import attacks, certify, datagen, metrics, model, smoothing, topk
from attncert.cli import main as cli_main
from attncert.core import (
    AttackObjective,
    CertParams,
    ConfidenceMode,
    LinfMode,
    Norm,
    SmoothedEstimate,
)
from attncert.divergence import (
    gaussian_renyi_bound,
    prediction_threshold,
    renyi_divergence,
)
from attncert.topk import (
    brute_force_min_divergence,
    make_context,
    min_divergence_to_break,
    worst_case_q,
)

scipy_integrate = pytest.importorskip("scipy.integrate")


def _report(capfd, num, ok, detail):
    """One verdict line per criterion, written through the capture."""
    line = "ACCEPTANCE %2d: %s -- %s" % (num, "PASS" if ok else "FAIL", detail)
    with capfd.disabled():
        print(line, flush=True)
    assert ok, line


def _argmax_class(p_hat):
    order = np.lexsort((np.arange(p_hat.size), -p_hat))
    return int(order[0])


def _make_estimate(p1, p2, w_tilde, m=1000):
    """Hand-built estimate for the closed-form criteria (7, 8)."""
    w = np.asarray(w_tilde, dtype=np.float64)
    p_hat = np.array([p1, p2, 1.0 - p1 - p2])
    counts = np.round(p_hat * m).astype(np.int64)
    return SmoothedEstimate(
        p_hat=p_hat, p_soft=p_hat.copy(), w_tilde=w / w.sum(),
        counts=counts, draw_classes=np.zeros(m, dtype=np.int64), m=m, seed=0)


# ---------------------------------------------------------------------------
# 1-2: top-k certificate vs brute force, minimizer validity
# ---------------------------------------------------------------------------

def test_c01_oracle_equivalence(capfd):
    rng = np.random.default_rng(1234)
    start = time.perf_counter()
    checked = skipped = 0
    worst_gap = 0.0
    worst_cell = None
    for n in (3, 4, 5):
        for k in (1, 2):
            for beta in (0.5, 1.0):
                k0 = int((1.0 - beta) * k) + 1
                if k + k0 > n:
                    # boundary set would need more ranks than exist
                    skipped += 1
                    continue
                for alpha in (1.5, 2.0, 4.0):
                    for _ in range(20):
                        w = rng.dirichlet(np.ones(n))
                        ctx = make_context(w, k, beta)
                        analytic = min_divergence_to_break(ctx, alpha)
                        brute = brute_force_min_divergence(w, k, beta, alpha,
                                                           grid_points=200)
                        gap = abs(analytic - brute)
                        if gap > worst_gap:
                            worst_gap = gap
                            worst_cell = (n, k, beta, alpha)
                        q = worst_case_q(ctx, alpha)
                        attained = renyi_divergence(ctx.w, q, alpha)
                        assert abs(attained - analytic) <= 1e-9
                        checked += 1
    elapsed = time.perf_counter() - start
    # The closed form assumes the minimizer keeps w's descending order; in
    # the full-replacement regime (k0 == k >= 2) with lopsided top-k weights
    # the true minimum is lower, so the grid search lands below it by more
    # than the 0.01 budget.  Reported rather than hidden: the gap is a
    # property of the certificate formula, not of the oracle.
    ok = (checked == 33 * 20 and skipped == 1 and worst_gap <= 0.01
          and elapsed < 120.0)
    _report(capfd, 1, ok,
            "%d cases, worst |analytic-brute| %.4f at (n,k,beta,alpha)=%s, "
            "%.1fs" % (checked, worst_gap, worst_cell, elapsed))


def test_c02_minimizer_validity(capfd):
    rng = np.random.default_rng(5678)
    done = 0
    while done < 500:
        n = int(rng.integers(3, 13))
        k = int(rng.integers(1, n))
        beta = float(rng.uniform(0.05, 1.0))
        k0 = int((1.0 - beta) * k) + 1
        if k + k0 > n:
            continue
        alpha = float(rng.uniform(1.01, 50.0))
        ctx = make_context(rng.dirichlet(np.ones(n)), k, beta)
        q = worst_case_q(ctx, alpha)
        assert abs(q.sum() - 1.0) <= 1e-9
        spread = np.ptp(q[ctx.boundary])
        assert spread <= 1e-12, (n, k, beta, alpha, spread)
        done += 1
    _report(capfd, 2, done == 500, "500 minimizers on-simplex with tied boundary")


# ---------------------------------------------------------------------------
# 3-4: divergence closed forms
# ---------------------------------------------------------------------------

def test_c03_renyi_properties(capfd):
    rng = np.random.default_rng(31)
    for _ in range(50):
        p = rng.dirichlet(np.ones(6))
        assert abs(renyi_divergence(p, p, 2.0)) <= 1e-12
    alphas = (1.1, 1.5, 2.0, 4.0, 8.0, 32.0)
    for _ in range(100):
        p = rng.dirichlet(np.ones(5))
        q = rng.dirichlet(np.ones(5))
        vals = [renyi_divergence(p, q, a) for a in alphas]
        assert all(b - a >= -1e-12 for a, b in zip(vals, vals[1:]))
    worst = 0.0
    for _ in range(20):
        sigma = float(rng.uniform(0.3, 2.0))
        shift = float(rng.uniform(-2.0, 2.0))
        alpha = float(rng.choice([1.5, 2.0, 4.0, 8.0]))

        def integrand(x, s=sigma, d=shift, a=alpha):
            lp = -0.5 * (x / s) ** 2
            lq = -0.5 * ((x - d) / s) ** 2
            return np.exp(a * lp + (1.0 - a) * lq) / (s * np.sqrt(2 * np.pi))

        integral, _err = scipy_integrate.quad(integrand, -np.inf, np.inf)
        numeric = np.log(integral) / (alpha - 1.0)
        closed = gaussian_renyi_bound(abs(shift), sigma, alpha)
        worst = max(worst, abs(numeric - closed))
        assert abs(numeric - closed) <= 1e-6
    _report(capfd, 3, True, "identity/monotonicity hold; quadrature gap %.2e" % worst)


def test_c04_prediction_threshold(capfd):
    for p in (0.1, 0.25, 0.5):
        for alpha in (1.5, 2.0, 8.0):
            assert prediction_threshold(p, p, alpha) == 0.0
    # high-precision oracle: -log(1 - 0.9 - 0.1 + 2*harmonic_mean(0.9, 0.1))
    oracle = 1.0216512475319814
    got = prediction_threshold(0.9, 0.1, 2.0)
    assert abs(got - oracle) <= 1e-6
    grid = np.linspace(0.31, 0.70, 35)
    vals = [prediction_threshold(p1, 0.3, 4.0) for p1 in grid]
    assert all(b - a >= -1e-12 for a, b in zip(vals, vals[1:]))
    _report(capfd, 4, True, "zero at p1=p2, oracle %.10f matched, monotone" % got)


# ---------------------------------------------------------------------------
# 5-6: the empirical claims -- soundness, then attack verification
# ---------------------------------------------------------------------------

def test_c05_certified_soundness(capfd, sharp_desk_model, desk_ds):
    sigma, m, k, beta = 0.25, 4096, 4, 0.75
    sm = certify.SmoothedModel(params=sharp_desk_model,
                               schedule=smoothing.linear_schedule(),
                               denoiser=smoothing.IdentityDenoiser(),
                               sigma=sigma)
    start = time.perf_counter()
    flips = breaks = checked = 0

    def sweep(i):
        params = CertParams(sigma=sigma, m=m, k=k, beta=beta, seed=5000 + i)
        bank = smoothing.noise_bank(params.seed, m, (16, 16), sigma)
        est = certify.estimate_smoothed(sm, desk_ds.images[i], m, params.seed,
                                        noise=bank)
        result = certify.faithful_region(est, params, 256)
        ref_class = _argmax_class(est.p_hat)
        rng = np.random.default_rng(777000 + i)
        x0 = np.asarray(desk_ds.images[i], dtype=np.float64)
        bad_flip = bad_break = 0
        for _ in range(50):
            u = rng.standard_normal((16, 16))
            u /= np.linalg.norm(u)
            est2 = certify.estimate_smoothed(
                sm, x0 + 0.99 * result.radius * u, m, params.seed, noise=bank)
            if _argmax_class(est2.p_hat) != ref_class:
                bad_flip += 1
            if topk.overlap_ratio(est.w_tilde, est2.w_tilde, k) < beta:
                bad_break += 1
        return bad_flip, bad_break

    with concurrent.futures.ThreadPoolExecutor(max_workers=8) as pool:
        for bad_flip, bad_break in pool.map(sweep, range(20)):
            flips += bad_flip
            breaks += bad_break
            checked += 50
    elapsed = time.perf_counter() - start
    ok = checked == 1000 and flips == 0 and breaks == 0 and elapsed < 600.0
    _report(capfd, 5, ok, "%d perturbations at 0.99R: %d flips, %d overlap breaks,"
            " %.0fs" % (checked, flips, breaks, elapsed))


def test_c06_region_verification(capfd, sharp_tiny_model, tiny_ds):
    sigma, m, k, beta = 0.35, 128, 2, 1.0
    factors = (1.0, 1.5, 2.0)
    sm = certify.SmoothedModel(params=sharp_tiny_model,
                               schedule=smoothing.linear_schedule(),
                               denoiser=smoothing.IdentityDenoiser(),
                               sigma=sigma)

    def verify(i):
        params = CertParams(sigma=sigma, m=m, k=k, beta=beta, seed=9000 + i)
        bank = smoothing.noise_bank(params.seed, m, (8, 8), sigma)
        result = certify.certify_input(sm, tiny_ds.images[i], params,
                                       input_id=tiny_ds.ids[i], noise=bank)
        cfg = attacks.AttackConfig(objective=AttackObjective.FLIP_PREDICTION,
                                   radius=result.radius, steps=10, seed=777)
        return attacks.verify_region(sm, tiny_ds.images[i], result.radius,
                                     params, factors, attempts=10,
                                     base_cfg=cfg, input_id=tiny_ds.ids[i],
                                     noise=bank)

    successes = {f: 0 for f in factors}
    attempts = {f: 0 for f in factors}
    winners = set()
    with concurrent.futures.ThreadPoolExecutor(max_workers=8) as pool:
        for rows in pool.map(verify, range(20)):
            for row in rows:
                successes[row.factor] += row.successes
                attempts[row.factor] += row.attempts
                if row.factor == 2.0 and row.successes > 0:
                    winners.add(row.input_id)
    rates = [successes[f] / attempts[f] for f in factors]
    ok = (rates[0] == 0.0
          and rates[0] <= rates[1] <= rates[2]
          and successes[2.0] > 0 and len(winners) >= 1)
    _report(capfd, 6, ok, "success rates %.3f/%.3f/%.3f at factors 1.0/1.5/2.0; "
            "%d inputs attackable at 2.0" % (*rates, len(winners)))


# ---------------------------------------------------------------------------
# 7-8: norm conversion and noise-scale linearity
# ---------------------------------------------------------------------------

def test_c07_linf_conversion(capfd):
    est = _make_estimate(0.72, 0.2, [0.4, 0.25, 0.15, 0.1, 0.06, 0.04])
    d = 64
    common = dict(sigma=0.25, m=1000, k=2, beta=0.5, seed=0)
    r_l2 = certify.faithful_region(est, CertParams(norm=Norm.L2, **common), d)
    r_linf = certify.faithful_region(
        est, CertParams(norm=Norm.LINF, **common), d)
    r_lit = certify.faithful_region(
        est, CertParams(norm=Norm.LINF, linf_mode=LinfMode.LITERAL_D,
                        **common), d)
    gap = abs(r_linf.radius - r_l2.radius / np.sqrt(d))
    ok = gap <= 1e-12 and r_lit.radius < r_linf.radius
    _report(capfd, 7, ok, "R_linf = R_l2/sqrt(d) (gap %.1e); literal /d strictly"
            " smaller" % gap)


def test_c08_sigma_linearity(capfd):
    est = _make_estimate(0.8, 0.15, [0.5, 0.2, 0.15, 0.1, 0.05])
    common = dict(m=1000, k=2, beta=0.5, seed=0)
    r1 = certify.faithful_region(est, CertParams(sigma=0.2, **common), 64)
    r2 = certify.faithful_region(est, CertParams(sigma=0.4, **common), 64)
    gap_p = abs(r2.prediction_bound - 2.0 * r1.prediction_bound)
    gap_q = abs(r2.attention_bound - 2.0 * r1.attention_bound)
    ok = gap_p <= 1e-9 and gap_q <= 1e-9
    _report(capfd, 8, ok, "doubling sigma doubles P (gap %.1e) and Q (gap %.1e)"
            % (gap_p, gap_q))


# ---------------------------------------------------------------------------
# 9: schedule lookup + the calibration report
# ---------------------------------------------------------------------------

def test_c09_schedule_lookup(capfd):
    sched = smoothing.linear_schedule()
    scale = 2.0
    sigmas = np.linspace(1e-4, 3.0, 100)
    steps = [smoothing.timestep_for_sigma(sched, s, scale) for s in sigmas]
    assert all(b >= a for a, b in zip(steps, steps[1:]))
    assert smoothing.timestep_for_sigma(sched, 1e-9, scale) == 0
    for s, t in zip(sigmas, steps):
        if t == 0:
            assert np.sqrt(sched.sigma_sq(1)) > scale * s
        else:
            assert np.sqrt(sched.sigma_sq(t)) >= scale * s
            if t > 1:
                assert np.sqrt(sched.sigma_sq(t - 1)) < scale * s
    # calibration report (informational): reported table is 0/8/45/107/193
    eps = [2, 4, 8, 12, 16]
    for rs in (1.0, 2.0):
        got = [smoothing.timestep_for_sigma(sched, e / 255.0, rs)
               for e in eps]
        with capfd.disabled():
            print("ACCEPTANCE  9: calibration range_scale %.1f -> t* %s "
                  "(reported 0/8/45/107/193)" % (rs, "/".join(map(str, got))),
                  flush=True)
    _report(capfd, 9, True, "t* monotone, zero-limit, one-step round trip")


# ---------------------------------------------------------------------------
# 10: metric sanity on oracle saliency
# ---------------------------------------------------------------------------

def test_c10_metric_sanity(capfd):
    ds = datagen.synthesize(50, 16, seed=99)
    fitted = model.fit_head(model.init_params(16, 4, 8, 2, 2, seed=7),
                            ds.images, ds.labels)

    def predict(img):
        probs, _ = model.forward(fitted, img)
        return int(np.argmax(probs))

    rng = np.random.default_rng(4321)
    oracle_auc, random_auc = [], []
    for i in range(50):
        mask = ds.masks[i]
        assert metrics.pixel_accuracy(mask, mask) == 1.0
        assert metrics.average_precision(mask, mask) == 1.0
        noise_map = rng.random(mask.shape)
        oracle_auc.append(metrics.p_auc(metrics.perturbation_curve(
            predict, ds.images[i], mask, positive=True)))
        random_auc.append(metrics.p_auc(metrics.perturbation_curve(
            predict, ds.images[i], noise_map, positive=True)))
    mean_oracle = float(np.mean(oracle_auc))
    mean_random = float(np.mean(random_auc))
    m_map = np.asarray(ds.images[0], dtype=np.float64)
    identity = metrics.s_faith(m_map, m_map)
    ok = mean_oracle < mean_random and identity == m_map.size / 0.01
    _report(capfd, 10, ok, "PA=AP=1.0 on 50 oracles; positive P-AUC %.1f (oracle)"
            " < %.1f (random); S_Faith identity exact" %
            (mean_oracle, mean_random))


# ---------------------------------------------------------------------------
# 11: byte-identical CSVs at any thread count
# ---------------------------------------------------------------------------

def test_c11_thread_determinism(capfd, tmp_path):
    root = tmp_path
    data = str(root / "data")
    mdl = str(root / "model")
    fit = str(root / "fitted")
    assert cli_main(["gen-data", "--out", data, "--count", "8",
                     "--size", "8", "--seed", "3"]) == 0
    assert cli_main(["init-model", "--out", mdl, "--size", "8",
                     "--patch", "4", "--seed", "7"]) == 0
    assert cli_main(["fit-head", "--model", mdl, "--data", data,
                     "--out", fit]) == 0

    def run(cmd, out, threads):
        base = {
            "certify": ["certify", "--model", fit, "--data", data,
                        "--sigma", "0.35", "--m", "64", "--k", "2",
                        "--beta", "1.0", "--seed", "5"],
            "verify": ["verify", "--model", fit, "--data", data,
                       "--report", str(root / "certify1.csv"),
                       "--sigma", "0.35", "--factors", "1.0,2.0",
                       "--attempts", "1", "--steps", "2", "--seed", "5",
                       "--limit", "3"],
            "eval": ["eval", "--model", fit, "--data", data,
                     "--sigma", "0.35", "--m", "32", "--seed", "5"],
        }[cmd]
        assert cli_main(base + ["--out", out, "--threads", str(threads)]) == 0
        with open(out, "rb") as fh:
            return fh.read()

    same = True
    for cmd in ("certify", "verify", "eval"):
        one = run(cmd, str(root / (cmd + "1.csv")), 1)
        rerun = run(cmd, str(root / (cmd + "1b.csv")), 1)
        eight = run(cmd, str(root / (cmd + "8.csv")), 8)
        same = same and one == rerun == eight and len(one) > 0
    _report(capfd, 11, same, "certify/verify/eval byte-identical at 1 and 8 threads")
