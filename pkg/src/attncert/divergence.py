"""Renyi divergences and the prediction-stability threshold.

The certification argument runs through one scalar quantity: the Renyi
divergence of order alpha between the smoothed output distributions at two
nearby inputs.  For Gaussian smoothing that divergence is bounded by a
closed form in the perturbation norm, and a prediction flip requires the
divergence to exceed a threshold depending only on the top two class
probabilities.  Everything here is evaluated in log-space so that orders up
to several hundred remain finite.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .core import AlphaSweepResult, as_float_array, check_simplex, require

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def renyi_divergence(p, q, alpha: float) -> float:
    """Renyi divergence ``D_alpha(P || Q)`` between discrete distributions.

    Computed as ``log(sum_i p_i^alpha * q_i^(1-alpha)) / (alpha - 1)`` with
    the usual conventions: indices with ``p_i = 0`` contribute nothing, and
    any index with ``p_i > 0`` but ``q_i = 0`` makes the divergence infinite.

    :param p: probability vector.
    :param q: probability vector of the same length.
    :param alpha: order, strictly greater than 1.
    :return: nonnegative divergence in nats (possibly ``inf``).
    """
    require(alpha > 1.0, "alpha must exceed 1")
    pa = as_float_array(p, "p")
    qa = as_float_array(q, "q")
    require(pa.shape == qa.shape, "p and q must have the same length")
    check_simplex(pa, atol=1e-6, name="p")
    check_simplex(qa, atol=1e-6, name="q")
    support = pa > 0.0
    if np.any(qa[support] == 0.0):
        return math.inf
    logp = np.log(pa[support])
    logq = np.log(qa[support])
    log_sum = logsumexp(alpha * logp + (1.0 - alpha) * logq)
    # Clamp tiny negative values caused by rounding when p == q.
    return max(float(log_sum) / (alpha - 1.0), 0.0)


def gaussian_renyi_bound(shift_norm: float, sigma: float, alpha: float) -> float:
    """Divergence between two isotropic Gaussians displaced by ``shift_norm``.

    For ``N(x, sigma^2 I)`` versus ``N(x', sigma^2 I)`` the Renyi divergence
    of order alpha equals ``alpha * ||x - x'||^2 / (2 sigma^2)`` exactly; by
    the data-processing inequality the same value bounds the divergence of
    any (measurable) function of the noisy input, which is what lets a bound
    on input shift control the smoothed model's output distributions.
    """
    require(alpha > 1.0, "alpha must exceed 1")
    require(sigma > 0.0, "sigma must be positive")
    require(shift_norm >= 0.0, "shift norm must be nonnegative")
    return alpha * shift_norm * shift_norm / (2.0 * sigma * sigma)


def prediction_threshold(p1: float, p2: float, alpha: float) -> float:
    """Largest divergence that still forces the argmax class to stay on top.

    ``p1`` and ``p2`` are the probabilities of the top and runner-up classes
    of the smoothed model at the anchor input.  If the divergence between
    the output distributions at the anchor and at a perturbed input stays
    below this threshold, the perturbed argmax cannot change.

    The closed form is ``-log(1 - p1 - p2 + 2 * M)`` where ``M`` is the
    power mean of exponent ``1 - alpha`` of ``p1`` and ``p2``; the mean is
    evaluated in log-space so very large orders do not overflow.  Limits:
    ``p2 = 0`` gives ``-log(1 - p1)`` and ``p1 = 1`` gives ``inf``.

    :raises ValueError: unless ``0 <= p2 <= p1 <= 1`` and ``p1 + p2 <= 1``.
    """
    require(alpha > 1.0, "alpha must exceed 1")
    require(0.0 <= p2 <= p1 <= 1.0, "need 0 <= p2 <= p1 <= 1")
    require(p1 + p2 <= 1.0 + 1e-12, "p1 + p2 must not exceed 1")
    if p1 == 1.0:
        return math.inf
    if p2 == 0.0:
        return -math.log1p(-p1)
    if p1 == p2:
        return 0.0
    one_minus = 1.0 - alpha
    log_mean = logsumexp([one_minus * math.log(p1), one_minus * math.log(p2)],
                         b=[0.5, 0.5])
    mean = math.exp(log_mean / one_minus)
    arg = 1.0 - p1 - p2 + 2.0 * mean
    if arg <= 0.0:  # only reachable through rounding at extreme inputs
        return math.inf
    return max(-math.log(arg), 0.0)


def radius_from_divergence(value: float, sigma: float, alpha: float) -> float:
    """Invert the Gaussian bound: largest L2 shift with divergence <= value.

    Written as ``sigma * sqrt(2 * value / alpha)`` so the result is exactly
    linear in sigma (floating-point included), a property the calibration
    tests rely on.
    """
    if value <= 0.0:
        return 0.0
    return sigma * math.sqrt(2.0 * value / alpha)


def sup_over_alpha(objective: Callable[[float], float],
                   grid: Sequence[float],
                   refine_iters: int = 3) -> AlphaSweepResult:
    """Maximize ``objective(alpha)`` over a grid plus local refinement.

    The objective is evaluated at every grid point (in grid order), then a
    golden-section search refines inside the bracket formed by the grid
    argmax and its immediate neighbours.  ``refine_iters`` counts the
    shrink steps; each costs one evaluation after the two that initialize
    the bracket.  NaN evaluations are recorded in ``samples`` but never win.

    :raises ValueError: if the objective is NaN at every grid point.
    """
    alphas = as_float_array(list(grid), "alpha grid")
    require(alphas.size >= 1, "alpha grid is empty")
    require(bool(np.all(alphas > 1.0)), "alpha orders must exceed 1")
    require(refine_iters >= 0, "refine_iters must be nonnegative")

    samples = []
    for a in alphas:
        samples.append((float(a), float(objective(float(a)))))
    values = np.array([v for _, v in samples])
    if np.all(np.isnan(values)):
        raise ValueError("objective is NaN over the entire alpha grid")
    best_idx = int(np.nanargmax(values))

    if refine_iters > 0 and alphas.size >= 2:
        lo = float(alphas[max(best_idx - 1, 0)])
        hi = float(alphas[min(best_idx + 1, alphas.size - 1)])
        if hi > lo:
            x1 = hi - _INVPHI * (hi - lo)
            x2 = lo + _INVPHI * (hi - lo)
            f1 = float(objective(x1))
            f2 = float(objective(x2))
            samples.append((x1, f1))
            samples.append((x2, f2))
            for _ in range(refine_iters - 1):
                g1 = -math.inf if math.isnan(f1) else f1
                g2 = -math.inf if math.isnan(f2) else f2
                if g1 >= g2:
                    hi, x2, f2 = x2, x1, f1
                    x1 = hi - _INVPHI * (hi - lo)
                    f1 = float(objective(x1))
                    samples.append((x1, f1))
                else:
                    lo, x1, f1 = x1, x2, f2
                    x2 = lo + _INVPHI * (hi - lo)
                    f2 = float(objective(x2))
                    samples.append((x2, f2))

    best_alpha, best_value = max(
        ((a, v) for a, v in samples if not math.isnan(v)),
        key=lambda av: (av[1], -av[0]),
    )
    return AlphaSweepResult(best_alpha=best_alpha, best_value=best_value,
                            samples=tuple(samples))
