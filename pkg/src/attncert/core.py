"""Shared domain types, enums, validation helpers and simplex utilities.

Everything downstream (divergence bounds, top-k certificates, the smoothing
pipeline, attacks) speaks in terms of the small vocabulary defined here:
probability simplex vectors, certification parameter bundles, and result
records.  Numeric policy: tensors are stored on disk in 32-bit floats, all
in-memory arithmetic is 64-bit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class AttncertError(Exception):
    """Base class for all package-specific errors."""


class DataError(AttncertError):
    """Malformed or missing input data (files, formats, configs)."""


class InvariantError(AttncertError):
    """An internal invariant was violated; indicates a bug, not bad input."""


class Norm(enum.Enum):
    """Perturbation norm in which a faithful radius is expressed."""

    L2 = "l2"
    LINF = "linf"


class ConfidenceMode(enum.Enum):
    """How Monte-Carlo class frequencies enter the prediction bound.

    PLUGIN uses the raw frequencies.  BINOMIAL_CI replaces the top
    frequency by its lower exact-binomial confidence limit and the
    runner-up by its upper limit before the radius is computed.
    """

    PLUGIN = "plugin"
    BINOMIAL_CI = "binomial_ci"


class LinfMode(enum.Enum):
    """Conversion rule from an L2 radius to an L-infinity radius.

    SQRT_D divides by sqrt(d) (the norm-equivalence constant, the default);
    LITERAL_D divides by d, a deliberately looser reading kept behind a flag.
    """

    SQRT_D = "sqrt_d"
    LITERAL_D = "literal_d"


class AttentionMode(enum.Enum):
    """Which attention summary row is read out of the toy transformer."""

    CLS_LAST = "cls_last"
    CLS_ROLLOUT = "cls_rollout"


class AttackObjective(enum.Enum):
    """What a perturbation attack tries to achieve."""

    FLIP_PREDICTION = "flip_prediction"
    BREAK_TOPK = "break_topk"


def require(condition: bool, message: str, exc: type = ValueError) -> None:
    """Raise ``exc(message)`` unless ``condition`` holds."""
    if not condition:
        raise exc(message)


def as_float_array(x, name: str = "array") -> np.ndarray:
    """Coerce ``x`` to a float64 ndarray, rejecting non-numeric input."""
    arr = np.asarray(x, dtype=np.float64)
    require(np.issubdtype(arr.dtype, np.floating), f"{name} must be numeric")
    return arr


def check_finite(arr: np.ndarray, name: str = "array") -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")


def normalize_simplex(v, clip_negative: bool = True) -> np.ndarray:
    """Project a nonnegative vector onto the probability simplex by rescaling.

    Small negative entries (numerical noise from averaging or file
    round-trips) are clamped to zero before normalizing.  A vector whose
    clamped sum is zero cannot be normalized.

    :param v: array-like of reals.
    :param clip_negative: clamp negative entries to zero first (default).
    :return: float64 vector summing to 1 with nonnegative entries.
    :raises ValueError: if the clamped vector sums to zero.
    """
    arr = as_float_array(v, "vector")
    require(arr.ndim == 1, "expected a 1-D vector")
    check_finite(arr, "vector")
    if clip_negative:
        arr = np.maximum(arr, 0.0)
    total = float(arr.sum())
    if total <= 0.0:
        raise ValueError("cannot normalize zero vector")
    return arr / total


def check_simplex(v: np.ndarray, atol: float = 1e-9, name: str = "vector") -> None:
    """Validate that ``v`` lies on the probability simplex (within ``atol``)."""
    require(v.ndim == 1, f"{name} must be 1-D")
    if np.any(v < -atol):
        raise ValueError(f"{name} has negative entries")
    if abs(float(v.sum()) - 1.0) > atol:
        raise ValueError(f"{name} does not sum to 1")


def default_alpha_grid(size: int = 64, lo: float = 1e-3, hi: float = 499.0) -> np.ndarray:
    """Log-spaced Renyi orders ``1 + logspace(lo, hi)`` used for the sup search.

    The sup over orders of the certified-radius objective is taken over a
    finite grid and then locally refined; this grid covers (1, 500] densely
    near 1 where the objective usually peaks for small divergences.
    """
    require(size >= 2, "alpha grid needs at least 2 points")
    return 1.0 + np.logspace(np.log10(lo), np.log10(hi), size)


@dataclass(frozen=True)
class CertParams:
    """Knobs for one certification run.

    :param sigma: smoothing noise scale (pixel units).
    :param m: Monte-Carlo sample count.
    :param k: attention top-k size.
    :param beta: required overlap fraction of the top-k sets, in (0, 1].
    :param alpha_grid: Renyi orders to scan; ``None`` selects the default grid.
    :param norm: norm of the certified radius (L2 or LINF).
    :param linf_mode: L2-to-Linf conversion rule (see :class:`LinfMode`).
    :param confidence_mode: PLUGIN frequencies or exact-binomial limits.
    :param ci_level: two-sided confidence level for BINOMIAL_CI.
    :param refine_iters: golden-section refinement rounds after the grid scan.
    :param seed: base seed; draw ``i`` of the noise bank uses ``seed XOR i``.
    """

    sigma: float
    m: int
    k: int
    beta: float
    alpha_grid: Optional[np.ndarray] = None
    norm: Norm = Norm.L2
    linf_mode: LinfMode = LinfMode.SQRT_D
    confidence_mode: ConfidenceMode = ConfidenceMode.PLUGIN
    ci_level: float = 0.999
    refine_iters: int = 3
    seed: int = 0

    def __post_init__(self):
        require(self.sigma > 0.0, "sigma must be positive")
        require(self.m >= 1, "m must be at least 1")
        require(self.k >= 1, "k must be at least 1")
        require(0.0 < self.beta <= 1.0, "beta must lie in (0, 1]")
        require(self.refine_iters >= 0, "refine_iters must be nonnegative")
        require(0.0 < self.ci_level < 1.0, "ci_level must lie in (0, 1)")
        if self.alpha_grid is not None:
            grid = as_float_array(self.alpha_grid, "alpha_grid")
            require(grid.ndim == 1 and grid.size >= 1, "alpha_grid must be 1-D")
            require(bool(np.all(grid > 1.0)), "alpha orders must exceed 1")
            object.__setattr__(self, "alpha_grid", grid)

    def grid(self) -> np.ndarray:
        return self.alpha_grid if self.alpha_grid is not None else default_alpha_grid()


@dataclass(frozen=True)
class AlphaSweepResult:
    """Outcome of maximizing a radius objective over Renyi orders.

    ``samples`` records every (alpha, value) pair evaluated -- the grid scan
    in grid order followed by refinement points in evaluation order -- so a
    caller can audit or plot the sweep.
    """

    best_alpha: float
    best_value: float
    samples: tuple  # of (alpha, value) pairs


@dataclass(frozen=True)
class SmoothedEstimate:
    """Monte-Carlo estimate of the smoothed classifier at one input.

    :param p_hat: class frequency vector (each entry a multiple of 1/m).
    :param p_soft: mean softmax probabilities over draws (smooth surrogate).
    :param w_tilde: mean attention vector over draws, renormalized.
    :param counts: integer argmax counts per class.
    :param draw_classes: per-draw argmax class, in draw order (diagnostic;
        lets callers confirm that extending m reuses earlier draws).
    :param m: number of draws.
    :param seed: base seed of the noise bank.
    """

    p_hat: np.ndarray
    p_soft: np.ndarray
    w_tilde: np.ndarray
    counts: np.ndarray
    draw_classes: np.ndarray
    m: int
    seed: int


@dataclass(frozen=True)
class CertificationResult:
    """A faithful-region certificate for one input."""

    input_id: str
    predicted_class: int
    p1: float
    p2: float
    prediction_bound: float
    attention_bound: float
    radius: float
    best_alpha_prediction: float
    best_alpha_attention: float
    argmax_certified: bool
    norm: Norm
    sigma: float
    m: int
    k: int
    beta: float
    w_tilde: np.ndarray = field(repr=False, default=None)
    sweep_prediction: Optional[AlphaSweepResult] = field(repr=False, default=None)
    sweep_attention: Optional[AlphaSweepResult] = field(repr=False, default=None)


def format_float(x: float) -> str:
    """Shortest round-trip decimal form, used for deterministic CSV output."""
    return repr(float(x))


def derive_seed(*parts: int) -> int:
    """Deterministically mix integer parts into a 64-bit seed.

    Used to give each input in a batch its own noise-bank seed from one
    user-facing base seed.  Stable across platforms and process counts.
    """
    mask = 0xFFFFFFFFFFFFFFFF
    state = 0x9E3779B97F4A7C15
    for p in parts:
        x = int(p) & mask
        state ^= (x + 0x9E3779B97F4A7C15 + ((state << 6) & mask) + (state >> 2)) & mask
    return state


def seeded_rng(*parts: int) -> np.random.Generator:
    """A PCG64 generator keyed by the mixed parts (see :func:`derive_seed`)."""
    return np.random.default_rng(derive_seed(*parts))


def topk_indices(values: Sequence[float], k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries, ties broken by smaller index.

    The deterministic tie rule matters: certificates compare top-k sets
    computed on different machines and under perturbation, so the selection
    must not depend on sort stability quirks.
    """
    arr = as_float_array(values, "values")
    require(arr.ndim == 1, "values must be 1-D")
    n = arr.size
    require(1 <= k <= n, "k out of range")
    # Sort by (-value, index): descending value, ascending index on ties.
    order = np.lexsort((np.arange(n), -arr))
    return np.sort(order[:k])
