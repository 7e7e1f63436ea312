"""Gaussian smoothing through a denoising step (one-shot diffusion style).

The smoothed model is: add Gaussian pixel noise, rescale to the diffusion
variable whose schedule step matches the noise level, run a denoiser once,
and feed the result to the deterministic base model.  Certification only
cares that x -> x + noise is the first step (the divergence bound applies
to the noisy input; everything after is post-processing), so denoisers are
pluggable and may be as simple as "undo the rescale".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import require


@dataclass(frozen=True)
class NoiseSchedule:
    """A diffusion beta schedule and its cumulative signal coefficients.

    ``alpha_bar[t-1]`` is the signal fraction after step t (one-indexed
    steps, as is conventional); it decreases strictly from just under 1
    toward 0 as t grows.
    """

    betas: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        require(self.betas.ndim == 1 and self.betas.size >= 2,
                "schedule needs at least 2 steps")
        require(bool(np.all((self.betas > 0.0) & (self.betas < 1.0))),
                "betas must lie in (0, 1)")
        require(bool(np.all(np.diff(self.alpha_bar) < 0.0)),
                "alpha_bar must be strictly decreasing")
        require(bool(np.all((self.alpha_bar > 0.0) & (self.alpha_bar < 1.0))),
                "alpha_bar must lie in (0, 1)")

    @property
    def steps(self) -> int:
        return self.betas.size

    def sigma_sq(self, t: int) -> float:
        """Noise-to-signal variance ratio ``(1 - alpha_bar_t) / alpha_bar_t``."""
        require(1 <= t <= self.steps, "timestep out of range")
        ab = float(self.alpha_bar[t - 1])
        return (1.0 - ab) / ab


def linear_schedule(beta_start: float = 1e-4, beta_end: float = 0.02,
                    steps: int = 1000) -> NoiseSchedule:
    """The standard linear beta schedule (defaults: 1e-4 to 0.02 over 1000)."""
    require(0.0 < beta_start < beta_end < 1.0,
            "need 0 < beta_start < beta_end < 1")
    require(steps >= 2, "need at least 2 steps")
    betas = np.linspace(beta_start, beta_end, steps)
    alpha_bar = np.cumprod(1.0 - betas)
    return NoiseSchedule(betas=betas, alpha_bar=alpha_bar)


def timestep_for_sigma(schedule: NoiseSchedule, sigma: float,
                       range_scale: float = 2.0) -> int:
    """Smallest schedule step whose noise level covers ``sigma``.

    ``sigma`` is the pixel-domain noise scale; ``range_scale`` converts it
    into the denoiser's working range (models trained on [-1, 1] see twice
    the amplitude of [0, 1] pixels, hence the default 2).  Returns 0 when
    even the first step is noisier than needed -- callers then skip the
    rescale-and-denoise stage entirely.

    :raises ValueError: ``sigma exceeds schedule`` when no step is noisy
        enough.
    """
    require(sigma > 0.0, "sigma must be positive")
    require(range_scale > 0.0, "range_scale must be positive")
    target = (sigma * range_scale) ** 2
    ratios = (1.0 - schedule.alpha_bar) / schedule.alpha_bar
    if target < ratios[0]:
        return 0
    hits = np.nonzero(ratios >= target)[0]
    if hits.size == 0:
        raise ValueError("sigma exceeds schedule")
    return int(hits[0]) + 1


class Denoiser:
    """Interface: map the rescaled noisy variable at step t back to an image."""

    def denoise(self, x_t: np.ndarray, t: int,
                schedule: NoiseSchedule) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class IdentityDenoiser(Denoiser):
    """Undo the signal rescale and pass the noise through untouched.

    With this denoiser the whole pipeline reduces to classic Gaussian
    randomized smoothing, which makes it the right default for tests that
    exercise the certification math rather than denoising quality.
    """

    def denoise(self, x_t, t, schedule):
        ab = float(schedule.alpha_bar[t - 1])
        return x_t / math.sqrt(ab)


@dataclass(frozen=True)
class ShrinkageDenoiser(Denoiser):
    """Linear shrinkage toward a prior mean, weighted by the noise level.

    Treats the unscaled observation as prior + noise with variance
    ``sigma_t^2 = (1 - alpha_bar_t)/alpha_bar_t`` and returns the posterior
    mean of a Gaussian prior ``N(prior_mean, prior_var)``: observation
    weight ``prior_var / (prior_var + sigma_t^2)``.  A crude stand-in for a
    learned denoiser, but enough to demonstrate that denoising changes the
    smoothed model while certificates remain valid.
    """

    prior_mean: float = 0.5
    prior_var: float = 0.25

    def __post_init__(self):
        require(self.prior_var > 0.0, "prior_var must be positive")

    def denoise(self, x_t, t, schedule):
        ab = float(schedule.alpha_bar[t - 1])
        obs = x_t / math.sqrt(ab)
        noise_var = (1.0 - ab) / ab
        weight = self.prior_var / (self.prior_var + noise_var)
        return self.prior_mean + weight * (obs - self.prior_mean)


_DENOISERS = {
    "identity": IdentityDenoiser,
    "shrinkage": ShrinkageDenoiser,
}


def make_denoiser(name: str, **kwargs) -> Denoiser:
    """Construct a denoiser by name ('identity' or 'shrinkage')."""
    try:
        cls = _DENOISERS[name]
    except KeyError:
        raise ValueError(f"unknown denoiser '{name}'") from None
    return cls(**kwargs)


def noise_for_draw(seed: int, draw: int, shape, sigma: float) -> np.ndarray:
    """The Gaussian noise of draw ``draw`` (1-based) under a base seed.

    Each draw owns an independent counter-based stream keyed by
    ``seed XOR draw``, so draw i's noise never depends on how many draws
    surround it -- estimates can be extended or parallelized without
    changing earlier outcomes.
    """
    require(draw >= 1, "draw index is 1-based")
    key = (int(seed) ^ int(draw)) & ((1 << 64) - 1)
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.standard_normal(shape) * sigma


def noise_bank(seed: int, m: int, shape, sigma: float) -> np.ndarray:
    """Stack the noises of draws 1..m into one (m, *shape) array."""
    require(m >= 1, "need at least one draw")
    out = np.empty((m,) + tuple(shape))
    for i in range(m):
        out[i] = noise_for_draw(seed, i + 1, shape, sigma)
    return out


def apply_diffusion(noisy: np.ndarray, t_star: int, schedule: NoiseSchedule,
                    denoiser: Denoiser) -> np.ndarray:
    """Rescale an already-noised batch to step ``t_star`` and denoise once.

    ``t_star = 0`` means the noise is below the schedule's first step; the
    input passes through unchanged.
    """
    if t_star == 0:
        return noisy
    ab = float(schedule.alpha_bar[t_star - 1])
    return denoiser.denoise(math.sqrt(ab) * noisy, t_star, schedule)


def dds_transform(x: np.ndarray, sigma: float, schedule: NoiseSchedule,
                  denoiser: Denoiser, seed: int,
                  range_scale: float = 2.0):
    """One smoothing draw: noise, rescale to the matched step, denoise.

    :return: ``(transformed, t_star)`` where ``t_star`` is the schedule
        step used (0 if the noise level sits below the schedule).
    """
    key = int(seed) & ((1 << 64) - 1)
    gen = np.random.Generator(np.random.Philox(key=key))
    noisy = x + gen.standard_normal(x.shape) * sigma
    t_star = timestep_for_sigma(schedule, sigma, range_scale)
    return apply_diffusion(noisy, t_star, schedule, denoiser), t_star


def fuse_maps(maps, drop_fraction: float = 0.1) -> np.ndarray:
    """Combine saliency maps: drop each map's weakest pixels, max, rescale.

    Per map, pixels strictly below the ``drop_fraction`` quantile are
    zeroed (de-noising the fusion); the element-wise maximum over maps is
    then min-max rescaled to [0, 1].  A constant fusion comes back as all
    zeros rather than dividing by zero.
    """
    arr = np.asarray(maps, dtype=np.float64)
    require(arr.ndim >= 2, "need at least one 2-D map")
    if arr.ndim == 2:
        arr = arr[None]
    require(0.0 <= drop_fraction < 1.0, "drop_fraction must lie in [0, 1)")
    cleaned = np.empty_like(arr)
    for j in range(arr.shape[0]):
        cut = np.quantile(arr[j], drop_fraction)
        cleaned[j] = np.where(arr[j] < cut, 0.0, arr[j])
    fused = cleaned.max(axis=0)
    lo = float(fused.min())
    hi = float(fused.max())
    if hi <= lo:
        return np.zeros_like(fused)
    return (fused - lo) / (hi - lo)
