"""Projected gradient attacks against the smoothed model, without autograd.

The base model is a black box, so gradients come from central finite
differences; every probe point is evaluated under the same noise bank as
the certification estimate (common random numbers), which makes the whole
attack a deterministic function of its seed.  Attacks serve as empirical
verification: inside the certified radius they must always fail, and their
success rate as the radius is inflated past the certificate measures how
tight the bound is.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import certify, smoothing, topk
from .core import (AttackObjective, CertParams, Norm, derive_seed, require,
                   seeded_rng)

# Cap on elements of one forward batch; keeps FD probing memory-bounded.
_CHUNK_ELEMENTS = 8_000_000


@dataclass(frozen=True)
class AttackConfig:
    """Parameters of one projected-gradient attack.

    :param objective: flip the smoothed argmax, or break the top-k overlap.
    :param radius: perturbation budget (ball radius around the input).
    :param norm: ball norm, L2 or LINF.
    :param steps: gradient iterations.
    :param step_size: per-step length; ``None`` selects ``2.5*radius/steps``
        (covers the ball diameter with slack, the usual heuristic).
    :param restarts: independent starts (restart 0 begins at the input
        unless ``random_start``; later restarts begin at random ball points).
    :param fd_epsilon: central-difference half-width.
    :param seed: seed for the restart initializations.
    :param box_min,box_max: valid pixel range; iterates stay inside.
    """

    objective: AttackObjective
    radius: float
    norm: Norm = Norm.L2
    steps: int = 10
    step_size: Optional[float] = None
    restarts: int = 1
    fd_epsilon: float = 1e-3
    seed: int = 0
    box_min: float = 0.0
    box_max: float = 1.0
    random_start: bool = False

    def __post_init__(self):
        require(self.radius >= 0.0, "radius must be nonnegative")
        require(self.steps >= 1, "steps must be positive")
        require(self.restarts >= 1, "restarts must be positive")
        require(self.fd_epsilon > 0.0, "fd_epsilon must be positive")
        require(self.box_max > self.box_min, "empty pixel box")

    def effective_step(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.radius / self.steps


@dataclass(frozen=True)
class AttackResult:
    """Best iterate per restart plus the overall winner."""

    best_x: np.ndarray
    best_loss: float
    restart_points: tuple  # of (x, loss) per restart


def _project(x: np.ndarray, x0: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Project onto the ball around ``x0`` intersected with the pixel box.

    Ball first, then box: clipping toward the box never moves a coordinate
    away from ``x0`` (which itself lies in the box), so the ball constraint
    survives the second step.
    """
    delta = x - x0
    if cfg.norm is Norm.L2:
        nrm = float(np.linalg.norm(delta))
        if nrm > cfg.radius and nrm > 0.0:
            delta = delta * (cfg.radius / nrm)
    else:
        delta = np.clip(delta, -cfg.radius, cfg.radius)
    return np.clip(x0 + delta, cfg.box_min, cfg.box_max)


def _random_ball_point(rng: np.random.Generator, x0: np.ndarray,
                       cfg: AttackConfig) -> np.ndarray:
    if cfg.norm is Norm.L2:
        u = rng.standard_normal(x0.shape)
        nrm = float(np.linalg.norm(u))
        if nrm == 0.0:
            return x0.copy()
        r = cfg.radius * rng.uniform() ** (1.0 / x0.size)
        return x0 + u * (r / nrm)
    return x0 + rng.uniform(-cfg.radius, cfg.radius, size=x0.shape)


def fd_gradient(loss_batch: Callable, x: np.ndarray,
                eps: float) -> np.ndarray:
    """Central-difference gradient of a batched scalar loss."""
    d = x.size
    flat = x.ravel()
    pts = np.repeat(flat[None, :], 2 * d, axis=0)
    idx = np.arange(d)
    pts[idx, idx] += eps
    pts[d + idx, idx] -= eps
    losses = np.asarray(loss_batch(pts.reshape((2 * d,) + x.shape)))
    return ((losses[:d] - losses[d:]) / (2.0 * eps)).reshape(x.shape)


def pgd_attack(loss_batch: Callable, x0: np.ndarray,
               cfg: AttackConfig) -> AttackResult:
    """Maximize ``loss_batch`` over the perturbation ball by projected ascent.

    ``loss_batch`` maps a (B, ...) stack of candidate inputs to (B,)
    losses; larger means closer to the attack goal.  The best iterate of
    each restart is kept (gradient ascent on a noisy surrogate is not
    monotone, so the last iterate would throw information away).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    states = []
    for r in range(cfg.restarts):
        if r == 0 and not cfg.random_start:
            x = x0.copy()
        else:
            rng = seeded_rng(cfg.seed, r)
            x = _project(_random_ball_point(rng, x0, cfg), x0, cfg)
        best_x = x.copy()
        best_loss = float(np.asarray(loss_batch(x[None]))[0])
        if cfg.radius > 0.0:
            step = cfg.effective_step()
            for _ in range(cfg.steps):
                g = fd_gradient(loss_batch, x, cfg.fd_epsilon)
                if cfg.norm is Norm.L2:
                    nrm = float(np.linalg.norm(g))
                    if nrm == 0.0:
                        break
                    x = x + step * g / nrm
                else:
                    x = x + step * np.sign(g)
                x = _project(x, x0, cfg)
                loss = float(np.asarray(loss_batch(x[None]))[0])
                if loss > best_loss:
                    best_loss = loss
                    best_x = x.copy()
        states.append((best_x, best_loss))
    winner = max(range(len(states)), key=lambda i: (states[i][1], -i))
    return AttackResult(best_x=states[winner][0],
                        best_loss=states[winner][1],
                        restart_points=tuple(states))


def make_loss(smoothed: "certify.SmoothedModel", noise: np.ndarray,
              objective: AttackObjective, reference) -> Callable:
    """Smooth surrogate loss for an objective, under a fixed noise bank.

    FLIP_PREDICTION uses the mean softmax margin (best rival minus
    reference class): the hard argmax frequencies are piecewise constant
    in the input, so finite differences would see zero gradient almost
    everywhere.  BREAK_TOPK uses the attention mass outside the reference
    top-k set.  ``reference`` is the class index, or the top-k index array.

    Evaluation order over draws is fixed, so losses are reproducible to
    the bit regardless of batch splitting.
    """
    m = noise.shape[0]
    sample_shape = noise.shape[1:]

    def loss_batch(points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        B = points.shape[0]
        chunk = max(1, _CHUNK_ELEMENTS // (m * int(np.prod(sample_shape))))
        out = np.empty(B)
        for s in range(0, B, chunk):
            block = points[s:s + chunk]
            noisy = block[:, None] + noise[None]
            flat = noisy.reshape((-1,) + sample_shape)
            probs, attn = smoothed.outputs_for_noisy(flat)
            if objective is AttackObjective.FLIP_PREDICTION:
                ps = probs.reshape(block.shape[0], m, -1).mean(axis=1)
                ref = ps[:, int(reference)]
                rival = np.delete(ps, int(reference), axis=1).max(axis=1)
                out[s:s + chunk] = rival - ref
            else:
                wm = attn.reshape(block.shape[0], m, -1).mean(axis=1)
                wm = wm / wm.sum(axis=1, keepdims=True)
                inside = wm[:, np.asarray(reference, dtype=int)].sum(axis=1)
                out[s:s + chunk] = 1.0 - inside
        return out

    return loss_batch


def attack_succeeded(smoothed: "certify.SmoothedModel", x_adv: np.ndarray,
                     objective: AttackObjective, reference,
                     params: CertParams, noise: np.ndarray) -> bool:
    """Hard success check, re-estimating with the certification seeds."""
    est = certify.estimate_smoothed(smoothed, x_adv, params.m, params.seed,
                                    noise=noise)
    if objective is AttackObjective.FLIP_PREDICTION:
        order = np.lexsort((np.arange(est.p_hat.size), -est.p_hat))
        return int(order[0]) != int(reference)
    ref_set = np.asarray(reference, dtype=int)
    cand = topk.topk_set(est.w_tilde, params.k)
    overlap = len(set(ref_set.tolist()) & set(cand.tolist())) / params.k
    return overlap < params.beta


@dataclass(frozen=True)
class VerifyRow:
    """Attack outcome tally for one (input, factor, objective) cell."""

    input_id: str
    factor: float
    objective: AttackObjective
    attempts: int
    successes: int


def verify_region(smoothed: "certify.SmoothedModel", x: np.ndarray,
                  radius: float, params: CertParams,
                  factors: Sequence[float], attempts: int,
                  base_cfg: AttackConfig, input_id: str = "",
                  noise: np.ndarray = None):
    """Attack one input at each inflation factor of its certified radius.

    For each objective, ``attempts`` independently-seeded attacks run per
    factor (ascending).  An attempt that succeeded at a smaller factor is
    carried forward without re-running: its adversarial point lies inside
    every larger ball, so success there is a fact, not an estimate -- this
    also makes the success count monotone in the factor by construction.

    :return: list of :class:`VerifyRow`, factors ascending, objectives in
        (FLIP_PREDICTION, BREAK_TOPK) order.
    """
    require(attempts >= 1, "attempts must be positive")
    x = np.asarray(x, dtype=np.float64)
    if noise is None:
        noise = smoothing.noise_bank(params.seed, params.m, x.shape,
                                     smoothed.sigma)
    est0 = certify.estimate_smoothed(smoothed, x, params.m, params.seed,
                                     noise=noise)
    order = np.lexsort((np.arange(est0.p_hat.size), -est0.p_hat))
    ref_class = int(order[0])
    ref_topk = topk.topk_set(est0.w_tilde, params.k)

    rows = []
    for objective in (AttackObjective.FLIP_PREDICTION,
                      AttackObjective.BREAK_TOPK):
        reference = ref_class \
            if objective is AttackObjective.FLIP_PREDICTION else ref_topk
        loss_for = make_loss(smoothed, noise, objective, reference)
        succeeded = [False] * attempts
        for factor in sorted(float(f) for f in factors):
            rho = factor * radius
            for a in range(attempts):
                if succeeded[a] or rho <= 0.0:
                    continue
                cfg = replace(
                    base_cfg, objective=objective, radius=rho,
                    restarts=1, random_start=(a > 0),
                    seed=derive_seed(base_cfg.seed, _objective_tag(objective),
                                     a))
                result = pgd_attack(loss_for, x, cfg)
                if attack_succeeded(smoothed, result.best_x, objective,
                                    reference, params, noise):
                    succeeded[a] = True
            rows.append(VerifyRow(input_id=input_id, factor=factor,
                                  objective=objective, attempts=attempts,
                                  successes=sum(succeeded)))
    return rows


def _objective_tag(objective: AttackObjective) -> int:
    return 1 if objective is AttackObjective.FLIP_PREDICTION else 2
