"""Pure numpy implementations of the two hot kernels.

Semantics here are the reference; the Cython extension in ``_kernels.pyx``
must agree with these functions to rounding error.  See ``_backend`` for
how one of the two gets picked at import time.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND_NAME = "python"

_BLOCK_ROWS = 200_000


def _tail3(rem: int) -> np.ndarray:
    """All compositions of ``rem`` into exactly 3 nonnegative parts."""
    counts = rem + 1 - np.arange(rem + 1)
    ca = np.repeat(np.arange(rem + 1), counts)
    cb = np.concatenate([np.arange(c) for c in counts])
    return np.stack([ca, cb, rem - ca - cb], axis=1)


def _composition_blocks(n: int, total: int):
    """Yield (M, n) integer blocks covering all compositions of ``total``."""
    if n == 1:
        yield np.array([[total]], dtype=np.int64)
    elif n == 2:
        c0 = np.arange(total + 1, dtype=np.int64)
        yield np.stack([c0, total - c0], axis=1)
    elif n == 3:
        yield _tail3(total).astype(np.int64)
    else:
        for c0 in range(total + 1):
            for tail in _composition_blocks(n - 1, total - c0):
                head = np.full((tail.shape[0], 1), c0, dtype=np.int64)
                yield np.concatenate([head, tail], axis=1)


def simplex_min_divergence(w, in_topk, k, k0, alpha, grid_points):
    """Minimum divergence over lattice distributions violating the overlap.

    Scans every q with entries c_i / grid_points summing to 1, keeps those
    whose top-k set mismatches the reference top-k in at least k0 positions,
    and returns the minimal ``log(sum_i w_i^alpha q_i^(1-alpha)) / (alpha - 1)``.
    Ties in q resolve adversarially (outside the reference set first, then
    the smaller index): the true minimizer sits exactly on the tie surface,
    so counting tied lattice points as violations is what makes the grid
    minimum converge to the closed-form infimum instead of hovering one
    lattice step inside the strict region.  Returns ``inf`` when no lattice
    point violates.
    """
    w = np.asarray(w, dtype=np.float64)
    in_topk = np.asarray(in_topk, dtype=bool)
    n = w.size
    G = int(grid_points)

    # term_table[i, c] = w_i^alpha * (c/G)^(1-alpha), with the conventions
    # w_i = 0 -> 0 and (c = 0, w_i > 0) -> inf.
    with np.errstate(divide="ignore"):
        log_frac = np.log(np.arange(G + 1) / G)
    table = np.zeros((n, G + 1))
    for i in range(n):
        if w[i] > 0.0:
            with np.errstate(over="ignore"):
                table[i] = np.exp(alpha * math.log(w[i]) + (1.0 - alpha) * log_frac)

    # Sort key: count first, then outside-the-reference-set, then smaller
    # index.  The middle term is the adversarial tie resolution.
    idx_bonus = (n - 1) - np.arange(n)
    out_bonus = np.where(in_topk, 0, n)
    best = math.inf
    for block in _composition_blocks(n, G):
        for start in range(0, block.shape[0], _BLOCK_ROWS):
            counts = block[start:start + _BLOCK_ROWS]
            keys = counts * (2 * n) + out_bonus + idx_bonus
            order = np.argsort(-keys, axis=1)[:, :k]
            matches = in_topk[order].sum(axis=1)
            feasible = (k - matches) >= k0
            if not np.any(feasible):
                continue
            sel = counts[feasible]
            sums = table[np.arange(n), sel].sum(axis=1)
            m = float(sums.min())
            if m < best:
                best = m
    if not math.isfinite(best):
        return math.inf
    if best <= 0.0:
        return -math.inf
    return math.log(best) / (alpha - 1.0)


def forward_batch(images, w_embed, w_q, w_k, w_v, w_l, w_head, summary,
                  patch, layers, rollout, eps):
    """Run the toy transformer over a batch of images.

    :param images: (B, H, W) float64 batch.
    :param w_embed: (patch*patch, q) patch embedding.
    :param w_q,w_k,w_v,w_l: (q, q) shared per-layer weights.
    :param w_head: (q, classes) readout applied to the summary token.
    :param summary: (q,) constant summary-token embedding.
    :param patch: patch side length; ``layers`` attention layers are run.
    :param rollout: if true the attention readout multiplies the per-layer
        attention matrices together before taking the summary row.
    :param eps: variance floor of the per-token normalization.
    :return: (probs (B, classes), attention (B, n_patches)) float64 arrays;
        attention rows are renormalized over the patch columns.
    """
    images = np.asarray(images, dtype=np.float64)
    B, H, W = images.shape
    ph, pw = H // patch, W // patch
    npatch = ph * pw
    q = w_embed.shape[1]
    inv_sqrt_q = 1.0 / math.sqrt(q)

    x = images.reshape(B, ph, patch, pw, patch)
    x = x.transpose(0, 1, 3, 2, 4).reshape(B, npatch, patch * patch)
    tokens = x @ w_embed
    X = np.concatenate(
        [np.broadcast_to(summary, (B, 1, q)), tokens], axis=1)

    A = None
    roll = None
    for layer in range(layers):
        Qm = X @ w_q.T
        Km = X @ w_k.T
        Vm = X @ w_v.T
        logits = (Qm @ Km.transpose(0, 2, 1)) * inv_sqrt_q
        logits -= logits.max(axis=2, keepdims=True)
        A = np.exp(logits)
        A /= A.sum(axis=2, keepdims=True)
        Z = (A @ Vm) @ w_l
        mu = Z.mean(axis=2, keepdims=True)
        var = Z.var(axis=2, keepdims=True)
        X = (Z - mu) / np.sqrt(var + eps)
        roll = A if roll is None else A @ roll

    head = X[:, 0, :] @ w_head
    head -= head.max(axis=1, keepdims=True)
    probs = np.exp(head)
    probs /= probs.sum(axis=1, keepdims=True)

    row = (roll if rollout else A)[:, 0, 1:]
    attn = row / row.sum(axis=1, keepdims=True)
    return probs, attn
