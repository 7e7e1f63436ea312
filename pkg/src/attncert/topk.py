"""Certified stability of top-k index sets under distribution shift.

An attention vector is "faithful" at radius R if no perturbation within R
can change which indices make up its top-k set beyond an allowed overlap
fraction beta.  The question reduces to: how much Renyi divergence does it
take to move a simplex vector w to some q whose top-k set disagrees with
w's in at least k0 places?  This module provides both the closed form for
that minimum and a brute-force grid search over the simplex that serves as
an independent check of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _backend
from .core import as_float_array, check_simplex, require, topk_indices


def topk_set(v, k: int) -> np.ndarray:
    """Index set (ascending) of the ``k`` largest entries of ``v``.

    Ties are broken toward the smaller index, so the selection is a pure
    function of the vector -- no dependence on sort internals.
    """
    return topk_indices(v, k)


def overlap_ratio(u, v, k: int) -> float:
    """Fraction of shared indices between the top-k sets of ``u`` and ``v``.

    Symmetric in its arguments; 1.0 means identical sets, 0.0 disjoint.
    """
    su = set(topk_set(u, k).tolist())
    sv = set(topk_set(v, k).tolist())
    return len(su & sv) / k


def min_mismatches(k: int, beta: float) -> int:
    """Smallest number of displaced top-k indices that violates ``beta``.

    Overlap below beta means strictly fewer than ``beta * k`` shared
    indices, i.e. strictly more than ``(1 - beta) * k`` mismatches; the
    smallest integer satisfying that is ``floor((1 - beta) * k) + 1``.
    """
    require(k >= 1, "k must be at least 1")
    require(0.0 < beta <= 1.0, "beta must lie in (0, 1]")
    return int(math.floor((1.0 - beta) * k)) + 1


@dataclass(frozen=True)
class TopKContext:
    """Preprocessed view of a simplex vector for top-k certification.

    :param w: the (validated) simplex vector.
    :param k: top-k size.
    :param beta: required overlap fraction.
    :param k0: minimum mismatch count that violates beta.
    :param order: permutation sorting ``w`` descending (ties: smaller index).
    :param topk: ascending index set of w's top-k.
    :param boundary: ascending index set of the 2*k0 boundary entries -- the
        k0 weakest members of the top-k plus the k0 strongest outsiders.
        These are the entries a worst-case shift actually rearranges.
    """

    w: np.ndarray
    k: int
    beta: float
    k0: int
    order: np.ndarray
    topk: np.ndarray
    boundary: np.ndarray

    @property
    def n(self) -> int:
        return self.w.size


def make_context(w, k: int, beta: float) -> TopKContext:
    """Validate inputs and assemble the boundary structure for certification.

    :raises ValueError: if ``w`` is not a simplex vector, ``k`` is out of
        range, or the boundary set does not fit (``k + k0 > n``), in which
        case the overlap constraint can never be violated and no finite
        certificate question exists.
    """
    arr = as_float_array(w, "w")
    check_simplex(arr, atol=1e-8, name="w")
    n = arr.size
    require(1 <= k < n, "need 1 <= k < n")
    k0 = min_mismatches(k, beta)
    if k + k0 > n:
        raise ValueError(
            f"boundary set needs {k0} indices outside the top-{k}, but only "
            f"{n - k} exist; the beta-overlap cannot be violated")
    order = np.lexsort((np.arange(n), -arr))
    topk = np.sort(order[:k])
    boundary = np.sort(order[k - k0:k + k0])
    return TopKContext(w=arr.copy(), k=k, beta=beta, k0=k0, order=order,
                       topk=topk, boundary=boundary)


def min_divergence_to_break(ctx: TopKContext, alpha: float) -> float:
    """Least divergence carrying ``w`` to a beta-violating distribution.

    Closed form: with s the alpha-power norm of w over the boundary set S
    (|S| = 2 k0) and W the total weight outside S,

        (alpha/(alpha-1)) * log(2 k0 s + (2 k0)^(1/alpha) W)
            - log(2 k0) / (alpha - 1)

    evaluated in log-space.  The worst case spreads w's boundary mass
    uniformly over S (erasing the ordering there) while off-boundary
    entries are scaled in place; see :func:`worst_case_q`.

    .. caution::
        The closed form solves this variational problem under the extra
        assumption that the minimizer preserves w's descending order.  In
        the full-replacement regime (k0 == k >= 2) with strongly uneven
        top-k weights that assumption fails: the cheapest violation keeps
        the dominant top-k entry tied at the boundary level and demotes
        only the weaker ones, which :func:`brute_force_min_divergence`
        finds at a strictly lower divergence.  The value returned here is
        then an upper bound on the true minimum, i.e. the derived
        attention bound is optimistic in that regime.
    """
    require(alpha > 1.0, "alpha must exceed 1")
    if float(np.ptp(ctx.w[ctx.boundary])) == 0.0:
        # w's boundary entries are already tied, so the top-k membership
        # there is pure tie-breaking: q = w violates at no cost at all.
        # Short-circuiting keeps the result exactly zero instead of the
        # rounding dust the log-space path would produce.
        return 0.0
    two_k0 = 2.0 * ctx.k0
    in_boundary = np.zeros(ctx.n, dtype=bool)
    in_boundary[ctx.boundary] = True
    ws = ctx.w[in_boundary]
    ws = ws[ws > 0.0]
    w_out = float(ctx.w[~in_boundary].sum())

    terms = []
    if ws.size:
        log_s = float(logsumexp(alpha * np.log(ws))) / alpha
        terms.append(math.log(two_k0) + log_s)
    if w_out > 0.0:
        terms.append(math.log(two_k0) / alpha + math.log(w_out))
    # terms cannot both be absent: w sums to 1 over S and its complement
    log_denom = float(logsumexp(terms))
    value = (alpha / (alpha - 1.0)) * log_denom - math.log(two_k0) / (alpha - 1.0)
    return max(value, 0.0)


def worst_case_q(ctx: TopKContext, alpha: float) -> np.ndarray:
    """The distribution attaining :func:`min_divergence_to_break`.

    Uniform mass on the boundary set (all 2 k0 entries tied, so the top-k
    membership there is no longer determined by w's ordering) and original
    weights scaled by ``(2 k0)^(1/alpha)`` elsewhere, normalized.
    """
    require(alpha > 1.0, "alpha must exceed 1")
    two_k0 = 2.0 * ctx.k0
    in_boundary = np.zeros(ctx.n, dtype=bool)
    in_boundary[ctx.boundary] = True
    ws = ctx.w[in_boundary]
    pos = ws[ws > 0.0]
    s = math.exp(float(logsumexp(alpha * np.log(pos))) / alpha) if pos.size else 0.0
    scale = two_k0 ** (1.0 / alpha)
    q = np.where(in_boundary, s, scale * ctx.w)
    total = float(q.sum())
    require(total > 0.0, "degenerate worst case: w vanishes everywhere")
    return q / total


def brute_force_min_divergence(w, k: int, beta: float, alpha: float,
                               grid_points: int) -> float:
    """Grid-search oracle for the minimum beta-violating divergence.

    Enumerates every distribution with entries that are multiples of
    ``1/grid_points`` (a simplex lattice), keeps those whose top-k set
    mismatches w's in at least k0 places (ties resolved adversarially, so
    the boundary of the violation region counts), and returns the smallest
    divergence among them.  Exponential in the vector length, so it is
    restricted to n <= 5; it exists to validate the closed form, not to
    certify anything at scale.

    :raises ValueError: ``resolution too coarse`` for grid_points < 2, or
        ``no valid violating q`` when no lattice point violates beta.
    """
    arr = as_float_array(w, "w")
    check_simplex(arr, atol=1e-8, name="w")
    require(alpha > 1.0, "alpha must exceed 1")
    require(arr.size <= 5, "brute force supports at most 5 entries")
    if grid_points < 2:
        raise ValueError("resolution too coarse: need grid_points >= 2")
    k0 = min_mismatches(k, beta)
    require(1 <= k < arr.size, "need 1 <= k < n")
    in_topk = np.zeros(arr.size, dtype=np.uint8)
    in_topk[topk_set(arr, k)] = 1
    kern = _backend.get_kernels()
    value = kern.simplex_min_divergence(arr, in_topk, k, k0, float(alpha),
                                        int(grid_points))
    if not math.isfinite(value):
        raise ValueError("no valid violating q at this resolution")
    return max(value, 0.0)
