# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementations of the two hot kernels.

Must stay semantically identical to ``_kernels_py``; parity is enforced by
tests.  The simplex search adds branch-and-bound pruning on the partial
divergence sum (every term is nonnegative, so a partial sum already at or
above the incumbent can never win), which is what makes dense grids
tractable.
"""

from libc.math cimport exp, log, sqrt, INFINITY, isfinite

import numpy as np

cimport numpy as cnp

BACKEND_NAME = "compiled"


cdef struct SearchState:
    int n
    int k
    int k0
    int G
    double best
    double *table
    unsigned char *in_topk
    long *counts


cdef void _search(SearchState *st, int level, int rem, double partial) noexcept nogil:
    cdef int c, i, t, best_i, matches
    cdef long best_c
    cdef double total
    cdef bint used[8]
    if partial >= st.best:
        return
    if level == st.n - 1:
        st.counts[level] = rem
        total = partial + st.table[level * (st.G + 1) + rem]
        if total >= st.best:
            return
        # top-k of the counts; ties go outside the reference set first
        # (adversarial resolution), then to the smaller index
        for i in range(st.n):
            used[i] = 0
        matches = 0
        for t in range(st.k):
            best_i = -1
            best_c = -1
            for i in range(st.n):
                if used[i]:
                    continue
                if st.counts[i] > best_c:
                    best_i = i
                    best_c = st.counts[i]
                elif st.counts[i] == best_c and st.in_topk[best_i] \
                        and not st.in_topk[i]:
                    best_i = i
            used[best_i] = 1
            if st.in_topk[best_i]:
                matches += 1
        if st.k - matches >= st.k0:
            st.best = total
        return
    for c in range(rem + 1):
        st.counts[level] = c
        _search(st, level + 1, rem - c,
                partial + st.table[level * (st.G + 1) + c])


def simplex_min_divergence(w, in_topk, k, k0, alpha, grid_points):
    """See ``_kernels_py.simplex_min_divergence``; same contract."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] warr = \
        np.ascontiguousarray(w, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] mask = \
        np.ascontiguousarray(in_topk, dtype=np.uint8)
    cdef int n = warr.shape[0]
    cdef int G = int(grid_points)
    cdef double a = float(alpha)
    if n > 8:
        raise ValueError("simplex search supports at most 8 entries")

    # Same table construction as the fallback, so sums match bit for bit.
    with np.errstate(divide="ignore"):
        log_frac = np.log(np.arange(G + 1) / G)
    table_np = np.zeros((n, G + 1))
    for i in range(n):
        if warr[i] > 0.0:
            with np.errstate(over="ignore"):
                table_np[i] = np.exp(a * log(warr[i]) + (1.0 - a) * log_frac)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] table = \
        np.ascontiguousarray(table_np)

    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(n, dtype=np.int64)
    cdef SearchState st
    st.n = n
    st.k = int(k)
    st.k0 = int(k0)
    st.G = G
    st.best = INFINITY
    st.table = <double *> table.data
    st.in_topk = <unsigned char *> mask.data
    st.counts = <long *> counts.data
    with nogil:
        _search(&st, 0, G, 0.0)
    if not isfinite(st.best):
        return float("inf")
    if st.best <= 0.0:
        return float("-inf")
    return log(st.best) / (a - 1.0)


def forward_batch(images, w_embed, w_q, w_k, w_v, w_l, w_head, summary,
                  patch, layers, rollout, eps):
    """See ``_kernels_py.forward_batch``; same contract."""
    cdef double[:, :, ::1] img = np.ascontiguousarray(images, dtype=np.float64)
    cdef double[:, ::1] We = np.ascontiguousarray(w_embed, dtype=np.float64)
    cdef double[:, ::1] Wq = np.ascontiguousarray(w_q, dtype=np.float64)
    cdef double[:, ::1] Wk = np.ascontiguousarray(w_k, dtype=np.float64)
    cdef double[:, ::1] Wv = np.ascontiguousarray(w_v, dtype=np.float64)
    cdef double[:, ::1] Wl = np.ascontiguousarray(w_l, dtype=np.float64)
    cdef double[:, ::1] Wh = np.ascontiguousarray(w_head, dtype=np.float64)
    cdef double[::1] summ = np.ascontiguousarray(summary, dtype=np.float64)

    cdef int P = int(patch)
    cdef int L = int(layers)
    cdef bint roll_mode = bool(rollout)
    cdef double lne = float(eps)
    if L < 1:
        raise ValueError("need at least one layer")

    cdef Py_ssize_t B = img.shape[0]
    cdef int H = <int> img.shape[1]
    cdef int W = <int> img.shape[2]
    cdef int ph = H // P
    cdef int pw = W // P
    cdef int npatch = ph * pw
    cdef int n = npatch + 1
    cdef int q = <int> We.shape[1]
    cdef int pp = P * P
    cdef int C = <int> Wh.shape[1]
    cdef double inv_sqrt_q = 1.0 / sqrt(<double> q)

    probs_np = np.empty((B, C), dtype=np.float64)
    attn_np = np.empty((B, npatch), dtype=np.float64)
    cdef double[:, ::1] probs = probs_np
    cdef double[:, ::1] attn = attn_np

    cdef double[:, ::1] X = np.empty((n, q))
    cdef double[:, ::1] Qm = np.empty((n, q))
    cdef double[:, ::1] Km = np.empty((n, q))
    cdef double[:, ::1] Vm = np.empty((n, q))
    cdef double[:, ::1] AV = np.empty((n, q))
    cdef double[:, ::1] Z = np.empty((n, q))
    cdef double[:, ::1] A = np.empty((n, n))
    cdef double[:, ::1] roll = np.empty((n, n))
    cdef double[:, ::1] rollnew = np.empty((n, n))
    cdef double[::1] head = np.empty(C)

    cdef Py_ssize_t b
    cdef int t, i, j, r, c, l, py0, px0
    cdef double acc, mx, ssum, mu, var, dv, inv

    with nogil:
        for b in range(B):
            # --- patchify + embed ---
            for j in range(q):
                X[0, j] = summ[j]
            for t in range(npatch):
                py0 = (t // pw) * P
                px0 = (t % pw) * P
                for j in range(q):
                    acc = 0.0
                    for r in range(pp):
                        acc += img[b, py0 + r // P, px0 + r % P] * We[r, j]
                    X[t + 1, j] = acc
            # --- attention layers (shared weights) ---
            for l in range(L):
                for i in range(n):
                    for j in range(q):
                        acc = 0.0
                        for r in range(q):
                            acc += X[i, r] * Wq[j, r]
                        Qm[i, j] = acc
                        acc = 0.0
                        for r in range(q):
                            acc += X[i, r] * Wk[j, r]
                        Km[i, j] = acc
                        acc = 0.0
                        for r in range(q):
                            acc += X[i, r] * Wv[j, r]
                        Vm[i, j] = acc
                for i in range(n):
                    mx = -INFINITY
                    for j in range(n):
                        acc = 0.0
                        for r in range(q):
                            acc += Qm[i, r] * Km[j, r]
                        acc = acc * inv_sqrt_q
                        A[i, j] = acc
                        if acc > mx:
                            mx = acc
                    ssum = 0.0
                    for j in range(n):
                        A[i, j] = exp(A[i, j] - mx)
                        ssum += A[i, j]
                    for j in range(n):
                        A[i, j] = A[i, j] / ssum
                for i in range(n):
                    for j in range(q):
                        acc = 0.0
                        for r in range(n):
                            acc += A[i, r] * Vm[r, j]
                        AV[i, j] = acc
                for i in range(n):
                    for j in range(q):
                        acc = 0.0
                        for r in range(q):
                            acc += AV[i, r] * Wl[r, j]
                        Z[i, j] = acc
                for i in range(n):
                    mu = 0.0
                    for j in range(q):
                        mu += Z[i, j]
                    mu = mu / q
                    var = 0.0
                    for j in range(q):
                        dv = Z[i, j] - mu
                        var += dv * dv
                    var = var / q
                    inv = 1.0 / sqrt(var + lne)
                    for j in range(q):
                        X[i, j] = (Z[i, j] - mu) * inv
                if roll_mode:
                    if l == 0:
                        for i in range(n):
                            for j in range(n):
                                roll[i, j] = A[i, j]
                    else:
                        for i in range(n):
                            for j in range(n):
                                acc = 0.0
                                for r in range(n):
                                    acc += A[i, r] * roll[r, j]
                                rollnew[i, j] = acc
                        for i in range(n):
                            for j in range(n):
                                roll[i, j] = rollnew[i, j]
            # --- classification head on the summary token ---
            mx = -INFINITY
            for c in range(C):
                acc = 0.0
                for r in range(q):
                    acc += X[0, r] * Wh[r, c]
                head[c] = acc
                if acc > mx:
                    mx = acc
            ssum = 0.0
            for c in range(C):
                head[c] = exp(head[c] - mx)
                ssum += head[c]
            for c in range(C):
                probs[b, c] = head[c] / ssum
            # --- attention readout over patch columns ---
            ssum = 0.0
            for t in range(npatch):
                if roll_mode:
                    acc = roll[0, t + 1]
                else:
                    acc = A[0, t + 1]
                attn[b, t] = acc
                ssum += acc
            for t in range(npatch):
                attn[b, t] = attn[b, t] / ssum
    return probs_np, attn_np
