# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: exact greedy regression-tree growth and forest prediction.

Arithmetic mirrors ``_pykernels`` operation for operation so both backends
grow identical trees.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef struct TreeCtx:
    const double* X
    Py_ssize_t p
    const double* r
    long long* order
    Py_ssize_t m
    long long* tmp
    unsigned char* goes_left
    int max_depth
    Py_ssize_t min_leaf
    double alpha
    double lam
    long long* feature
    double* threshold
    long long* left
    long long* right
    double* value
    Py_ssize_t n_nodes


cdef Py_ssize_t _grow(TreeCtx* c, Py_ssize_t start, Py_ssize_t end, int depth) noexcept nogil:
    cdef Py_ssize_t node = c.n_nodes
    c.n_nodes += 1
    cdef Py_ssize_t n = end - start
    cdef Py_ssize_t i, f, row, nl, nr, k, pos_l, pos_r
    cdef double S = 0.0, SL, SR, gain, best_gain = 0.0, x, xn, thr = 0.0
    cdef Py_ssize_t best_f = -1, best_i = -1
    cdef long long* seg
    cdef double dn = <double>n

    for i in range(start, end):
        S += c.r[c.order[i]]

    c.feature[node] = -1
    c.left[node] = -1
    c.right[node] = -1
    c.threshold[node] = 0.0

    if depth < c.max_depth and n >= 2 * c.min_leaf:
        for f in range(c.p):
            seg = c.order + f * c.m
            SL = 0.0
            for i in range(start, end - 1):
                row = seg[i]
                SL += c.r[row]
                nl = i - start + 1
                nr = n - nl
                if nl < c.min_leaf:
                    continue
                if nr < c.min_leaf:
                    break
                x = c.X[row * c.p + f]
                xn = c.X[seg[i + 1] * c.p + f]
                if not (x < xn):
                    continue
                SR = S - SL
                gain = SL * SL / <double>nl + SR * SR / <double>nr - S * S / dn
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_i = i

        if best_f >= 0:
            seg = c.order + best_f * c.m
            x = c.X[seg[best_i] * c.p + best_f]
            xn = c.X[seg[best_i + 1] * c.p + best_f]
            thr = 0.5 * (x + xn)
            if thr >= xn:
                thr = x
            for i in range(start, end):
                row = seg[i]
                c.goes_left[row] = 1 if c.X[row * c.p + best_f] <= thr else 0
            nl = best_i - start + 1
            for f in range(c.p):
                seg = c.order + f * c.m
                pos_l = 0
                pos_r = nl
                for i in range(start, end):
                    row = seg[i]
                    if c.goes_left[row]:
                        c.tmp[pos_l] = row
                        pos_l += 1
                    else:
                        c.tmp[pos_r] = row
                        pos_r += 1
                for k in range(n):
                    seg[start + k] = c.tmp[k]
            c.feature[node] = best_f
            c.threshold[node] = thr
            c.left[node] = _grow(c, start, start + nl, depth + 1)
            c.right[node] = _grow(c, start + nl, end, depth + 1)
            c.value[node] = 0.0
            return node

    if S > c.alpha:
        c.value[node] = (S - c.alpha) / (dn + c.lam)
    elif S < -c.alpha:
        c.value[node] = (S + c.alpha) / (dn + c.lam)
    else:
        c.value[node] = 0.0
    return node


def build_tree(const double[:, ::1] X, const double[::1] r, long long[:, ::1] order,
               int max_depth, Py_ssize_t min_leaf, double alpha, double lam):
    """Grow one tree over the rows listed in ``order`` (mutated in place).

    Returns (feature, threshold, left, right, value) node arrays in preorder.
    """
    cdef Py_ssize_t p = X.shape[1]
    cdef Py_ssize_t m = order.shape[1]
    cdef Py_ssize_t cap = 2 * m - 1
    if max_depth < 30 and (1 << (max_depth + 1)) - 1 < cap:
        cap = (1 << (max_depth + 1)) - 1
    if cap < 1:
        cap = 1
    feature = np.empty(cap, dtype=np.int64)
    threshold = np.empty(cap, dtype=np.float64)
    left = np.empty(cap, dtype=np.int64)
    right = np.empty(cap, dtype=np.int64)
    value = np.empty(cap, dtype=np.float64)
    tmp = np.empty(max(m, 1), dtype=np.int64)
    goes_left = np.zeros(X.shape[0], dtype=np.uint8)

    cdef long long[::1] fv = feature, lv = left, rv = right, tv = tmp
    cdef double[::1] thv = threshold, vv = value
    cdef unsigned char[::1] gv = goes_left
    cdef TreeCtx c
    c.X = &X[0, 0] if X.shape[0] > 0 else NULL
    c.p = p
    c.r = &r[0] if r.shape[0] > 0 else NULL
    c.order = &order[0, 0] if m > 0 else NULL
    c.m = m
    c.tmp = &tv[0]
    c.goes_left = &gv[0] if X.shape[0] > 0 else NULL
    c.max_depth = max_depth
    c.min_leaf = min_leaf
    c.alpha = alpha
    c.lam = lam
    c.feature = &fv[0]
    c.threshold = &thv[0]
    c.left = &lv[0]
    c.right = &rv[0]
    c.value = &vv[0]
    c.n_nodes = 0
    with nogil:
        _grow(&c, 0, m, 0)
    k = c.n_nodes
    return feature[:k].copy(), threshold[:k].copy(), left[:k].copy(), right[:k].copy(), value[:k].copy()


def predict_forest(const double[:, ::1] X, const long long[::1] feature, const double[::1] threshold,
                   const long long[::1] left, const long long[::1] right, const double[::1] value,
                   const long long[::1] roots, double learning_rate, double base_score):
    """base_score + learning_rate * (sum of leaf values reached), per row."""
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1], T = roots.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, t
    cdef long long node, f
    cdef double acc
    with nogil:
        for i in range(n):
            acc = 0.0
            for t in range(T):
                node = roots[t]
                f = feature[node]
                while f >= 0:
                    if X[i, f] <= threshold[node]:
                        node = left[node]
                    else:
                        node = right[node]
                    f = feature[node]
                acc += value[node]
            ov[i] = base_score + learning_rate * acc
    return out
