"""Pure numpy kernels, used when the compiled extension is unavailable.

Same algorithm and floating-point operation order as ``_ckernels``.
"""
from __future__ import annotations

import numpy as np


def build_tree(X, r, order, max_depth, min_leaf, alpha, lam):
    X = np.ascontiguousarray(X, dtype=np.float64)
    r = np.ascontiguousarray(r, dtype=np.float64)
    p = X.shape[1]
    fidx = np.arange(p)[:, None]
    nodes = {"feature": [], "threshold": [], "left": [], "right": [], "value": []}

    def new_node():
        for v in nodes.values():
            v.append(0)
        return len(nodes["feature"]) - 1

    def grow(start, end, depth):
        node = new_node()
        n = end - start
        seg = order[:, start:end]
        cs = np.cumsum(r[seg], axis=1)
        S = float(cs[0, -1])
        nodes["feature"][node] = -1
        nodes["left"][node] = -1
        nodes["right"][node] = -1
        nodes["threshold"][node] = 0.0
        if depth < max_depth and n >= 2 * min_leaf:
            xs = X[seg, fidx]
            nl = np.arange(1, n, dtype=np.float64)
            nr = n - nl
            SL = cs[:, :-1]
            SR = S - SL
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = SL * SL / nl + SR * SR / nr - S * S / float(n)
            ok = (xs[:, :-1] < xs[:, 1:]) & (nl >= min_leaf) & (nr >= min_leaf)
            gain = np.where(ok, gain, -np.inf)
            flat = int(np.argmax(gain))
            bf, bi = divmod(flat, n - 1) if n > 1 else (0, 0)
            if n > 1 and gain[bf, bi] > 0.0:
                x = float(xs[bf, bi])
                xn = float(xs[bf, bi + 1])
                thr = 0.5 * (x + xn)
                if thr >= xn:
                    thr = x
                gl = X[seg, bf] <= thr
                perm = np.argsort(~gl, axis=1, kind="stable")
                order[:, start:end] = np.take_along_axis(seg, perm, axis=1)
                nleft = bi + 1
                nodes["feature"][node] = bf
                nodes["threshold"][node] = thr
                nodes["value"][node] = 0.0
                nodes["left"][node] = grow(start, start + nleft, depth + 1)
                nodes["right"][node] = grow(start + nleft, end, depth + 1)
                return node
        dn = float(n)
        if S > alpha:
            w = (S - alpha) / (dn + lam)
        elif S < -alpha:
            w = (S + alpha) / (dn + lam)
        else:
            w = 0.0
        nodes["value"][node] = w
        return node

    grow(0, order.shape[1], 0)
    return (np.asarray(nodes["feature"], dtype=np.int64),
            np.asarray(nodes["threshold"], dtype=np.float64),
            np.asarray(nodes["left"], dtype=np.int64),
            np.asarray(nodes["right"], dtype=np.int64),
            np.asarray(nodes["value"], dtype=np.float64))


def predict_forest(X, feature, threshold, left, right, value, roots, learning_rate, base_score):
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    rows = np.arange(n)
    acc = np.zeros(n)
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        f = feature[node]
        active = f >= 0
        while active.any():
            a = rows[active]
            na = node[a]
            go_left = X[a, f[a]] <= threshold[na]
            node[a] = np.where(go_left, left[na], right[na])
            f = feature[node]
            active = f >= 0
        # per-row sequential accumulation, same order as the compiled loop
        acc = acc + value[node]
    return base_score + learning_rate * acc
