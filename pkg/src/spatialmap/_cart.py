"""Compiled kernels for regression-tree growing and traversal."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def grow_tree(X, y, rows, mtry, min_node_size, keys):
    """Grow one CART regression tree on ``rows`` (bootstrap indices).

    At every node ``mtry`` predictors are chosen by sorting that node's row of
    ``keys``; each is scanned exhaustively and split at the midpoint between
    consecutive distinct values with the largest variance reduction. Nodes
    with ``<= min_node_size`` rows or constant response become leaves.
    """
    n = rows.shape[0]
    cap = 2 * n + 1
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    value = np.zeros(cap)

    idx = rows.copy()
    tmp = np.empty(n, np.int64)
    xbuf = np.empty(n)
    st_s = np.empty(cap, np.int64)
    st_e = np.empty(cap, np.int64)
    st_node = np.empty(cap, np.int64)
    sp = 1
    st_s[0] = 0
    st_e[0] = n
    st_node[0] = 0
    n_nodes = 1

    while sp > 0:
        sp -= 1
        s = st_s[sp]
        e = st_e[sp]
        node = st_node[sp]
        m = e - s
        total = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(s, e):
            v = y[idx[i]]
            total += v
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        value[node] = total / m
        if m <= min_node_size or ymin == ymax:
            continue

        order = np.argsort(keys[node])
        best_gain = total * total / m
        best_f = -1
        best_thr = 0.0
        for t in range(mtry):
            f = order[t]
            for i in range(m):
                xbuf[i] = X[idx[s + i], f]
            o = np.argsort(xbuf[:m], kind="mergesort")
            sl = 0.0
            for i in range(m - 1):
                r = idx[s + o[i]]
                sl += y[r]
                xi = X[r, f]
                xn = X[idx[s + o[i + 1]], f]
                if xi < xn:
                    nl = i + 1
                    sr = total - sl
                    gain = sl * sl / nl + sr * sr / (m - nl)
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        thr = xi + (xn - xi) / 2.0
                        if thr >= xn:
                            thr = xi
                        best_thr = thr
        if best_f < 0:
            continue

        nl = 0
        for i in range(s, e):
            if X[idx[i], best_f] <= best_thr:
                tmp[nl] = idx[i]
                nl += 1
        nr = nl
        for i in range(s, e):
            if X[idx[i], best_f] > best_thr:
                tmp[nr] = idx[i]
                nr += 1
        for i in range(m):
            idx[s + i] = tmp[i]

        feature[node] = best_f
        threshold[node] = best_thr
        lchild = n_nodes
        rchild = n_nodes + 1
        n_nodes += 2
        left[node] = lchild
        right[node] = rchild
        # right pushed first so the left subtree is grown first
        st_s[sp] = s + nl
        st_e[sp] = e
        st_node[sp] = rchild
        sp += 1
        st_s[sp] = s
        st_e[sp] = s + nl
        st_node[sp] = lchild
        sp += 1

    return (left[:n_nodes].copy(), right[:n_nodes].copy(), feature[:n_nodes].copy(),
            threshold[:n_nodes].copy(), value[:n_nodes].copy())


@njit(cache=True, nogil=True)
def predict_tree(X, left, right, feature, threshold, value):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while left[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True, nogil=True)
def predict_forest(X, offsets, left, right, feature, threshold, value):
    """Mean over trees stored back to back; tree t spans offsets[t]:offsets[t+1]."""
    n_trees = offsets.shape[0] - 1
    out = np.zeros(X.shape[0])
    for i in range(X.shape[0]):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while left[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            acc += value[base + node]
        out[i] = acc / n_trees
    return out
