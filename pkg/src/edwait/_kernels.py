"""Numba kernels for tree growth and forest traversal.

Growth is depth-first with an explicit stack. Split candidates are the
midpoints between consecutive distinct sorted values of each candidate
feature; impurity ties are broken toward the lowest feature index and then
the lowest threshold by iterating candidates in ascending order and
accepting only strict improvements.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def grow_regression(X, y, rows, mtry, min_node, seed):
    """Grow one CART regression tree on the given bootstrap rows.

    Returns (feat, thr, left, right, leaf_lo, leaf_hi, ordered_rows,
    importance) where leaves carry [lo, hi) slices into ordered_rows and
    importance accumulates the total SSE decrease per feature.
    """
    np.random.seed(seed)
    n = rows.shape[0]
    m = X.shape[1]
    max_nodes = 2 * n + 2
    feat = np.full(max_nodes, -1, np.int64)
    thr = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    leaf_lo = np.zeros(max_nodes, np.int64)
    leaf_hi = np.zeros(max_nodes, np.int64)
    importance = np.zeros(m, np.float64)

    idx = rows.copy()
    featbuf = np.arange(m)
    stack = np.empty((max_nodes, 3), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = n
    stack[0, 2] = 0
    sp = 1
    n_nodes = 1

    col = np.empty(n, np.float64)
    tmp = np.empty(n, np.int64)

    while sp > 0:
        sp -= 1
        lo = stack[sp, 0]
        hi = stack[sp, 1]
        node = stack[sp, 2]
        nn = hi - lo

        ty = 0.0
        ty2 = 0.0
        for k in range(lo, hi):
            v = y[idx[k]]
            ty += v
            ty2 += v * v
        node_sse = ty2 - ty * ty / nn

        if nn < min_node or node_sse <= 1e-12:
            leaf_lo[node] = lo
            leaf_hi[node] = hi
            continue

        # mtry candidate features, sampled without replacement per node
        kmax = mtry if mtry < m else m
        for i in range(kmax):
            j = i + np.random.randint(0, m - i)
            t = featbuf[i]
            featbuf[i] = featbuf[j]
            featbuf[j] = t
        cand = np.sort(featbuf[:kmax].copy())

        best_sse = np.inf
        best_f = -1
        best_t = 0.0
        for ci in range(kmax):
            f = cand[ci]
            for k in range(nn):
                col[k] = X[idx[lo + k], f]
            order = np.argsort(col[:nn], kind="mergesort")
            cy = 0.0
            cy2 = 0.0
            for k in range(nn - 1):
                yk = y[idx[lo + order[k]]]
                cy += yk
                cy2 += yk * yk
                vk = col[order[k]]
                vk1 = col[order[k + 1]]
                if vk1 > vk:
                    nl = k + 1
                    nr = nn - nl
                    sse = (cy2 - cy * cy / nl) + ((ty2 - cy2) - (ty - cy) * (ty - cy) / nr)
                    if sse < best_sse:
                        best_sse = sse
                        best_f = f
                        best_t = 0.5 * (vk + vk1)

        if best_f < 0:
            leaf_lo[node] = lo
            leaf_hi[node] = hi
            continue

        nl = 0
        for k in range(lo, hi):
            if X[idx[k], best_f] <= best_t:
                tmp[nl] = idx[k]
                nl += 1
        nr = nl
        for k in range(lo, hi):
            if X[idx[k], best_f] > best_t:
                tmp[nr] = idx[k]
                nr += 1
        for k in range(nn):
            idx[lo + k] = tmp[k]

        importance[best_f] += node_sse - best_sse
        feat[node] = best_f
        thr[node] = best_t
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        stack[sp, 0] = lo
        stack[sp, 1] = lo + nl
        stack[sp, 2] = lnode
        sp += 1
        stack[sp, 0] = lo + nl
        stack[sp, 1] = hi
        stack[sp, 2] = rnode
        sp += 1

    return (feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes],
            leaf_lo[:n_nodes], leaf_hi[:n_nodes], idx, importance)


@njit(cache=True)
def grow_classification(X, cls, row_weight, rows, n_classes, mtry, min_node, seed):
    """Grow one CART tree minimizing class-weighted Gini impurity.

    ``row_weight[i]`` is the class weight of row i's label; node impurity is
    W * (1 - sum_k p_k^2) with weighted class frequencies p_k.
    """
    np.random.seed(seed)
    n = rows.shape[0]
    m = X.shape[1]
    max_nodes = 2 * n + 2
    feat = np.full(max_nodes, -1, np.int64)
    thr = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    leaf_lo = np.zeros(max_nodes, np.int64)
    leaf_hi = np.zeros(max_nodes, np.int64)

    idx = rows.copy()
    featbuf = np.arange(m)
    stack = np.empty((max_nodes, 3), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = n
    stack[0, 2] = 0
    sp = 1
    n_nodes = 1

    col = np.empty(n, np.float64)
    tmp = np.empty(n, np.int64)
    tot_cw = np.empty(n_classes, np.float64)
    cw_l = np.empty(n_classes, np.float64)

    while sp > 0:
        sp -= 1
        lo = stack[sp, 0]
        hi = stack[sp, 1]
        node = stack[sp, 2]
        nn = hi - lo

        for c in range(n_classes):
            tot_cw[c] = 0.0
        W = 0.0
        for k in range(lo, hi):
            r = idx[k]
            tot_cw[cls[r]] += row_weight[r]
            W += row_weight[r]
        sumsq = 0.0
        for c in range(n_classes):
            sumsq += tot_cw[c] * tot_cw[c]
        node_gini = W - sumsq / W if W > 0 else 0.0

        if nn < min_node or node_gini <= 1e-12:
            leaf_lo[node] = lo
            leaf_hi[node] = hi
            continue

        kmax = mtry if mtry < m else m
        for i in range(kmax):
            j = i + np.random.randint(0, m - i)
            t = featbuf[i]
            featbuf[i] = featbuf[j]
            featbuf[j] = t
        cand = np.sort(featbuf[:kmax].copy())

        best_gini = np.inf
        best_f = -1
        best_t = 0.0
        for ci in range(kmax):
            f = cand[ci]
            for k in range(nn):
                col[k] = X[idx[lo + k], f]
            order = np.argsort(col[:nn], kind="mergesort")
            for c in range(n_classes):
                cw_l[c] = 0.0
            Wl = 0.0
            sumsq_l = 0.0
            sumsq_r = sumsq
            for k in range(nn - 1):
                r = idx[lo + order[k]]
                c = cls[r]
                w = row_weight[r]
                sumsq_l += 2.0 * cw_l[c] * w + w * w
                sumsq_r -= 2.0 * (tot_cw[c] - cw_l[c]) * w - w * w
                cw_l[c] += w
                Wl += w
                vk = col[order[k]]
                vk1 = col[order[k + 1]]
                if vk1 > vk:
                    Wr = W - Wl
                    g = 0.0
                    if Wl > 0:
                        g += Wl - sumsq_l / Wl
                    if Wr > 0:
                        g += Wr - sumsq_r / Wr
                    if g < best_gini:
                        best_gini = g
                        best_f = f
                        best_t = 0.5 * (vk + vk1)

        if best_f < 0:
            leaf_lo[node] = lo
            leaf_hi[node] = hi
            continue

        nl = 0
        for k in range(lo, hi):
            if X[idx[k], best_f] <= best_t:
                tmp[nl] = idx[k]
                nl += 1
        nr = nl
        for k in range(lo, hi):
            if X[idx[k], best_f] > best_t:
                tmp[nr] = idx[k]
                nr += 1
        for k in range(nn):
            idx[lo + k] = tmp[k]

        feat[node] = best_f
        thr[node] = best_t
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        stack[sp, 0] = lo
        stack[sp, 1] = lo + nl
        stack[sp, 2] = lnode
        sp += 1
        stack[sp, 0] = lo + nl
        stack[sp, 1] = hi
        stack[sp, 2] = rnode
        sp += 1

    return (feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes],
            leaf_lo[:n_nodes], leaf_hi[:n_nodes], idx)


@njit(cache=True)
def sort_leaf_members(feat, leaf_lo, leaf_hi, idx):
    """Sort each leaf's row slice in place (leaves store sorted row ids)."""
    for node in range(feat.shape[0]):
        if feat[node] < 0:
            lo = leaf_lo[node]
            hi = leaf_hi[node]
            if hi - lo > 1:
                idx[lo:hi] = np.sort(idx[lo:hi])


@njit(cache=True)
def descend(Xq, feat, thr, left, right):
    """Leaf node id reached by each query row for a single tree."""
    nq = Xq.shape[0]
    out = np.empty(nq, np.int64)
    for i in range(nq):
        node = 0
        while feat[node] >= 0:
            if Xq[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True)
def descend_forest(Xq, feat_cat, thr_cat, left_cat, right_cat, node_off):
    """Leaf node ids (local to each tree) for every (query, tree) pair."""
    nq = Xq.shape[0]
    T = node_off.shape[0] - 1
    out = np.empty((nq, T), np.int64)
    for t in range(T):
        base = node_off[t]
        for i in range(nq):
            node = 0
            while feat_cat[base + node] >= 0:
                if Xq[i, feat_cat[base + node]] <= thr_cat[base + node]:
                    node = left_cat[base + node]
                else:
                    node = right_cat[base + node]
            out[i, t] = node
    return out


@njit(cache=True)
def forest_member_weights(leafs, node_off, rows_off, leaf_lo_cat, leaf_hi_cat,
                          rows_cat, n_train):
    """Aggregate per-row forest weights for each query.

    ``leafs`` holds local leaf ids per (query, tree). Each tree spreads
    weight 1/(leaf size * n_tree) over its leaf members (bootstrap
    multiplicity included). Returns CSR-style (indptr, indices, weights).
    """
    nq, T = leafs.shape
    indptr = np.zeros(nq + 1, np.int64)
    epoch = np.full(n_train, -1, np.int64)
    for q in range(nq):
        cnt = 0
        for t in range(T):
            base = node_off[t] + leafs[q, t]
            for k in range(leaf_lo_cat[base], leaf_hi_cat[base]):
                r = rows_cat[rows_off[t] + k]
                if epoch[r] != q:
                    epoch[r] = q
                    cnt += 1
        indptr[q + 1] = cnt
    for q in range(nq):
        indptr[q + 1] += indptr[q]

    total = indptr[nq]
    indices = np.empty(total, np.int64)
    weights = np.zeros(total, np.float64)
    pos = np.empty(n_train, np.int64)
    inv_T = 1.0 / T
    for q in range(nq):
        fill = indptr[q]
        for t in range(T):
            base = node_off[t] + leafs[q, t]
            lo = leaf_lo_cat[base]
            hi = leaf_hi_cat[base]
            w = inv_T / (hi - lo)
            for k in range(lo, hi):
                r = rows_cat[rows_off[t] + k]
                if epoch[r] != q + nq:
                    epoch[r] = q + nq
                    pos[r] = fill
                    indices[fill] = r
                    fill += 1
                weights[pos[r]] += w
    return indptr, indices, weights


@njit(cache=True)
def sample_forest_rows(Xq, feat_cat, thr_cat, left_cat, right_cat, node_off,
                       rows_off, leaf_lo_cat, leaf_hi_cat, rows_cat,
                       tree_choice, member_u):
    """One training-row draw per query: descend the chosen tree, then pick a
    leaf member uniformly. Uniform tree choice makes the draw exact for the
    forest-weight mixture."""
    nq = Xq.shape[0]
    out = np.empty(nq, np.int64)
    for i in range(nq):
        t = tree_choice[i]
        base = node_off[t]
        node = 0
        while feat_cat[base + node] >= 0:
            if Xq[i, feat_cat[base + node]] <= thr_cat[base + node]:
                node = left_cat[base + node]
            else:
                node = right_cat[base + node]
        lo = leaf_lo_cat[base + node]
        hi = leaf_hi_cat[base + node]
        k = lo + int(member_u[i] * (hi - lo))
        if k >= hi:
            k = hi - 1
        out[i] = rows_cat[rows_off[t] + k]
    return out
