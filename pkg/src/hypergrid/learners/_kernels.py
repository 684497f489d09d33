"""Numba kernels for exact greedy, level-wise tree growth and tree traversal.

Both the forest trees and the boosted trees use the same split search. Each
row carries two statistics: a weight ``w`` (bootstrap count, or hessian) and
a sum ``s`` (count times target, or gradient). A node with totals (S, W) has
score ``soft(S, alpha)^2 / (W + lam)``; the split gain is
``score_left + score_right - score_parent``. With alpha = lam = 0 this is
exactly the reduction in weighted squared error, which for 0/1 targets is
half the Gini impurity reduction, so one kernel serves regression and
classification trees.
"""

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True, nogil=True)
def _score(s, w, alpha, lam):
    a = abs(s) - alpha
    if a <= 0.0:
        return 0.0
    return a * a / (w + lam)


@njit(cache=True, nogil=True)
def leaf_weight(s, w, alpha, lam):
    """Minimizer of s*v + 0.5*(w+lam)*v^2 + alpha*|v|."""
    a = abs(s) - alpha
    if a <= 0.0:
        return 0.0
    if s > 0:
        return -a / (w + lam)
    return a / (w + lam)


@njit(cache=True, nogil=True)
def grow_tree(X, sorted_idx, row_w, row_s, active, tree_mask, max_feat, max_depth,
              min_child, alpha, lam, newton_leaf, seed):
    """Grow one tree; returns (feature, threshold, left, right, value, leaf_of_row).

    ``newton_leaf`` selects leaf values -soft(S)/(W+lam) (boosting) instead
    of S/W (mean target). ``max_feat`` features are drawn per node from those
    allowed by ``tree_mask``.
    """
    np.random.seed(seed)
    n, p = X.shape
    n_active = 0
    for i in range(n):
        if active[i]:
            n_active += 1
    depth_cap = max_depth if max_depth < 40 else 40
    cap = 2 * n_active + 1
    if (1 << (depth_cap + 1)) < cap:
        cap = 1 << (depth_cap + 1)
    cap = max(cap, 1)
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, LEAF, dtype=np.int64)
    right = np.full(cap, LEAF, dtype=np.int64)
    value = np.zeros(cap)
    tot_w = np.zeros(cap)
    tot_s = np.zeros(cap)

    node_of = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if active[i]:
            node_of[i] = 0
            tot_w[0] += row_w[i]
            tot_s[0] += row_s[i]
    n_nodes = 1

    allowed_list = np.empty(p, dtype=np.int64)
    n_allowed = 0
    for f in range(p):
        if tree_mask[f]:
            allowed_list[n_allowed] = f
            n_allowed += 1
    k_feat = max_feat if max_feat < n_allowed else n_allowed

    local_of = np.full(cap, -1, dtype=np.int64)
    open_ids = np.zeros(1, dtype=np.int64)
    n_open = 1 if n_active > 0 else 0

    for depth in range(max_depth):
        if n_open == 0:
            break
        for j in range(n_open):
            local_of[open_ids[j]] = j
        allowed = np.zeros((n_open, p), dtype=np.bool_)
        pool = allowed_list[:n_allowed].copy()
        for j in range(n_open):
            for a in range(k_feat):
                b = a + np.random.randint(n_allowed - a)
                tmp = pool[a]
                pool[a] = pool[b]
                pool[b] = tmp
                allowed[j, pool[a]] = True
        parent_score = np.empty(n_open)
        best_gain = np.empty(n_open)
        for j in range(n_open):
            t = open_ids[j]
            parent_score[j] = _score(tot_s[t], tot_w[t], alpha, lam)
            best_gain[j] = 1e-10 * abs(parent_score[j])
        best_f = np.full(n_open, -1, dtype=np.int64)
        best_thr = np.zeros(n_open)
        wl = np.zeros(n_open)
        sl = np.zeros(n_open)
        last_x = np.zeros(n_open)
        seen = np.zeros(n_open, dtype=np.bool_)

        for f in range(p):
            if not tree_mask[f]:
                continue
            wl[:] = 0.0
            sl[:] = 0.0
            seen[:] = False
            for k in range(n):
                r = sorted_idx[f, k]
                t = node_of[r]
                if t < 0:
                    continue
                j = local_of[t]
                if j < 0 or not allowed[j, f]:
                    continue
                x = X[r, f]
                if seen[j] and x > last_x[j]:
                    w_left = wl[j]
                    w_right = tot_w[t] - w_left
                    if w_left >= min_child and w_right >= min_child:
                        gain = (_score(sl[j], w_left, alpha, lam)
                                + _score(tot_s[t] - sl[j], w_right, alpha, lam)
                                - parent_score[j])
                        if gain > best_gain[j]:
                            best_gain[j] = gain
                            best_f[j] = f
                            thr = 0.5 * (last_x[j] + x)
                            if thr >= x:
                                thr = last_x[j]
                            best_thr[j] = thr
                wl[j] += row_w[r]
                sl[j] += row_s[r]
                last_x[j] = x
                seen[j] = True

        next_open = np.empty(2 * n_open, dtype=np.int64)
        n_next = 0
        for j in range(n_open):
            t = open_ids[j]
            if best_f[j] >= 0:
                feature[t] = best_f[j]
                threshold[t] = best_thr[j]
                left[t] = n_nodes
                right[t] = n_nodes + 1
                next_open[n_next] = n_nodes
                next_open[n_next + 1] = n_nodes + 1
                n_next += 2
                n_nodes += 2
        for i in range(n):
            t = node_of[i]
            if t < 0:
                continue
            j = local_of[t]
            if j < 0 or best_f[j] < 0:
                continue
            if X[i, best_f[j]] <= best_thr[j]:
                c = left[t]
            else:
                c = right[t]
            node_of[i] = c
            tot_w[c] += row_w[i]
            tot_s[c] += row_s[i]
        for j in range(n_open):
            local_of[open_ids[j]] = -1
        open_ids = next_open[:n_next].copy()
        n_open = n_next

    for t in range(n_nodes):
        if newton_leaf:
            value[t] = leaf_weight(tot_s[t], tot_w[t], alpha, lam)
        elif tot_w[t] > 0:
            value[t] = tot_s[t] / tot_w[t]
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), node_of)


@njit(cache=True, nogil=True)
def predict_trees(X, feature, threshold, left, right, value, roots, average):
    """Sum (or mean) of tree outputs; children indices are global into the node arrays."""
    n = X.shape[0]
    out = np.zeros(n)
    n_trees = roots.shape[0]
    for i in range(n):
        acc = 0.0
        for k in range(n_trees):
            t = roots[k]
            while feature[t] != LEAF:
                if X[i, feature[t]] <= threshold[t]:
                    t = left[t]
                else:
                    t = right[t]
            acc += value[t]
        out[i] = acc / n_trees if average else acc
    return out


@njit(cache=True, nogil=True)
def predict_each_tree(X, feature, threshold, left, right, value, roots):
    n = X.shape[0]
    n_trees = roots.shape[0]
    out = np.zeros((n_trees, n))
    for k in range(n_trees):
        for i in range(n):
            t = roots[k]
            while feature[t] != LEAF:
                if X[i, feature[t]] <= threshold[t]:
                    t = left[t]
                else:
                    t = right[t]
            out[k, i] = value[t]
    return out
