"""Compiled exact-greedy tree growth over presorted feature orders.

Mirrors ``trees.grow_reference`` node for node: depth-first, left child
first, candidate features ranked by ``feature_keys(seed, node_id, p)``, ties
resolved to the lowest feature index then the lowest threshold.
"""
import numpy as np
from numba import njit, uint64

VARIANCE_CODE = 0
NEWTON_CODE = 1
GAIN_RTOL = 1e-12


@njit(cache=True)
def splitmix64(x):
    z = x + uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)
    return z ^ (z >> uint64(31))


@njit(cache=True)
def feature_keys(seed, node, p):
    """Pseudo-random sort keys for the features at one node."""
    keys = np.empty(p, dtype=np.uint64)
    for f in range(p):
        keys[f] = splitmix64(uint64(seed) + splitmix64(uint64(node) * uint64(p) + uint64(f)))
    return keys


@njit(cache=True)
def _segment_gains(xs, g, h, order, f, start, end, G, H, lam, gamma_split, min_leaf,
                   min_child_weight, crit, gains):
    """Fill gains[0:end-start-1] for splits after each sorted position."""
    GL = 0.0
    HL = 0.0
    n = end - start
    parent = G * G / (H + lam)
    best = -np.inf
    for k in range(n - 1):
        pos = order[f, start + k]
        GL += g[pos]
        HL += h[pos]
        nl = k + 1
        gains[k] = -np.inf
        if not (xs[f, start + k + 1] > xs[f, start + k]) or nl < min_leaf or n - nl < min_leaf:
            continue
        GR = G - GL
        HR = H - HL
        if crit == VARIANCE_CODE:
            v = GL * GL / HL + GR * GR / HR - parent
        else:
            if HL < min_child_weight or HR < min_child_weight:
                continue
            v = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent) - gamma_split
        if np.isfinite(v):
            gains[k] = v
            if v > best:
                best = v
    return best


@njit(cache=True)
def build_tree(Xb, y, h_in, order, seed, mtry, max_depth, min_leaf, min_child_weight, lam,
               gamma_split, crit):
    m, p = Xb.shape
    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)

    gains = np.empty((p, max(m - 1, 1)))
    xs = np.empty((p, m))
    for f in range(p):
        for k in range(m):
            xs[f, k] = Xb[order[f, k], f]
    buf = np.empty(m, dtype=np.int64)
    xbuf = np.empty(m)
    go_left = np.zeros(m, dtype=np.bool_)
    g = np.empty(m)

    stack_node = np.empty(cap, dtype=np.int64)
    stack_start = np.empty(cap, dtype=np.int64)
    stack_end = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    sp = 0
    n_nodes = 1
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = m
    stack_depth[0] = 0
    sp = 1
    all_feats = np.arange(p)

    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        start = stack_start[sp]
        end = stack_end[sp]
        depth = stack_depth[sp]
        n = end - start

        # leaf value
        Gsum = 0.0
        Hsum = 0.0
        for k in range(start, end):
            pos = order[0, k]
            Gsum += y[pos]
            Hsum += h_in[pos]
        if crit == VARIANCE_CODE:
            value[node] = Gsum / n
        else:
            value[node] = -Gsum / (Hsum + lam)

        if depth >= max_depth or n < 2:
            continue

        # node-local gradients (centered for the variance criterion)
        lam_eff = lam
        if crit == VARIANCE_CODE:
            mean = Gsum / n
            lo = y[order[0, start]]
            hi = lo
            for k in range(start, end):
                pos = order[0, k]
                g[pos] = y[pos] - mean
                if y[pos] < lo:
                    lo = y[pos]
                if y[pos] > hi:
                    hi = y[pos]
            if hi == lo:
                continue
            lam_eff = 0.0
        else:
            for k in range(start, end):
                pos = order[0, k]
                g[pos] = y[pos]
        G = 0.0
        H = 0.0
        scale = 0.0
        hmin = np.inf
        for k in range(start, end):
            pos = order[0, k]
            G += g[pos]
            H += h_in[pos]
            scale += g[pos] * g[pos]
            if h_in[pos] < hmin:
                hmin = h_in[pos]
        if crit == NEWTON_CODE:
            scale = 0.5 * scale / max(hmin, 1e-300)

        if mtry >= p:
            cand = all_feats
        else:
            cand = np.sort(np.argsort(feature_keys(seed, node, p))[:mtry])

        best = -np.inf
        for ci in range(cand.shape[0]):
            b = _segment_gains(xs, g, h_in, order, cand[ci], start, end, G, H, lam_eff, gamma_split,
                               min_leaf, min_child_weight, crit, gains[ci])
            if b > best:
                best = b
        if not best > GAIN_RTOL * max(scale, 1e-300):
            continue
        tol = best - GAIN_RTOL * max(abs(best), scale)
        bf = -1
        bk = -1
        for ci in range(cand.shape[0]):
            for k in range(n - 1):
                if gains[ci, k] >= tol:
                    bf = cand[ci]
                    bk = k
                    break
            if bf >= 0:
                break
        a = xs[bf, start + bk]
        b = xs[bf, start + bk + 1]
        thr = a + (b - a) / 2.0
        if thr >= b:
            thr = a

        for k in range(start, end):
            pos = order[0, k]
            go_left[pos] = Xb[pos, bf] <= thr
        nl = 0
        for f in range(p):
            li = start
            ri = 0
            for k in range(start, end):
                pos = order[f, k]
                x = xs[f, k]
                if go_left[pos]:
                    order[f, li] = pos
                    xs[f, li] = x
                    li += 1
                else:
                    buf[ri] = pos
                    xbuf[ri] = x
                    ri += 1
            for k in range(ri):
                order[f, li + k] = buf[k]
                xs[f, li + k] = xbuf[k]
            nl = li - start

        feature[node] = bf
        threshold[node] = thr
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        stack_node[sp] = rnode
        stack_start[sp] = start + nl
        stack_end[sp] = end
        stack_depth[sp] = depth + 1
        sp += 1
        stack_node[sp] = lnode
        stack_start[sp] = start
        stack_end[sp] = start + nl
        stack_depth[sp] = depth + 1
        sp += 1

    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]
