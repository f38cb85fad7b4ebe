"""Compiled regression-tree growth; mirrors ``ltr._grow_reference`` step for step."""
import numpy as np
from numba import njit


@njit(cache=True)
def grow_kernel(X, y, rows, draws, max_features, min_leaf):
    n = rows.shape[0]
    p = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    importance = np.zeros(p)

    idx = rows.copy()
    buf = np.empty(n, np.int64)
    cand = np.empty(p, np.int64)
    xs = np.empty(n)
    ys = np.empty(n)
    st_node = np.empty(cap, np.int64)
    st_s = np.empty(cap, np.int64)
    st_e = np.empty(cap, np.int64)

    acc = 0.0
    for i in range(n):
        acc += y[idx[i]]
    value[0] = acc / n
    count = 1
    sp = 0
    st_node[0] = 0
    st_s[0] = 0
    st_e[0] = n
    sp = 1
    pos = 0

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        s = st_s[sp]
        e = st_e[sp]
        m = e - s
        ymin = y[idx[s]]
        ymax = ymin
        for i in range(s, e):
            v = y[idx[i]]
            if v < ymin:
                ymin = v
            if v > ymax:
                ymax = v
        if m < 2 * min_leaf or ymin == ymax:
            continue

        nc = 0
        for f in range(p):
            lo = X[idx[s], f]
            hi = lo
            for i in range(s, e):
                v = X[idx[i], f]
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
            if hi > lo:
                cand[nc] = f
                nc += 1
        if nc == 0:
            continue
        k = min(max_features, nc)
        c = cand[:nc].copy()
        for j in range(k):
            r = j + int(draws[pos + j] * (nc - j))
            if r > nc - 1:
                r = nc - 1
            tmp = c[j]
            c[j] = c[r]
            c[r] = tmp
        pos += k
        chosen = np.sort(c[:k])

        total = 0.0
        total2 = 0.0
        for i in range(s, e):
            v = y[idx[i]]
            total += v
        for i in range(s, e):
            v = y[idx[i]]
            total2 += v * v
        parent_sse = total2 - total * total / m
        tol = 1e-12 * max(1.0, abs(parent_sse))

        found = False
        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        for ci in range(k):
            f = chosen[ci]
            for i in range(m):
                xs[i] = X[idx[s + i], f]
            order = np.argsort(xs[:m], kind="mergesort")
            xo = xs[:m][order]
            for i in range(m):
                ys[i] = y[idx[s + order[i]]]
            # pass 1: minimum valid sse
            cs = 0.0
            cs2 = 0.0
            lowest = np.inf
            any_valid = False
            for i in range(m - 1):
                cs += ys[i]
                cs2 += ys[i] * ys[i]
                nl = i + 1.0
                nr = m - nl
                if nl >= min_leaf and nr >= min_leaf and xo[i] < xo[i + 1]:
                    sse = (cs2 - cs * cs / nl) + ((total2 - cs2) - (total - cs) * (total - cs) / nr)
                    any_valid = True
                    if sse < lowest:
                        lowest = sse
            if not any_valid:
                continue
            # pass 2: first position within tolerance of the minimum
            cs = 0.0
            cs2 = 0.0
            pick = -1
            pick_sse = 0.0
            for i in range(m - 1):
                cs += ys[i]
                cs2 += ys[i] * ys[i]
                nl = i + 1.0
                nr = m - nl
                if nl >= min_leaf and nr >= min_leaf and xo[i] < xo[i + 1]:
                    sse = (cs2 - cs * cs / nl) + ((total2 - cs2) - (total - cs) * (total - cs) / nr)
                    if sse <= lowest + tol:
                        pick = i
                        pick_sse = sse
                        break
            gain = parent_sse - pick_sse
            if (not found) or gain > best_gain + tol:
                thr = 0.5 * (xo[pick] + xo[pick + 1])
                if not thr < xo[pick + 1]:
                    thr = xo[pick]
                found = True
                best_gain = gain
                best_f = f
                best_thr = thr
        if not found:
            continue

        nl_count = 0
        for i in range(s, e):
            if X[idx[i], best_f] <= best_thr:
                buf[nl_count] = idx[i]
                nl_count += 1
        nr_count = 0
        for i in range(s, e):
            if not X[idx[i], best_f] <= best_thr:
                buf[nl_count + nr_count] = idx[i]
                nr_count += 1
        for i in range(m):
            idx[s + i] = buf[i]
        mid = s + nl_count

        importance[best_f] += max(best_gain, 0.0)
        feature[node] = best_f
        threshold[node] = best_thr
        lnode = count
        rnode = count + 1
        count += 2
        acc = 0.0
        for i in range(s, mid):
            acc += y[idx[i]]
        value[lnode] = acc / nl_count
        acc = 0.0
        for i in range(mid, e):
            acc += y[idx[i]]
        value[rnode] = acc / nr_count
        left[node] = lnode
        right[node] = rnode
        st_node[sp] = rnode
        st_s[sp] = mid
        st_e[sp] = e
        sp += 1
        st_node[sp] = lnode
        st_s[sp] = s
        st_e[sp] = mid
        sp += 1

    return (
        feature[:count].copy(),
        threshold[:count].copy(),
        left[:count].copy(),
        right[:count].copy(),
        value[:count].copy(),
        importance,
    )
