"""Pure-Python event loops; reference semantics for ``_kernels.pyx``.

Every loop consumes a caller-supplied buffer of uniforms ``u`` starting at
``upos`` and returns ``(n_events, upos, status)`` with status

* 0 -- the next event lies beyond ``t_end`` (clock parked at ``t_end``),
* 1 -- ``max_events`` reached,
* 2 -- fewer uniforms left than one event needs; refill and call again,
* 3 -- (coupling loops with ``check``) an invariant failed at the last event.

The compiled module implements the same statements in the same order, so
both backends produce identical trajectories from identical buffers.
"""

import math

REACHED_T_END = 0
MAX_EVENTS = 1
NEED_UNIFORMS = 2
INVARIANT_VIOLATION = 3


def _jump(cdf, u):
    lo = 0
    hi = len(cdf) - 1
    while lo < hi:
        mid = (lo + hi) >> 1
        if cdf[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


def _target(s, j, disp, N, d):
    if d == 1:
        t = (s + disp[j, 0]) % N
        return int(t)
    t = 0
    mult = 1
    rem = s
    for a in range(d - 1, -1, -1):
        c = rem % N
        rem //= N
        t += ((c + disp[j, a]) % N) * mult
        mult *= N
    return int(t)


def _g(n, gtab, gslope):
    M = len(gtab) - 1
    if n <= M:
        return gtab[n]
    return gtab[M] + gslope * (n - M)


def _tree_sample(tree, L, r):
    i = 1
    while i < L:
        left = tree[2 * i]
        if r < left or tree[2 * i + 1] <= 0.0:
            i = 2 * i
        else:
            r -= left
            i = 2 * i + 1
    return i - L


def _tree_set(tree, L, x, w):
    i = L + x
    tree[i] = w
    i >>= 1
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i >>= 1


def exclusion_run(occ, pos, cdf, disp, N, d, rate, clock, t_end, u, upos, max_events,
                  stats, last, lin, lin_cur, lin_acc, quad, quad_st):
    P = pos.shape[0]
    nu = u.shape[0]
    nobs = lin.shape[0]
    use_quad = quad.shape[0] > 0
    S = occ.shape[0]
    t = clock[0]
    t_next = clock[1]
    nev = 0
    status = REACHED_T_END
    while True:
        if t_next > t_end:
            dt = t_end - t
            for k in range(nobs):
                lin_acc[k] += lin_cur[k] * dt
            if use_quad:
                quad_st[1] += quad_st[0] * dt
            t = t_end
            status = REACHED_T_END
            break
        if nev >= max_events:
            status = MAX_EVENTS
            break
        if upos + 3 > nu:
            status = NEED_UNIFORMS
            break
        dt = t_next - t
        for k in range(nobs):
            lin_acc[k] += lin_cur[k] * dt
        if use_quad:
            quad_st[1] += quad_st[0] * dt
        t = t_next
        i = int(u[upos] * P)
        if i >= P:
            i = P - 1
        j = _jump(cdf, u[upos + 1])
        x = int(pos[i])
        y = _target(x, j, disp, N, d)
        stats[0] += 1
        moved = 0
        if occ[y] == 0:
            moved = 1
            if use_quad:
                dq = 0.0
                for b in range(S):
                    if b != x and b != y:
                        dq += (quad[y, b] - quad[x, b]) * (1 - 2 * occ[b])
                quad_st[0] += dq
            occ[x] = 0
            occ[y] = 1
            pos[i] = y
            stats[1] += 1
            for k in range(nobs):
                lin_cur[k] += lin[k, y] - lin[k, x]
        last[0] = x
        last[1] = y
        last[2] = moved
        t_next = t + (-math.log1p(-u[upos + 2])) / (P * rate)
        upos += 3
        nev += 1
    clock[0] = t
    clock[1] = t_next
    return nev, upos, status


def zr_run(occ, tree, L, gtab, gslope, cdf, disp, N, d, rate, clock, t_end, u, upos,
           max_events, stats, last, lin, lin_cur, lin_acc, tag, tag_f, jcount):
    nu = u.shape[0]
    nobs = lin.shape[0]
    tagged = tag[0] != 0
    need = 4 if tagged else 3
    t = clock[0]
    t_next = clock[1]
    nev = 0
    status = REACHED_T_END
    while True:
        if t_next > t_end:
            dt = t_end - t
            for k in range(nobs):
                lin_acc[k] += lin_cur[k] * dt
            tag_f[0] += tag_f[1] * dt
            t = t_end
            status = REACHED_T_END
            break
        if nev >= max_events:
            status = MAX_EVENTS
            break
        if upos + need > nu:
            status = NEED_UNIFORMS
            break
        dt = t_next - t
        for k in range(nobs):
            lin_acc[k] += lin_cur[k] * dt
        tag_f[0] += tag_f[1] * dt
        t = t_next
        x = _tree_sample(tree, L, u[upos] * tree[1])
        j = _jump(cdf, u[upos + 1])
        y = _target(x, j, disp, N, d)
        tag_moved = 0
        if tagged and x == tag[1]:
            if u[upos + 3] * occ[x] < 1.0:
                tag_moved = 1
                tag[1] = y
                for a in range(d):
                    tag[2 + a] += disp[j, a]
                jcount[j] += 1
                stats[1] += 1
        gx_old = _g(occ[x], gtab, gslope)
        gy_old = _g(occ[y], gtab, gslope)
        occ[x] -= 1
        occ[y] += 1
        gx = _g(occ[x], gtab, gslope)
        gy = _g(occ[y], gtab, gslope)
        _tree_set(tree, L, x, gx)
        _tree_set(tree, L, y, gy)
        for k in range(nobs):
            lin_cur[k] += (gx - gx_old) * lin[k, x] + (gy - gy_old) * lin[k, y]
        if tagged:
            s = tag[1]
            tag_f[1] = _g(occ[s], gtab, gslope) / occ[s]
        stats[0] += 1
        last[0] = x
        last[1] = y
        last[2] = tag_moved
        t_next = t + (-math.log1p(-u[upos + 2])) / (tree[1] * rate)
        upos += need
        nev += 1
    clock[0] = t
    clock[1] = t_next
    return nev, upos, status


def _env_weight(occ, s, X, gtab, gslope):
    n = occ[s]
    if s == X:
        if n <= 1:
            return 0.0
        return (n - 1) * _g(n, gtab, gslope) / n
    return _g(n, gtab, gslope)


def env_run(occ, tree, L, gtab, gslope, cdf, disp, N, d, rate, clock, t_end, u, upos,
            max_events, stats, last, tag, tag_f, jcount):
    nu = u.shape[0]
    S = occ.shape[0]
    t = clock[0]
    t_next = clock[1]
    nev = 0
    status = REACHED_T_END
    while True:
        if t_next > t_end:
            tag_f[0] += tag_f[1] * (t_end - t)
            t = t_end
            status = REACHED_T_END
            break
        if nev >= max_events:
            status = MAX_EVENTS
            break
        if upos + 3 > nu:
            status = NEED_UNIFORMS
            break
        tag_f[0] += tag_f[1] * (t_next - t)
        t = t_next
        leaf = _tree_sample(tree, L, u[upos] * tree[1])
        j = _jump(cdf, u[upos + 1])
        X = int(tag[1])
        translated = 0
        if leaf == S:
            translated = 1
            x = X
            y = _target(X, j, disp, N, d)
            occ[x] -= 1
            occ[y] += 1
            tag[1] = y
            for a in range(d):
                tag[2 + a] += disp[j, a]
            jcount[j] += 1
            stats[1] += 1
        else:
            x = leaf
            y = _target(x, j, disp, N, d)
            occ[x] -= 1
            occ[y] += 1
        Xn = int(tag[1])
        _tree_set(tree, L, x, _env_weight(occ, x, Xn, gtab, gslope))
        _tree_set(tree, L, y, _env_weight(occ, y, Xn, gtab, gslope))
        if X != x and X != y:
            _tree_set(tree, L, X, _env_weight(occ, X, Xn, gtab, gslope))
        b = _g(occ[Xn], gtab, gslope) / occ[Xn]
        _tree_set(tree, L, S, b)
        tag_f[1] = b
        stats[0] += 1
        last[0] = x
        last[1] = y
        last[2] = translated
        t_next = t + (-math.log1p(-u[upos + 2])) / (tree[1] * rate)
        upos += 3
        nev += 1
    clock[0] = t
    clock[1] = t_next
    return nev, upos, status


def two_class_run(xi1, dl, tree, L, gtab, gslope, cdf, disp, N, d, rate, clock, t_end, u,
                  upos, max_events, stats, last, check, viol):
    nu = u.shape[0]
    t = clock[0]
    t_next = clock[1]
    nev = 0
    status = REACHED_T_END
    while True:
        if t_next > t_end:
            t = t_end
            status = REACHED_T_END
            break
        if nev >= max_events:
            status = MAX_EVENTS
            break
        if upos + 4 > nu:
            status = NEED_UNIFORMS
            break
        t = t_next
        x = _tree_sample(tree, L, u[upos] * tree[1])
        w1 = _g(xi1[x], gtab, gslope)
        wt = _g(xi1[x] + dl[x], gtab, gslope)
        j = _jump(cdf, u[upos + 2])
        y = _target(x, j, disp, N, d)
        if u[upos + 1] * wt < w1:
            cls = 0
            xi1[x] -= 1
            xi1[y] += 1
        else:
            cls = 1
            dl[x] -= 1
            dl[y] += 1
        stats[cls] += 1
        _tree_set(tree, L, x, _g(xi1[x] + dl[x], gtab, gslope))
        _tree_set(tree, L, y, _g(xi1[y] + dl[y], gtab, gslope))
        bad = 0
        if check:
            if xi1[x] < 0 or dl[x] < 0 or xi1[y] < 0 or dl[y] < 0:
                viol[0] += 1
                bad = 1
        last[0] = x
        last[1] = y
        last[2] = cls
        t_next = t + (-math.log1p(-u[upos + 3])) / (tree[1] * rate)
        upos += 4
        nev += 1
        if bad:
            status = INVARIANT_VIOLATION
            break
    clock[0] = t
    clock[1] = t_next
    return nev, upos, status


def _four_weight(B, G, R, W, s, gtab, gslope):
    nbg = B[s] + G[s]
    gbg = _g(nbg, gtab, gslope)
    return gbg + (_g(nbg + R[s], gtab, gslope) - gbg) + (_g(nbg + W[s], gtab, gslope) - gbg)


def four_color_run(B, G, R, W, tree, L, gtab, gslope, cdf, disp, N, d, rate, clock, t_end, u,
                   upos, max_events, stats, last, check, viol):
    nu = u.shape[0]
    t = clock[0]
    t_next = clock[1]
    nev = 0
    status = REACHED_T_END
    while True:
        if t_next > t_end:
            t = t_end
            status = REACHED_T_END
            break
        if nev >= max_events:
            status = MAX_EVENTS
            break
        if upos + 4 > nu:
            status = NEED_UNIFORMS
            break
        t = t_next
        x = _tree_sample(tree, L, u[upos] * tree[1])
        nbg = B[x] + G[x]
        gb = _g(B[x], gtab, gslope)
        gbg = _g(nbg, gtab, gslope)
        gr = _g(nbg + R[x], gtab, gslope) - gbg
        gw = _g(nbg + W[x], gtab, gslope) - gbg
        r = u[upos + 1] * (gbg + gr + gw)
        j = _jump(cdf, u[upos + 2])
        y = _target(x, j, disp, N, d)
        bad = 0
        if check:
            mass_r = B[x] + G[x] + R[x] + B[y] + G[y] + R[y]
            mass_w = B[x] + G[x] + W[x] + B[y] + G[y] + W[y]
        if r < gb:
            cls = 0
            B[x] -= 1
            B[y] += 1
        elif r < gbg:
            cls = 1
            G[x] -= 1
            G[y] += 1
        elif r < gbg + gr:
            R[x] -= 1
            if W[y] > 0:
                cls = 4
                W[y] -= 1
                G[y] += 1
            else:
                cls = 2
                R[y] += 1
        else:
            W[x] -= 1
            if R[y] > 0:
                cls = 5
                R[y] -= 1
                G[y] += 1
            else:
                cls = 3
                W[y] += 1
        stats[cls] += 1
        _tree_set(tree, L, x, _four_weight(B, G, R, W, x, gtab, gslope))
        _tree_set(tree, L, y, _four_weight(B, G, R, W, y, gtab, gslope))
        if check:
            for s in (x, y):
                if B[s] < 0 or G[s] < 0 or R[s] < 0 or W[s] < 0:
                    viol[0] += 1
                    bad = 1
                if R[s] > 0 and W[s] > 0:
                    viol[1] += 1
                    bad = 1
            if mass_r != B[x] + G[x] + R[x] + B[y] + G[y] + R[y]:
                viol[2] += 1
                bad = 1
            if mass_w != B[x] + G[x] + W[x] + B[y] + G[y] + W[y]:
                viol[2] += 1
                bad = 1
        last[0] = x
        last[1] = y
        last[2] = cls
        t_next = t + (-math.log1p(-u[upos + 3])) / (tree[1] * rate)
        upos += 4
        nev += 1
        if bad:
            status = INVARIANT_VIOLATION
            break
    clock[0] = t
    clock[1] = t_next
    return nev, upos, status
