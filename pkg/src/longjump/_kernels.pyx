# cython: language_level=3
"""Compiled event loops; see ``_pykernels`` for the reference semantics."""

from libc.math cimport log1p
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t i64


cdef inline Py_ssize_t _jump(const double[::1] cdf, double u) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = cdf.shape[0] - 1, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if cdf[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


cdef inline i64 _pmod(i64 a, i64 N) noexcept nogil:
    cdef i64 r = a % N
    if r < 0:
        r += N
    return r


cdef inline i64 _target(i64 s, Py_ssize_t j, const i64[:, ::1] disp, i64 N, int d) noexcept nogil:
    cdef i64 t = 0, mult = 1, rem = s, c
    cdef int a
    if d == 1:
        return _pmod(s + disp[j, 0], N)
    for a in range(d - 1, -1, -1):
        c = rem % N
        rem = rem // N
        t += _pmod(c + disp[j, a], N) * mult
        mult *= N
    return t


cdef inline double _g(i64 n, const double[::1] gtab, double gslope) noexcept nogil:
    cdef i64 M = gtab.shape[0] - 1
    if n <= M:
        return gtab[n]
    return gtab[M] + gslope * <double>(n - M)


cdef inline Py_ssize_t _tree_sample(double[::1] tree, Py_ssize_t L, double r) noexcept nogil:
    cdef Py_ssize_t i = 1
    cdef double left
    while i < L:
        left = tree[2 * i]
        if r < left or tree[2 * i + 1] <= 0.0:
            i = 2 * i
        else:
            r -= left
            i = 2 * i + 1
    return i - L


cdef inline void _tree_set(double[::1] tree, Py_ssize_t L, Py_ssize_t x, double w) noexcept nogil:
    cdef Py_ssize_t i = L + x
    tree[i] = w
    i >>= 1
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i >>= 1


def exclusion_run(signed char[::1] occ, i64[::1] pos, const double[::1] cdf,
                  const i64[:, ::1] disp, i64 N, int d, double rate, double[::1] clock,
                  double t_end, const double[::1] u, Py_ssize_t upos, i64 max_events,
                  i64[::1] stats, i64[::1] last, const double[:, ::1] lin,
                  double[::1] lin_cur, double[::1] lin_acc, const double[:, ::1] quad,
                  double[::1] quad_st):
    cdef Py_ssize_t P = pos.shape[0], nu = u.shape[0], nobs = lin.shape[0]
    cdef Py_ssize_t S = occ.shape[0], i, j, k, b
    cdef bint use_quad = quad.shape[0] > 0
    cdef double t = clock[0], t_next = clock[1], dt, dq
    cdef i64 nev = 0, x, y, moved
    cdef int status = 0
    with nogil:
        while True:
            if t_next > t_end:
                dt = t_end - t
                for k in range(nobs):
                    lin_acc[k] += lin_cur[k] * dt
                if use_quad:
                    quad_st[1] += quad_st[0] * dt
                t = t_end
                status = 0
                break
            if nev >= max_events:
                status = 1
                break
            if upos + 3 > nu:
                status = 2
                break
            dt = t_next - t
            for k in range(nobs):
                lin_acc[k] += lin_cur[k] * dt
            if use_quad:
                quad_st[1] += quad_st[0] * dt
            t = t_next
            i = <Py_ssize_t>(u[upos] * P)
            if i >= P:
                i = P - 1
            j = _jump(cdf, u[upos + 1])
            x = pos[i]
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
            t_next = t + (-log1p(-u[upos + 2])) / (P * rate)
            upos += 3
            nev += 1
    clock[0] = t
    clock[1] = t_next
    return nev, upos, status


def zr_run(i64[::1] occ, double[::1] tree, Py_ssize_t L, const double[::1] gtab, double gslope,
           const double[::1] cdf, const i64[:, ::1] disp, i64 N, int d, double rate,
           double[::1] clock, double t_end, const double[::1] u, Py_ssize_t upos,
           i64 max_events, i64[::1] stats, i64[::1] last, const double[:, ::1] lin,
           double[::1] lin_cur, double[::1] lin_acc, i64[::1] tag, double[::1] tag_f,
           i64[::1] jcount):
    cdef Py_ssize_t nu = u.shape[0], nobs = lin.shape[0], j, k
    cdef bint tagged = tag[0] != 0
    cdef Py_ssize_t need = 4 if tagged else 3
    cdef double t = clock[0], t_next = clock[1], dt, gx_old, gy_old, gx, gy
    cdef i64 nev = 0, x, y, s, tag_moved
    cdef int status = 0, a
    with nogil:
        while True:
            if t_next > t_end:
                dt = t_end - t
                for k in range(nobs):
                    lin_acc[k] += lin_cur[k] * dt
                tag_f[0] += tag_f[1] * dt
                t = t_end
                status = 0
                break
            if nev >= max_events:
                status = 1
                break
            if upos + need > nu:
                status = 2
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
                tag_f[1] = _g(occ[s], gtab, gslope) / <double>occ[s]
            stats[0] += 1
            last[0] = x
            last[1] = y
            last[2] = tag_moved
            t_next = t + (-log1p(-u[upos + 2])) / (tree[1] * rate)
            upos += need
            nev += 1
    clock[0] = t
    clock[1] = t_next
    return nev, upos, status


cdef inline double _env_weight(i64[::1] occ, i64 s, i64 X, const double[::1] gtab,
                               double gslope) noexcept nogil:
    cdef i64 n = occ[s]
    if s == X:
        if n <= 1:
            return 0.0
        return <double>(n - 1) * _g(n, gtab, gslope) / <double>n
    return _g(n, gtab, gslope)


def env_run(i64[::1] occ, double[::1] tree, Py_ssize_t L, const double[::1] gtab, double gslope,
            const double[::1] cdf, const i64[:, ::1] disp, i64 N, int d, double rate,
            double[::1] clock, double t_end, const double[::1] u, Py_ssize_t upos,
            i64 max_events, i64[::1] stats, i64[::1] last, i64[::1] tag, double[::1] tag_f,
            i64[::1] jcount):
    cdef Py_ssize_t nu = u.shape[0], S = occ.shape[0], j, leaf
    cdef double t = clock[0], t_next = clock[1], b
    cdef i64 nev = 0, x, y, X, Xn, translated
    cdef int status = 0, a
    with nogil:
        while True:
            if t_next > t_end:
                tag_f[0] += tag_f[1] * (t_end - t)
                t = t_end
                status = 0
                break
            if nev >= max_events:
                status = 1
                break
            if upos + 3 > nu:
                status = 2
                break
            tag_f[0] += tag_f[1] * (t_next - t)
            t = t_next
            leaf = _tree_sample(tree, L, u[upos] * tree[1])
            j = _jump(cdf, u[upos + 1])
            X = tag[1]
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
            Xn = tag[1]
            _tree_set(tree, L, x, _env_weight(occ, x, Xn, gtab, gslope))
            _tree_set(tree, L, y, _env_weight(occ, y, Xn, gtab, gslope))
            if X != x and X != y:
                _tree_set(tree, L, X, _env_weight(occ, X, Xn, gtab, gslope))
            b = _g(occ[Xn], gtab, gslope) / <double>occ[Xn]
            _tree_set(tree, L, S, b)
            tag_f[1] = b
            stats[0] += 1
            last[0] = x
            last[1] = y
            last[2] = translated
            t_next = t + (-log1p(-u[upos + 2])) / (tree[1] * rate)
            upos += 3
            nev += 1
    clock[0] = t
    clock[1] = t_next
    return nev, upos, status


def two_class_run(i64[::1] xi1, i64[::1] dl, double[::1] tree, Py_ssize_t L,
                  const double[::1] gtab, double gslope, const double[::1] cdf,
                  const i64[:, ::1] disp, i64 N, int d, double rate, double[::1] clock,
                  double t_end, const double[::1] u, Py_ssize_t upos, i64 max_events,
                  i64[::1] stats, i64[::1] last, bint check, i64[::1] viol):
    cdef Py_ssize_t nu = u.shape[0], j
    cdef double t = clock[0], t_next = clock[1], w1, wt
    cdef i64 nev = 0, x, y, cls
    cdef int status = 0, bad
    with nogil:
        while True:
            if t_next > t_end:
                t = t_end
                status = 0
                break
            if nev >= max_events:
                status = 1
                break
            if upos + 4 > nu:
                status = 2
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
            t_next = t + (-log1p(-u[upos + 3])) / (tree[1] * rate)
            upos += 4
            nev += 1
            if bad:
                status = 3
                break
    clock[0] = t
    clock[1] = t_next
    return nev, upos, status


cdef inline double _four_weight(i64[::1] B, i64[::1] G, i64[::1] R, i64[::1] W, i64 s,
                                const double[::1] gtab, double gslope) noexcept nogil:
    cdef i64 nbg = B[s] + G[s]
    cdef double gbg = _g(nbg, gtab, gslope)
    return gbg + (_g(nbg + R[s], gtab, gslope) - gbg) + (_g(nbg + W[s], gtab, gslope) - gbg)


def four_color_run(i64[::1] B, i64[::1] G, i64[::1] R, i64[::1] W, double[::1] tree,
                   Py_ssize_t L, const double[::1] gtab, double gslope, const double[::1] cdf,
                   const i64[:, ::1] disp, i64 N, int d, double rate, double[::1] clock,
                   double t_end, const double[::1] u, Py_ssize_t upos, i64 max_events,
                   i64[::1] stats, i64[::1] last, bint check, i64[::1] viol):
    cdef Py_ssize_t nu = u.shape[0], j
    cdef double t = clock[0], t_next = clock[1], gb, gbg, gr, gw, r
    cdef i64 nev = 0, x, y, s, cls, nbg, mass_r = 0, mass_w = 0
    cdef int status = 0, q, bad
    with nogil:
        while True:
            if t_next > t_end:
                t = t_end
                status = 0
                break
            if nev >= max_events:
                status = 1
                break
            if upos + 4 > nu:
                status = 2
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
                for q in range(2):
                    s = x if q == 0 else y
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
            t_next = t + (-log1p(-u[upos + 3])) / (tree[1] * rate)
            upos += 4
            nev += 1
            if bad:
                status = 3
                break
    clock[0] = t
    clock[1] = t_next
    return nev, upos, status
