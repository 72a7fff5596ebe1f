# distutils: language = c++
# cython: language_level=3, boundscheck=False, wraparound=False
# cython: cdivision=True, initializedcheck=False
"""Compiled backend: per-node C loops for every hot kernel.

Mirrors the numpy reference backend.  The sampled-median, threshold
convolution, multiphase, and denoise paths reproduce the reference bit
for bit (same sort order, same accumulation order, same comparisons);
the arc-bisection median agrees within its level tolerance.
"""

from libc.math cimport floor, fmod, cos, sin, M_PI, INFINITY
from libc.string cimport memset
from libcpp.vector cimport vector
from libcpp.pair cimport pair
from libcpp.algorithm cimport sort as cpp_sort

import numpy as np

BACKEND_KIND = "compiled"

ctypedef pair[double, Py_ssize_t] vpair


cdef inline Py_ssize_t _wrap(Py_ssize_t i, Py_ssize_t n, bint periodic) nogil:
    if periodic:
        i = i % n
        if i < 0:
            i += n
        return i
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


cdef inline double _eval_bilinear(const double[:, ::1] v,
                                  Py_ssize_t nx, Py_ssize_t ny,
                                  double hx, double hy,
                                  bint periodic_x, bint periodic_y,
                                  double px, double py) nogil:
    """Bilinear field value at a physical point, replicating edges."""
    cdef double lx = nx * hx
    cdef double ly = ny * hy
    cdef double u, w, fl, tx, ty
    cdef Py_ssize_t i0, i1, j0, j1
    if periodic_x:
        u = fmod(px, lx)
        if u < 0.0:
            u += lx
        u = u / hx
        fl = floor(u)
        tx = u - fl
        i0 = <Py_ssize_t> fl
        if i0 < 0:
            i0 = 0
        elif i0 > nx - 1:
            i0 = nx - 1
        i1 = (i0 + 1) % nx
    else:
        u = px
        if u < 0.0:
            u = 0.0
        elif u > lx:
            u = lx
        u = u / hx
        fl = floor(u)
        i0 = <Py_ssize_t> fl
        if i0 < 0:
            i0 = 0
        elif i0 > nx - 1:
            i0 = nx - 1
        tx = u - i0
        i1 = i0 + 1
        if i1 > nx - 1:
            i1 = nx - 1
    if periodic_y:
        w = fmod(py, ly)
        if w < 0.0:
            w += ly
        w = w / hy
        fl = floor(w)
        ty = w - fl
        j0 = <Py_ssize_t> fl
        if j0 < 0:
            j0 = 0
        elif j0 > ny - 1:
            j0 = ny - 1
        j1 = (j0 + 1) % ny
    else:
        w = py
        if w < 0.0:
            w = 0.0
        elif w > ly:
            w = ly
        w = w / hy
        fl = floor(w)
        j0 = <Py_ssize_t> fl
        if j0 < 0:
            j0 = 0
        elif j0 > ny - 1:
            j0 = ny - 1
        ty = w - j0
        j1 = j0 + 1
        if j1 > ny - 1:
            j1 = ny - 1
    return (v[i0, j0] * (1.0 - tx) * (1.0 - ty)
            + v[i1, j0] * tx * (1.0 - ty)
            + v[i0, j1] * (1.0 - tx) * ty
            + v[i1, j1] * tx * ty)


cdef inline void _gather_node(const double[:, ::1] v,
                              Py_ssize_t nx, Py_ssize_t ny,
                              Py_ssize_t i, Py_ssize_t j,
                              const Py_ssize_t[::1] di, const Py_ssize_t[::1] dj,
                              const double[::1] fx, const double[::1] fy,
                              bint lattice, bint periodic_x, bint periodic_y,
                              double* samp, Py_ssize_t m) nogil:
    """Stencil samples at one node: lattice reads or four-corner blends."""
    cdef Py_ssize_t k, ia, ib, ja, jb
    cdef double v00, v10, v01, v11, tx, ty
    if lattice:
        for k in range(m):
            ia = _wrap(i + di[k], nx, periodic_x)
            ja = _wrap(j + dj[k], ny, periodic_y)
            samp[k] = v[ia, ja]
    else:
        for k in range(m):
            ia = _wrap(i + di[k], nx, periodic_x)
            ib = _wrap(i + di[k] + 1, nx, periodic_x)
            ja = _wrap(j + dj[k], ny, periodic_y)
            jb = _wrap(j + dj[k] + 1, ny, periodic_y)
            v00 = v[ia, ja]
            v10 = v[ib, ja]
            v01 = v[ia, jb]
            v11 = v[ib, jb]
            tx = fx[k]
            ty = fy[k]
            samp[k] = (v00 * (1.0 - tx) * (1.0 - ty)
                       + v10 * tx * (1.0 - ty)
                       + v01 * (1.0 - tx) * ty
                       + v11 * tx * ty)


cdef bint _is_lattice(const double[::1] fx, const double[::1] fy) nogil:
    cdef Py_ssize_t k
    for k in range(fx.shape[0]):
        if fx[k] != 0.0 or fy[k] != 0.0:
            return False
    return True


# ---------------------------------------------------------------------------
# sampled weighted median


def sampled_median_grid(values, di, dj, fx, fy, weights,
                        bint periodic_x, bint periodic_y, rule):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const Py_ssize_t[::1] cdi = np.ascontiguousarray(di, dtype=np.intp)
    cdef const Py_ssize_t[::1] cdj = np.ascontiguousarray(dj, dtype=np.intp)
    cdef const double[::1] cfx = np.ascontiguousarray(fx, dtype=np.float64)
    cdef const double[::1] cfy = np.ascontiguousarray(fy, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t nx = v.shape[0], ny = v.shape[1], m = w.shape[0]
    cdef bint midpoint = (rule == "midpoint")
    out_arr = np.empty((nx, ny))
    cdef double[:, ::1] out = out_arr
    cdef vector[double] samp
    cdef vector[vpair] pairs
    samp.resize(m)
    pairs.resize(m)
    cdef Py_ssize_t i, j, k, t
    cdef bint lattice
    cdef double total, half, cum, cum_prev, res
    with nogil:
        lattice = _is_lattice(cfx, cfy)
        for i in range(nx):
            for j in range(ny):
                _gather_node(v, nx, ny, i, j, cdi, cdj, cfx, cfy,
                             lattice, periodic_x, periodic_y, samp.data(), m)
                for k in range(m):
                    pairs[k] = vpair(samp[k], k)
                cpp_sort(pairs.begin(), pairs.end())
                total = 0.0
                for t in range(m):
                    total += w[pairs[t].second]
                half = 0.5 * total
                cum = 0.0
                cum_prev = 0.0
                res = pairs[m - 1].first
                for t in range(m):
                    cum_prev = cum
                    cum += w[pairs[t].second]
                    if cum > half:
                        res = pairs[t].first
                        if midpoint and t >= 1 and cum_prev == half:
                            res = 0.5 * (pairs[t - 1].first + res)
                        break
                out[i, j] = res
    return out_arr


# ---------------------------------------------------------------------------
# threshold convolution


def td_convolve(values, di, dj, weights, bint periodic_x, bint periodic_y):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const Py_ssize_t[::1] cdi = np.ascontiguousarray(di, dtype=np.intp)
    cdef const Py_ssize_t[::1] cdj = np.ascontiguousarray(dj, dtype=np.intp)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t nx = v.shape[0], ny = v.shape[1], m = w.shape[0]
    out_arr = np.zeros((nx, ny))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k, ia, ja
    cdef double total = 0.0, wk
    with nogil:
        for k in range(m):
            wk = w[k]
            for i in range(nx):
                ia = _wrap(i + cdi[k], nx, periodic_x)
                for j in range(ny):
                    ja = _wrap(j + cdj[k], ny, periodic_y)
                    out[i, j] += wk * v[ia, ja]
            total += wk
    return out_arr, total


# ---------------------------------------------------------------------------
# arc-bisection median


cdef struct Seg:
    double a
    double b
    double va
    double vb


cdef double _arc_measure_node(const double[:, ::1] v,
                              Py_ssize_t nx, Py_ssize_t ny,
                              double hx, double hy,
                              bint periodic_x, bint periodic_y,
                              double cx, double cy, double r,
                              double lam, double eps,
                              vector[Seg]& stack) nogil:
    """Accepted arc measure of {field >= lam} on one circle (depth-first)."""
    cdef double measure = 0.0
    cdef double a, b, mid, va, vb, vm, lo, hi
    cdef Seg seg
    cdef int q
    stack.clear()
    for q in range(4):
        seg.a = 0.5 * M_PI * q
        seg.b = seg.a + 0.5 * M_PI
        seg.va = _eval_bilinear(v, nx, ny, hx, hy, periodic_x, periodic_y,
                                cx + r * cos(seg.a), cy + r * sin(seg.a))
        seg.vb = _eval_bilinear(v, nx, ny, hx, hy, periodic_x, periodic_y,
                                cx + r * cos(seg.b), cy + r * sin(seg.b))
        stack.push_back(seg)
    while stack.size() > 0:
        seg = stack.back()
        stack.pop_back()
        a = seg.a
        b = seg.b
        va = seg.va
        vb = seg.vb
        if b - a < eps:
            continue
        if va < vb:
            lo = va
            hi = vb
        else:
            lo = vb
            hi = va
        if lo >= lam:
            measure += b - a
        elif lam < hi:
            mid = 0.5 * (a + b)
            vm = _eval_bilinear(v, nx, ny, hx, hy, periodic_x, periodic_y,
                                cx + r * cos(mid), cy + r * sin(mid))
            seg.a = a
            seg.b = mid
            seg.va = va
            seg.vb = vm
            stack.push_back(seg)
            seg.a = mid
            seg.b = b
            seg.va = vm
            seg.vb = vb
            stack.push_back(seg)
    return measure


def bisection_median_grid(values, radii, cweights,
                          double eps_arc, double eps_lambda, double lip,
                          double hx, double hy,
                          bint periodic_x, bint periodic_y):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[::1] rr = np.ascontiguousarray(radii, dtype=np.float64)
    cdef const double[::1] cc = np.ascontiguousarray(cweights, dtype=np.float64)
    cdef Py_ssize_t nx = v.shape[0], ny = v.shape[1], nc = rr.shape[0]
    out_arr = np.empty((nx, ny))
    cdef double[:, ::1] out = out_arr
    cdef int n_pre = 64
    cdef vector[double] cos_t, sin_t
    cos_t.resize(n_pre)
    sin_t.resize(n_pre)
    cdef int p
    for p in range(n_pre):
        cos_t[p] = cos(2.0 * M_PI * p / n_pre)
        sin_t[p] = sin(2.0 * M_PI * p / n_pre)
    cdef double mass = 0.0
    cdef Py_ssize_t q
    for q in range(nc):
        mass += cc[q] * rr[q] * 2.0 * M_PI
    cdef vector[Seg] stack
    cdef Py_ssize_t i, j
    cdef double cx, cy, lo, hi, pad, val, mid, psi, r
    with nogil:
        for i in range(nx):
            cx = i * hx
            for j in range(ny):
                cy = j * hy
                lo = INFINITY
                hi = -INFINITY
                pad = 0.0
                for q in range(nc):
                    r = rr[q]
                    for p in range(n_pre):
                        val = _eval_bilinear(v, nx, ny, hx, hy,
                                             periodic_x, periodic_y,
                                             cx + r * cos_t[p], cy + r * sin_t[p])
                        if val < lo:
                            lo = val
                        if val > hi:
                            hi = val
                    val = 0.5 * lip * r * 2.0 * M_PI / n_pre
                    if val > pad:
                        pad = val
                lo -= pad
                hi += pad
                while hi - lo > eps_lambda:
                    mid = 0.5 * (lo + hi)
                    psi = 0.0
                    for q in range(nc):
                        psi += cc[q] * rr[q] * _arc_measure_node(
                            v, nx, ny, hx, hy, periodic_x, periodic_y,
                            cx, cy, rr[q], mid, eps_arc, stack)
                    psi = psi / mass
                    if psi >= 0.5:
                        lo = mid
                    else:
                        hi = mid
                out[i, j] = 0.5 * (lo + hi)
    return out_arr


# ---------------------------------------------------------------------------
# multiphase walk


cdef inline bint _mp_ok(const double[:, ::1] sig, Py_ssize_t n_phase,
                        Py_ssize_t i, const double* tall,
                        double cum, double total) nogil:
    """Phase-i winning check from per-class processed tallies.

    Cost accumulation order matches the reference backend: remainder
    term first, then class terms in ascending class order, skipping
    zero tensions, so the doubles agree bit for bit.
    """
    cdef double cost_i, cost_j
    cdef Py_ssize_t j, c
    cost_i = sig[i, i] * (total - cum)
    for c in range(n_phase):
        if sig[i, c] != 0.0:
            cost_i = cost_i + sig[i, c] * tall[c]
    for j in range(n_phase):
        if j == i:
            continue
        cost_j = sig[i, j] * (total - cum)
        for c in range(n_phase):
            if sig[j, c] != 0.0:
                cost_j = cost_j + sig[j, c] * tall[c]
        if j < i:
            if not (cost_i < cost_j):
                return False
        else:
            if not (cost_i <= cost_j):
                return False
    return True


cdef double _mp_walk_sorted(vector[vpair]& pairs, const int* comp,
                            const double[::1] w, const double[:, ::1] sig,
                            Py_ssize_t i, Py_ssize_t n_phase, Py_ssize_t m,
                            double* tall, bint mid) nogil:
    """Sequential walk over fully sorted samples (general weights).

    mid pairs the exit value with the largest sample value strictly
    below it; the pair is defined by value, not by sorted position, so
    tie order cannot change the result.
    """
    cdef Py_ssize_t t, c, k, q
    cdef double total = 0.0, cum = 0.0, wk
    for c in range(n_phase):
        tall[c] = 0.0
    for t in range(m):
        total += w[pairs[t].second]
    for t in range(m):
        k = pairs[t].second
        wk = w[k]
        cum += wk
        tall[comp[k]] += wk
        if not _mp_ok(sig, n_phase, i, tall, cum, total):
            if mid:
                q = t - 1
                while q >= 0 and pairs[q].first >= pairs[t].first:
                    q -= 1
                if q >= 0:
                    return 0.5 * (pairs[q].first + pairs[t].first)
            return pairs[t].first
    return pairs[m - 1].first


cdef inline Py_ssize_t _next_occ(const unsigned char* occ, const int* blk,
                                 Py_ssize_t S, Py_ssize_t nblk,
                                 Py_ssize_t start) nogil:
    """Smallest occupied rank >= start, -1 if none."""
    cdef Py_ssize_t r, b, end
    if start >= S:
        return -1
    r = start
    b = r >> 8
    end = (b + 1) << 8
    if end > S:
        end = S
    while r < end:
        if occ[r]:
            return r
        r += 1
    b += 1
    while b < nblk and blk[b] == 0:
        b += 1
    if b >= nblk:
        return -1
    r = b << 8
    end = (b + 1) << 8
    if end > S:
        end = S
    while r < end:
        if occ[r]:
            return r
        r += 1
    return -1


cdef inline Py_ssize_t _prev_occ(const unsigned char* occ, const int* blk,
                                 Py_ssize_t S, Py_ssize_t start) nogil:
    """Largest occupied rank < start, -1 if none."""
    cdef Py_ssize_t r, b, base
    if start <= 0:
        return -1
    r = start - 1
    if r >= S:
        r = S - 1
    b = r >> 8
    base = b << 8
    while r >= base:
        if occ[r]:
            return r
        r -= 1
    b -= 1
    while b >= 0 and blk[b] == 0:
        b -= 1
    if b < 0:
        return -1
    base = b << 8
    r = ((b + 1) << 8) - 1
    if r >= S:
        r = S - 1
    while r >= base:
        if occ[r]:
            return r
        r -= 1
    return -1


cdef inline Py_ssize_t _lower_bound(const double* a, Py_ssize_t n,
                                    double v) nogil:
    """Smallest index whose value is >= v in an ascending array."""
    cdef Py_ssize_t lo = 0, hi = n, half
    while lo < hi:
        half = (lo + hi) >> 1
        if a[half] < v:
            lo = half + 1
        else:
            hi = half
    return lo


cdef inline double _mp_pair_mid(const unsigned char* occ, const int* blk,
                                const double* sv, Py_ssize_t S,
                                Py_ssize_t r) nogil:
    """Midpoint of the exit value and the largest window value below it.

    All ranks of one value form a contiguous run in the global sort, so
    the largest strictly smaller window value is the last occupied rank
    before that run.  An exit at the window minimum stands alone.
    """
    cdef double v = sv[r]
    cdef Py_ssize_t g0 = _lower_bound(sv, S, v)
    cdef Py_ssize_t rp = _prev_occ(occ, blk, S, g0)
    if rp < 0:
        return v
    return 0.5 * (sv[rp] + v)


def _mp_slide_ranges(di, dj):
    """Per-di contiguous dj ranges of an integer stencil, or None.

    The sliding multiphase path needs every column of the stencil to be
    one gap-free dj interval with no duplicate offsets; the lattice ball
    and every snapped convex stencil satisfy this.
    """
    di = np.asarray(di)
    dj = np.asarray(dj)
    order = np.lexsort((dj, di))
    ds = di[order]
    js = dj[order]
    dvals, starts = np.unique(ds, return_index=True)
    bounds = np.append(starts, len(ds))
    lo = np.empty(len(dvals), dtype=np.intp)
    hi = np.empty(len(dvals), dtype=np.intp)
    for g in range(len(dvals)):
        seg = js[bounds[g]:bounds[g + 1]]
        if seg[-1] - seg[0] + 1 != len(seg) or not np.all(np.diff(seg) == 1):
            return None
        lo[g] = seg[0]
        hi[g] = seg[-1]
    return dvals.astype(np.intp), lo, hi


def multiphase_step_grid(phi, sigma, di, dj, weights,
                         bint periodic_x, bint periodic_y, bint mid=False):
    p_arr = np.ascontiguousarray(phi, dtype=np.float64)
    cdef const double[:, :, ::1] p = p_arr
    cdef const double[:, ::1] sig = np.ascontiguousarray(sigma, dtype=np.float64)
    di_arr = np.ascontiguousarray(di, dtype=np.intp)
    dj_arr = np.ascontiguousarray(dj, dtype=np.intp)
    cdef const Py_ssize_t[::1] cdi = di_arr
    cdef const Py_ssize_t[::1] cdj = dj_arr
    w_arr = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const double[::1] w = w_arr
    cdef Py_ssize_t n_phase = p.shape[0], nx = p.shape[1], ny = p.shape[2]
    cdef Py_ssize_t m = w.shape[0]
    out_arr = np.empty((n_phase, nx, ny))
    cdef double[:, :, ::1] out = out_arr

    # winner and runner-up labels per node, first index on ties
    lab_arr = np.empty((nx, ny), dtype=np.int8)
    lab2_arr = np.empty((nx, ny), dtype=np.int8)
    cdef signed char[:, ::1] lab1 = lab_arr
    cdef signed char[:, ::1] lab2 = lab2_arr
    cdef Py_ssize_t i, j, c, k, t
    cdef double best, second
    cdef signed char bi, si
    with nogil:
        for i in range(nx):
            for j in range(ny):
                bi = 0
                best = p[0, i, j]
                for c in range(1, n_phase):
                    if p[c, i, j] > best:
                        best = p[c, i, j]
                        bi = <signed char> c
                si = -1
                second = -INFINITY
                for c in range(n_phase):
                    if c == bi:
                        continue
                    if p[c, i, j] > second:
                        second = p[c, i, j]
                        si = <signed char> c
                lab1[i, j] = bi
                lab2[i, j] = si

    ranges = None
    if bool(np.all(w_arr == 1.0)) and periodic_x and m > 0:
        ranges = _mp_slide_ranges(di_arr, dj_arr)
        if ranges is not None and 2 * int(np.abs(di_arr).max()) + 1 > nx:
            ranges = None
    if ranges is not None:
        _mp_sliding(p_arr, sig, out, lab_arr, lab2_arr, ranges,
                    periodic_y, n_phase, nx, ny, m, mid)
        return out_arr

    # general path: per-node gather, full sort, sequential walk
    cdef vector[int] l1s, l2s, comp
    cdef vector[double] tall
    cdef vector[Py_ssize_t] iav, jav
    cdef vector[vpair] pairs
    l1s.resize(m)
    l2s.resize(m)
    comp.resize(m)
    pairs.resize(m)
    iav.resize(m)
    jav.resize(m)
    tall.resize(n_phase)
    cdef Py_ssize_t ia, ja, ph
    with nogil:
        for i in range(nx):
            for j in range(ny):
                for k in range(m):
                    ia = _wrap(i + cdi[k], nx, periodic_x)
                    ja = _wrap(j + cdj[k], ny, periodic_y)
                    iav[k] = ia
                    jav[k] = ja
                    l1s[k] = lab1[ia, ja]
                    l2s[k] = lab2[ia, ja]
                for ph in range(n_phase):
                    for k in range(m):
                        comp[k] = l1s[k] if l1s[k] != <int> ph else l2s[k]
                        pairs[k] = vpair(p[ph, iav[k], jav[k]], k)
                    cpp_sort(pairs.begin(), pairs.end())
                    out[ph, i, j] = _mp_walk_sorted(
                        pairs, comp.data(), w, sig, ph, n_phase, m,
                        tall.data(), mid)
    return out_arr


def _mp_sliding(p_arr, const double[:, ::1] sig, double[:, :, ::1] out,
                lab_arr, lab2_arr, ranges, bint periodic_y,
                Py_ssize_t n_phase, Py_ssize_t nx, Py_ssize_t ny,
                Py_ssize_t m, bint mid):
    """Sliding walk for unit-weight stencils with contiguous columns.

    Window membership is tracked per value rank in a two-level occupancy
    index (byte per rank, count per 256-rank block).  Sliding one node
    down a grid column changes two samples per stencil column, and the
    winning check is monotone along the sorted prefix, so the exit rank
    is re-found by walking up or down from the previous node's exit
    instead of re-sorting the whole window.  Tie groups share a sample
    value, which makes the result independent of tie order and
    therefore bit-identical to the reference walk.
    """
    dvals_arr, dlo_arr, dhi_arr = ranges
    cdef const Py_ssize_t[::1] dvals = dvals_arr
    cdef const Py_ssize_t[::1] dlo = dlo_arr
    cdef const Py_ssize_t[::1] dhi = dhi_arr
    cdef Py_ssize_t nd = dvals.shape[0]
    cdef Py_ssize_t ry = int(max(abs(int(dlo_arr.min())), abs(int(dhi_arr.max()))))
    cdef Py_ssize_t nyp = ny + 2 * ry
    cdef Py_ssize_t S = nx * nyp

    idx = np.arange(-ry, ny + ry)
    if periodic_y:
        idx = np.mod(idx, ny)
    else:
        idx = np.clip(idx, 0, ny - 1)
    vpad = np.ascontiguousarray(p_arr[:, :, idx])
    l1pad_arr = np.ascontiguousarray(lab_arr[:, idx]).reshape(-1)
    l2pad_arr = np.ascontiguousarray(lab2_arr[:, idx]).reshape(-1)
    cdef const signed char[::1] l1p = l1pad_arr
    cdef const signed char[::1] l2p = l2pad_arr

    rank_arr = np.empty((n_phase, S), dtype=np.int32)
    sval_arr = np.empty((n_phase, S), dtype=np.float64)
    for ph_py in range(n_phase):
        flat = vpad[ph_py].reshape(-1)
        order = np.argsort(flat, kind="stable")
        rk = np.empty(S, dtype=np.int32)
        rk[order] = np.arange(S, dtype=np.int32)
        rank_arr[ph_py] = rk
        sval_arr[ph_py] = flat[order]
    cdef const int[:, ::1] rank = rank_arr
    cdef const double[:, ::1] sval = sval_arr

    cdef Py_ssize_t nblk = (S + 255) >> 8
    occ_arr = np.zeros(S, dtype=np.uint8)
    blk_arr = np.zeros(nblk, dtype=np.int32)
    cdef unsigned char[::1] occ_mv = occ_arr
    cdef int[::1] blk_mv = blk_arr
    cdef unsigned char* occ = &occ_mv[0]
    cdef int* blk = &blk_mv[0]

    cdef vector[Py_ssize_t] xbase
    xbase.resize(nd)
    cdef vector[long long] tall_i
    cdef vector[double] tall_d
    tall_i.resize(n_phase)
    tall_d.resize(n_phase)

    cdef double total = <double> m
    cdef Py_ssize_t i, j, d, ph, xr, pos, r, jp, c
    cdef Py_ssize_t ref, cum, cls
    cdef const int* rk_ph
    cdef const double* sv_ph
    cdef bint okflag
    cdef double ans
    with nogil:
        for i in range(nx):
            for d in range(nd):
                xr = (i + dvals[d]) % nx
                if xr < 0:
                    xr += nx
                xbase[d] = xr * nyp
            for ph in range(n_phase):
                rk_ph = &rank[ph, 0]
                sv_ph = &sval[ph, 0]
                memset(occ, 0, <size_t> S)
                memset(blk, 0, <size_t> (nblk * sizeof(int)))
                cum = 0
                ref = 0
                for c in range(n_phase):
                    tall_i[c] = 0
                # build the window of node (i, 0)
                for d in range(nd):
                    for jp in range(dlo[d] + ry, dhi[d] + ry + 1):
                        pos = xbase[d] + jp
                        r = rk_ph[pos]
                        cls = l1p[pos]
                        if cls == ph:
                            cls = l2p[pos]
                        occ[r] = <unsigned char> (1 + cls)
                        blk[r >> 8] += 1
                        # ref is 0 here, nothing is consumed yet
                for j in range(ny):
                    if j > 0:
                        for d in range(nd):
                            # drop trailing sample, take leading sample
                            pos = xbase[d] + (j - 1 + dlo[d] + ry)
                            r = rk_ph[pos]
                            cls = occ[r] - 1
                            occ[r] = 0
                            blk[r >> 8] -= 1
                            if r < ref:
                                cum -= 1
                                tall_i[cls] -= 1
                            pos = xbase[d] + (j + dhi[d] + ry)
                            r = rk_ph[pos]
                            cls = l1p[pos]
                            if cls == ph:
                                cls = l2p[pos]
                            occ[r] = <unsigned char> (1 + cls)
                            blk[r >> 8] += 1
                            if r < ref:
                                cum += 1
                                tall_i[cls] += 1
                    for c in range(n_phase):
                        tall_d[c] = <double> tall_i[c]
                    okflag = _mp_ok(sig, n_phase, ph, tall_d.data(),
                                    <double> cum, total)
                    if okflag:
                        while True:
                            r = _next_occ(occ, blk, S, nblk, ref)
                            if r < 0:
                                # phase keeps winning: largest sample
                                r = _prev_occ(occ, blk, S, ref)
                                ans = sv_ph[r]
                                break
                            cls = occ[r] - 1
                            cum += 1
                            tall_i[cls] += 1
                            tall_d[cls] = <double> tall_i[cls]
                            ref = r + 1
                            if not _mp_ok(sig, n_phase, ph, tall_d.data(),
                                          <double> cum, total):
                                if mid:
                                    ans = _mp_pair_mid(occ, blk, sv_ph, S, r)
                                else:
                                    ans = sv_ph[r]
                                break
                    else:
                        while True:
                            if cum == 0:
                                # nothing consumed and still losing: the
                                # walk exits at the very first sample
                                r = _next_occ(occ, blk, S, nblk, 0)
                                cls = occ[r] - 1
                                if mid:
                                    ans = _mp_pair_mid(occ, blk, sv_ph, S, r)
                                else:
                                    ans = sv_ph[r]
                                cum = 1
                                tall_i[cls] += 1
                                tall_d[cls] = <double> tall_i[cls]
                                ref = r + 1
                                break
                            r = _prev_occ(occ, blk, S, ref)
                            cls = occ[r] - 1
                            cum -= 1
                            tall_i[cls] -= 1
                            tall_d[cls] = <double> tall_i[cls]
                            ref = r
                            if cum == 0 or _mp_ok(sig, n_phase, ph,
                                                  tall_d.data(),
                                                  <double> cum, total):
                                if mid:
                                    ans = _mp_pair_mid(occ, blk, sv_ph, S, r)
                                else:
                                    ans = sv_ph[r]
                                cum += 1
                                tall_i[cls] += 1
                                tall_d[cls] = <double> tall_i[cls]
                                ref = r + 1
                                break
                    out[ph, i, j] = ans


# ---------------------------------------------------------------------------
# denoising threshold solve


def denoise_step_grid(values, fvals, double gamma, di, dj, fx, fy, weights,
                      bint periodic_x, bint periodic_y):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const double[:, ::1] f = np.ascontiguousarray(fvals, dtype=np.float64)
    cdef const Py_ssize_t[::1] cdi = np.ascontiguousarray(di, dtype=np.intp)
    cdef const Py_ssize_t[::1] cdj = np.ascontiguousarray(dj, dtype=np.intp)
    cdef const double[::1] cfx = np.ascontiguousarray(fx, dtype=np.float64)
    cdef const double[::1] cfy = np.ascontiguousarray(fy, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t nx = v.shape[0], ny = v.shape[1], m = w.shape[0]
    out_arr = np.empty((nx, ny))
    cdef double[:, ::1] out = out_arr
    cdef vector[double] samp, cum
    cdef vector[vpair] pairs
    samp.resize(m)
    pairs.resize(m)
    cum.resize(m + 1)
    cdef Py_ssize_t i, j, k, t
    cdef bint lattice
    cdef double total, v_low, v_high, lam_cap, lam, fij
    with nogil:
        lattice = _is_lattice(cfx, cfy)
        for i in range(nx):
            for j in range(ny):
                _gather_node(v, nx, ny, i, j, cdi, cdj, cfx, cfy,
                             lattice, periodic_x, periodic_y, samp.data(), m)
                for k in range(m):
                    pairs[k] = vpair(samp[k], k)
                cpp_sort(pairs.begin(), pairs.end())
                cum[0] = 0.0
                for t in range(m):
                    cum[t + 1] = cum[t] + w[pairs[t].second]
                total = cum[m]
                fij = f[i, j]
                t = m
                while True:
                    v_low = -INFINITY if t == 0 else pairs[t - 1].first
                    lam_cap = fij + (1.0 - 2.0 * cum[t] / total) / gamma
                    if lam_cap > v_low:
                        v_high = INFINITY if t == m else pairs[t].first
                        lam = lam_cap if lam_cap < v_high else v_high
                        out[i, j] = lam if lam > 0.0 else 0.0
                        break
                    t -= 1
    return out_arr
