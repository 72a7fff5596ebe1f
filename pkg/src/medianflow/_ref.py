"""Reference numpy backend.

Array-level implementations of every hot kernel: sampled weighted
median, threshold convolution, arc-bisection median, multiphase walk,
and the denoising threshold solve.  The compiled backend mirrors these
semantics; tie handling is defined here once and for all:

* samples are ordered by value with ties in original sample order
  (stable sort), cumulative weights are accumulated sequentially,
* the half-mass level compares against half of the per-node sequential
  total, so the walk always terminates at a well-defined sample,
* "sup" returns the sample where the cumulative weight first exceeds
  half; "midpoint" averages with the previous sample only when the
  running sum hits half exactly.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND_KIND = "python"

_CHUNK_BUDGET = 1 << 21  # max m * chunk elements held per gather


def _node_coords(nx: int, ny: int, lo: int, hi: int):
    flat = np.arange(lo, hi, dtype=np.intp)
    return flat // ny, flat % ny


def _chunk_size(n_nodes: int, m: int) -> int:
    chunk = max(1, _CHUNK_BUDGET // max(1, m))
    return min(n_nodes, chunk)


def _gather_lattice(flat_values: np.ndarray, nx: int, ny: int,
                    ii: np.ndarray, jj: np.ndarray,
                    di: np.ndarray, dj: np.ndarray,
                    periodic_x: bool, periodic_y: bool) -> np.ndarray:
    """Sample values at node + integer shift for each (sample, node)."""
    im = ii[None, :] + di[:, None]
    jm = jj[None, :] + dj[:, None]
    if periodic_x:
        im %= nx
    else:
        np.clip(im, 0, nx - 1, out=im)
    if periodic_y:
        jm %= ny
    else:
        np.clip(jm, 0, ny - 1, out=jm)
    return flat_values[im * ny + jm]


def _gather_samples(flat_values: np.ndarray, nx: int, ny: int,
                    ii: np.ndarray, jj: np.ndarray,
                    di: np.ndarray, dj: np.ndarray,
                    fx: np.ndarray, fy: np.ndarray,
                    periodic_x: bool, periodic_y: bool) -> np.ndarray:
    """Bilinear sample matrix, always the full four-corner blend."""
    v00 = _gather_lattice(flat_values, nx, ny, ii, jj, di, dj, periodic_x, periodic_y)
    v10 = _gather_lattice(flat_values, nx, ny, ii, jj, di + 1, dj, periodic_x, periodic_y)
    v01 = _gather_lattice(flat_values, nx, ny, ii, jj, di, dj + 1, periodic_x, periodic_y)
    v11 = _gather_lattice(flat_values, nx, ny, ii, jj, di + 1, dj + 1, periodic_x, periodic_y)
    tx = fx[:, None]
    ty = fy[:, None]
    return (
        v00 * (1 - tx) * (1 - ty)
        + v10 * tx * (1 - ty)
        + v01 * (1 - tx) * ty
        + v11 * tx * ty
    )


def _walk_chunk(samples: np.ndarray, weights: np.ndarray, rule: str) -> np.ndarray:
    """Weighted-median walk down the columns of (m, n) samples."""
    order = np.argsort(samples, axis=0, kind="stable")
    sv = np.take_along_axis(samples, order, axis=0)
    sw = weights[order]
    cum = np.cumsum(sw, axis=0)
    half = 0.5 * cum[-1]
    below = cum <= half
    # the last row is never below half, so argmin finds the first failure
    t_ex = np.argmin(below, axis=0)
    res = np.take_along_axis(sv, t_ex[None, :], axis=0)[0]
    if rule == "sup":
        return res
    prev = np.maximum(t_ex - 1, 0)
    cum_prev = np.take_along_axis(cum, prev[None, :], axis=0)[0]
    v_prev = np.take_along_axis(sv, prev[None, :], axis=0)[0]
    tie = (t_ex >= 1) & (cum_prev == half)
    return np.where(tie, 0.5 * (v_prev + res), res)


def sampled_median_grid(values: np.ndarray, di, dj, fx, fy, weights,
                        periodic_x: bool, periodic_y: bool, rule: str) -> np.ndarray:
    nx, ny = values.shape
    flat = np.ascontiguousarray(values).ravel()
    m = len(weights)
    n_nodes = nx * ny
    out = np.empty(n_nodes)
    step = _chunk_size(n_nodes, m)
    lattice = np.all(fx == 0.0) and np.all(fy == 0.0)
    for lo in range(0, n_nodes, step):
        hi = min(n_nodes, lo + step)
        ii, jj = _node_coords(nx, ny, lo, hi)
        if lattice:
            samples = _gather_lattice(flat, nx, ny, ii, jj, di, dj,
                                      periodic_x, periodic_y)
        else:
            samples = _gather_samples(flat, nx, ny, ii, jj, di, dj, fx, fy,
                                      periodic_x, periodic_y)
        out[lo:hi] = _walk_chunk(samples, np.asarray(weights), rule)
    return out.reshape(nx, ny)


def td_convolve(values: np.ndarray, di, dj, weights,
                periodic_x: bool, periodic_y: bool):
    """Stencil-order weighted sum of shifted copies, and the total weight."""
    nx, ny = values.shape
    flat = np.ascontiguousarray(values).ravel()
    n_nodes = nx * ny
    u = np.zeros(n_nodes)
    total = 0.0
    ii, jj = _node_coords(nx, ny, 0, n_nodes)
    for k in range(len(weights)):
        w = float(weights[k])
        im = ii + int(di[k])
        jm = jj + int(dj[k])
        if periodic_x:
            im %= nx
        else:
            np.clip(im, 0, nx - 1, out=im)
        if periodic_y:
            jm %= ny
        else:
            np.clip(jm, 0, ny - 1, out=jm)
        u += w * flat[im * ny + jm]
        total += w
    return u.reshape(nx, ny), total


# ---------------------------------------------------------------------------
# arc-bisection median


def _eval_points(flat_values: np.ndarray, nx: int, ny: int, hx: float, hy: float,
                 periodic_x: bool, periodic_y: bool,
                 px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Bilinear evaluation at scattered points, replicating field edges."""
    lx = nx * hx
    ly = ny * hy
    if periodic_x:
        u = np.mod(px, lx) / hx
        i0 = np.floor(u).astype(np.intp)
        tx = u - i0
        i0 = np.clip(i0, 0, nx - 1)
        i1 = (i0 + 1) % nx
    else:
        u = np.clip(px, 0.0, lx) / hx
        i0 = np.clip(np.floor(u).astype(np.intp), 0, nx - 1)
        tx = u - i0
        i1 = np.minimum(i0 + 1, nx - 1)
    if periodic_y:
        w = np.mod(py, ly) / hy
        j0 = np.floor(w).astype(np.intp)
        ty = w - j0
        j0 = np.clip(j0, 0, ny - 1)
        j1 = (j0 + 1) % ny
    else:
        w = np.clip(py, 0.0, ly) / hy
        j0 = np.clip(np.floor(w).astype(np.intp), 0, ny - 1)
        ty = w - j0
        j1 = np.minimum(j0 + 1, ny - 1)
    return (
        flat_values[i0 * ny + j0] * (1 - tx) * (1 - ty)
        + flat_values[i1 * ny + j0] * tx * (1 - ty)
        + flat_values[i0 * ny + j1] * (1 - tx) * ty
        + flat_values[i1 * ny + j1] * tx * ty
    )


def _arc_measure(flat_values, nx, ny, hx, hy, periodic_x, periodic_y,
                 cx, cy, r: float, lam, eps: float) -> np.ndarray:
    """Accepted arc measure of {field >= lam} on one circle per node.

    Iterative version of the endpoint-bisection recursion, run for all
    nodes of a chunk at once; segments narrower than eps contribute 0.
    """
    n = cx.size
    measure = np.zeros(n)
    node = np.repeat(np.arange(n, dtype=np.intp), 4)
    a = np.tile(np.array([0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi]), n)
    b = a + 0.5 * math.pi
    va = _eval_points(flat_values, nx, ny, hx, hy, periodic_x, periodic_y,
                      cx[node] + r * np.cos(a), cy[node] + r * np.sin(a))
    vb = _eval_points(flat_values, nx, ny, hx, hy, periodic_x, periodic_y,
                      cx[node] + r * np.cos(b), cy[node] + r * np.sin(b))
    while node.size:
        wide = (b - a) >= eps
        lamv = lam[node]
        lo = np.minimum(va, vb)
        hi = np.maximum(va, vb)
        accept = wide & (lo >= lamv)
        split = wide & (lo < lamv) & (lamv < hi)
        if accept.any():
            np.add.at(measure, node[accept], (b - a)[accept])
        if not split.any():
            break
        node = node[split]
        a = a[split]
        b = b[split]
        va = va[split]
        vb = vb[split]
        mid = 0.5 * (a + b)
        vm = _eval_points(flat_values, nx, ny, hx, hy, periodic_x, periodic_y,
                          cx[node] + r * np.cos(mid), cy[node] + r * np.sin(mid))
        node = np.concatenate([node, node])
        a, b = np.concatenate([a, mid]), np.concatenate([mid, b])
        va, vb = np.concatenate([va, vm]), np.concatenate([vm, vb])
    return measure


def _psi_chunk(flat_values, nx, ny, hx, hy, periodic_x, periodic_y, cx, cy,
               radii, cweights, lam, eps_arc) -> np.ndarray:
    total = np.zeros(cx.size)
    mass = 0.0
    for r, c in zip(radii, cweights):
        arcs = _arc_measure(flat_values, nx, ny, hx, hy, periodic_x, periodic_y,
                            cx, cy, float(r), lam, eps_arc)
        total += float(c) * float(r) * arcs
        mass += float(c) * float(r) * 2.0 * math.pi
    return total / mass


def bisection_median_grid(values: np.ndarray, radii, cweights,
                          eps_arc: float, eps_lambda: float, lip: float,
                          hx: float, hy: float,
                          periodic_x: bool, periodic_y: bool) -> np.ndarray:
    nx, ny = values.shape
    flat = np.ascontiguousarray(values).ravel()
    n_nodes = nx * ny
    out = np.empty(n_nodes)
    n_pre = 64
    theta = 2.0 * math.pi * np.arange(n_pre) / n_pre
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    step = _chunk_size(n_nodes, 4 * n_pre)
    for lo_i in range(0, n_nodes, step):
        hi_i = min(n_nodes, lo_i + step)
        ii, jj = _node_coords(nx, ny, lo_i, hi_i)
        cx = ii * hx
        cy = jj * hy
        lo = np.full(cx.size, np.inf)
        hi = np.full(cx.size, -np.inf)
        pad = 0.0
        for r in radii:
            r = float(r)
            for p in range(n_pre):
                vals = _eval_points(flat, nx, ny, hx, hy, periodic_x, periodic_y,
                                    cx + r * cos_t[p], cy + r * sin_t[p])
                np.minimum(lo, vals, out=lo)
                np.maximum(hi, vals, out=hi)
            pad = max(pad, 0.5 * lip * r * 2.0 * math.pi / n_pre)
        lo -= pad
        hi += pad
        active = hi - lo > eps_lambda
        while active.any():
            idx = np.flatnonzero(active)
            mid = 0.5 * (lo[idx] + hi[idx])
            psi = _psi_chunk(flat, nx, ny, hx, hy, periodic_x, periodic_y,
                             cx[idx], cy[idx], radii, cweights, mid, eps_arc)
            up = psi >= 0.5
            lo[idx[up]] = mid[up]
            hi[idx[~up]] = mid[~up]
            active[idx] = hi[idx] - lo[idx] > eps_lambda
        out[lo_i:hi_i] = 0.5 * (lo + hi)
    return out.reshape(nx, ny)


# ---------------------------------------------------------------------------
# multiphase walk


def multiphase_step_grid(phi: np.ndarray, sigma: np.ndarray, di, dj, weights,
                         periodic_x: bool, periodic_y: bool,
                         mid: bool = False) -> np.ndarray:
    """One median step of all phases under surface-tension weights.

    Per node and phase i, samples of phi_i are walked in ascending
    order; each processed sample moves weight from the "still above the
    level" tally to the tally of its competing phase.  The walk exits at
    the first sample where phase i stops winning under the shared
    comparator (strictly smaller than lower-indexed, no larger than
    higher-indexed competitors), and that sample's value is the update.
    With mid the update is instead the midpoint of the exit value and
    the largest sample value strictly below it (the exit value alone at
    the window minimum; a walk that never exits keeps the maximum).
    """
    n_phase, nx, ny = phi.shape
    flats = [np.ascontiguousarray(phi[i]).ravel() for i in range(n_phase)]
    labels1 = np.argmax(phi, axis=0)
    masked = phi.copy()
    masked[labels1[None] == np.arange(n_phase)[:, None, None]] = -np.inf
    labels2 = np.argmax(masked, axis=0)
    l1_flat = labels1.astype(np.intp).ravel()
    l2_flat = labels2.astype(np.intp).ravel()

    weights = np.asarray(weights, dtype=np.float64)
    m = weights.size
    n_nodes = nx * ny
    out = np.empty((n_phase, n_nodes))
    step = _chunk_size(n_nodes, m * (n_phase + 2))
    for lo in range(0, n_nodes, step):
        hi = min(n_nodes, lo + step)
        ii, jj = _node_coords(nx, ny, lo, hi)
        lab1 = _gather_lattice(l1_flat, nx, ny, ii, jj, di, dj,
                               periodic_x, periodic_y)
        lab2 = _gather_lattice(l2_flat, nx, ny, ii, jj, di, dj,
                               periodic_x, periodic_y)
        for i in range(n_phase):
            vals = _gather_lattice(flats[i], nx, ny, ii, jj, di, dj,
                                   periodic_x, periodic_y)
            comp = np.where(lab1 != i, lab1, lab2)
            out[i, lo:hi] = _multiphase_walk(vals, comp, weights, sigma, i,
                                             mid)
    return out.reshape(n_phase, nx, ny)


def _multiphase_walk(vals: np.ndarray, comp: np.ndarray, weights: np.ndarray,
                     sigma: np.ndarray, i: int,
                     mid: bool = False) -> np.ndarray:
    n_phase = sigma.shape[0]
    m, n = vals.shape
    order = np.argsort(vals, axis=0, kind="stable")
    sv = np.take_along_axis(vals, order, axis=0)
    sc = np.take_along_axis(comp, order, axis=0)
    sw = weights[order]
    # per-class running weight tallies after each processed sample
    tall = np.zeros((n_phase, m, n))
    for c in range(n_phase):
        tall[c] = np.cumsum(sw * (sc == c), axis=0)
    cum = np.cumsum(sw, axis=0)
    total = cum[-1]
    # C_j(t): weight still above the level priced at sigma[i, j] plus
    # processed weight priced at sigma[j, class]
    cost = np.empty((n_phase, m, n))
    for j in range(n_phase):
        acc = sigma[i, j] * (total[None, :] - cum)
        for c in range(n_phase):
            if sigma[j, c] != 0.0:
                acc = acc + sigma[j, c] * tall[c]
        cost[j] = acc
    ok = np.ones((m, n), dtype=bool)
    for j in range(n_phase):
        if j < i:
            ok &= cost[i] < cost[j]
        elif j > i:
            ok &= cost[i] <= cost[j]
    fails = ~ok
    t_ex = np.argmax(fails, axis=0)
    never = ~fails.any(axis=0)
    t_ex[never] = m - 1
    v_exit = np.take_along_axis(sv, t_ex[None, :], axis=0)[0]
    if not mid:
        return v_exit
    cnt = (sv < v_exit[None, :]).sum(axis=0)
    v_prev = np.take_along_axis(sv, np.maximum(cnt - 1, 0)[None, :], axis=0)[0]
    paired = np.where(cnt > 0, 0.5 * (v_prev + v_exit), v_exit)
    return np.where(never, v_exit, paired)


# ---------------------------------------------------------------------------
# denoising threshold solve


def denoise_step_grid(values: np.ndarray, fvals: np.ndarray, gamma: float,
                      di, dj, fx, fy, weights,
                      periodic_x: bool, periodic_y: bool) -> np.ndarray:
    """Largest level where stencil mass above it beats the fidelity line.

    Per node the mass of samples at or above a level is a decreasing
    step function; the fidelity side 0.5 * (1 + gamma * (level - f)) is
    an increasing line.  The update is the level where they cross,
    solved exactly on the step segment containing the crossing, then
    clamped at zero.
    """
    nx, ny = values.shape
    flat = np.ascontiguousarray(values).ravel()
    f_flat = np.ascontiguousarray(fvals).ravel()
    m = len(weights)
    n_nodes = nx * ny
    out = np.empty(n_nodes)
    weights = np.asarray(weights, dtype=np.float64)
    step = _chunk_size(n_nodes, m)
    lattice = np.all(fx == 0.0) and np.all(fy == 0.0)
    for lo in range(0, n_nodes, step):
        hi = min(n_nodes, lo + step)
        ii, jj = _node_coords(nx, ny, lo, hi)
        if lattice:
            samples = _gather_lattice(flat, nx, ny, ii, jj, di, dj,
                                      periodic_x, periodic_y)
        else:
            samples = _gather_samples(flat, nx, ny, ii, jj, di, dj, fx, fy,
                                      periodic_x, periodic_y)
        n = hi - lo
        order = np.argsort(samples, axis=0, kind="stable")
        sv = np.take_along_axis(samples, order, axis=0)
        sw = weights[order]
        cum = np.vstack([np.zeros((1, n)), np.cumsum(sw, axis=0)])
        total = cum[-1]
        f_here = f_flat[lo:hi]
        # largest admissible level on the segment above each sorted sample
        lam_cap = f_here[None, :] + (1.0 - 2.0 * cum / total[None, :]) / gamma
        v_low = np.vstack([np.full((1, n), -np.inf), sv])
        v_high = np.vstack([sv, np.full((1, n), np.inf)])
        pred = lam_cap > v_low
        t_star = m - np.argmax(pred[::-1], axis=0)
        pick = np.arange(n)
        lam = np.minimum(lam_cap[t_star, pick], v_high[t_star, pick])
        out[lo:hi] = np.maximum(lam, 0.0)
    return out.reshape(nx, ny)
