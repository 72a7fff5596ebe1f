"""Grids, scalar fields, shapes, contours, and distances.

Fields live on a uniform rectangular grid over [0, lx) x [0, ly) with nodes
at (i*hx, j*hy), stored as (nx, ny) float64 arrays indexed [i, j].  The
default boundary is periodic (the unit torus); "clamped" replicates edge
values, which is what the denoiser wants for images.  The mixed modes
"periodic-x" and "periodic-y" wrap one axis and replicate the other,
which strip-shaped problems (translating interfaces that exit through
one pair of edges) need.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError

BOUNDARIES = ("periodic", "clamped", "periodic-x", "periodic-y")


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid geometry: nx x ny nodes over [0, lx) x [0, ly)."""

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    boundary: str = "periodic"

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ConfigError(f"grid needs nx, ny >= 4, got {self.nx} x {self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ConfigError(f"domain lengths must be positive, got {self.lx}, {self.ly}")
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def periodic_x(self) -> bool:
        return self.boundary in ("periodic", "periodic-x")

    @property
    def periodic_y(self) -> bool:
        return self.boundary in ("periodic", "periodic-y")

    def x_nodes(self) -> np.ndarray:
        return np.arange(self.nx) * self.hx

    def y_nodes(self) -> np.ndarray:
        return np.arange(self.ny) * self.hy

    def mesh(self):
        return np.meshgrid(self.x_nodes(), self.y_nodes(), indexing="ij")


class ScalarField2D:
    """A float64 nodal field on a GridSpec, evaluated off-grid bilinearly."""

    def __init__(self, spec: GridSpec, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (spec.nx, spec.ny):
            raise ConfigError(
                f"values shape {values.shape} does not match grid {(spec.nx, spec.ny)}"
            )
        if not np.all(np.isfinite(values)):
            raise ConfigError("field values must be finite")
        self.spec = spec
        self.values = np.ascontiguousarray(values)

    @classmethod
    def from_function(cls, spec: GridSpec, f) -> "ScalarField2D":
        X, Y = spec.mesh()
        return cls(spec, f(X, Y))

    @classmethod
    def constant(cls, spec: GridSpec, c: float) -> "ScalarField2D":
        return cls(spec, np.full((spec.nx, spec.ny), float(c)))

    def copy(self) -> "ScalarField2D":
        return ScalarField2D(self.spec, self.values.copy())

    def eval(self, points: np.ndarray) -> np.ndarray:
        """Bilinear interpolation at points (..., 2).

        Periodic axes wrap; clamped axes reject points outside their
        [0, length) range.
        """
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if not self.spec.periodic_x:
            x = pts[..., 0]
            if np.any(x < 0) or np.any(x >= self.spec.lx):
                raise ConfigError("evaluation point outside the clamped domain")
        if not self.spec.periodic_y:
            y = pts[..., 1]
            if np.any(y < 0) or np.any(y >= self.spec.ly):
                raise ConfigError("evaluation point outside the clamped domain")
        out = self._eval_extended(pts)
        return out[0] if single else out

    def _eval_extended(self, pts: np.ndarray) -> np.ndarray:
        # Periodic wrap or clamped edge replication per axis, no domain check.
        spec = self.spec
        v = self.values
        if spec.periodic_x:
            u = np.mod(pts[..., 0], spec.lx) / spec.hx
            i0 = np.floor(u).astype(np.intp)
            tx = u - i0
            i0 = np.clip(i0, 0, spec.nx - 1)
            i1 = (i0 + 1) % spec.nx
        else:
            u = np.clip(pts[..., 0], 0.0, spec.lx) / spec.hx
            i0 = np.clip(np.floor(u).astype(np.intp), 0, spec.nx - 1)
            tx = u - i0
            i1 = np.minimum(i0 + 1, spec.nx - 1)
        if spec.periodic_y:
            w = np.mod(pts[..., 1], spec.ly) / spec.hy
            j0 = np.floor(w).astype(np.intp)
            ty = w - j0
            j0 = np.clip(j0, 0, spec.ny - 1)
            j1 = (j0 + 1) % spec.ny
        else:
            w = np.clip(pts[..., 1], 0.0, spec.ly) / spec.hy
            j0 = np.clip(np.floor(w).astype(np.intp), 0, spec.ny - 1)
            ty = w - j0
            j1 = np.minimum(j0 + 1, spec.ny - 1)
        return (
            v[i0, j0] * (1 - tx) * (1 - ty)
            + v[i1, j0] * tx * (1 - ty)
            + v[i0, j1] * (1 - tx) * ty
            + v[i1, j1] * tx * ty
        )


# ---------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    a: float
    b: float


@dataclass(frozen=True)
class Flower:
    """Polar curve r(theta) = r0 + amp*cos(petals*theta) around (cx, cy)."""

    cx: float
    cy: float
    r0: float
    amp: float
    petals: int


@dataclass(frozen=True)
class HalfPlane:
    """phi(p) = offset - p . n / |n|, positive on the side away from n."""

    nx: float
    ny: float
    offset: float


def _check_fits(spec: GridSpec, x0: float, x1: float, y0: float, y1: float):
    if not (0.0 < x0 and x1 < spec.lx and 0.0 < y0 and y1 < spec.ly):
        raise ConfigError("shape must fit strictly inside the domain")


def init_shape(spec: GridSpec, shape) -> ScalarField2D:
    """Approximate signed distance to the shape boundary, positive inside."""
    X, Y = spec.mesh()
    if isinstance(shape, Circle):
        if shape.r <= 0:
            raise ConfigError("circle radius must be positive")
        _check_fits(spec, shape.cx - shape.r, shape.cx + shape.r,
                    shape.cy - shape.r, shape.cy + shape.r)
        vals = shape.r - np.hypot(X - shape.cx, Y - shape.cy)
        return ScalarField2D(spec, vals)
    if isinstance(shape, Ellipse):
        if shape.a <= 0 or shape.b <= 0:
            raise ConfigError("ellipse semi-axes must be positive")
        if shape.a == shape.b:
            return init_shape(spec, Circle(shape.cx, shape.cy, shape.a))
        _check_fits(spec, shape.cx - shape.a, shape.cx + shape.a,
                    shape.cy - shape.b, shape.cy + shape.b)
        th = _boundary_thetas(spec, 2 * np.pi * max(shape.a, shape.b))
        bx = shape.cx + shape.a * np.cos(th)
        by = shape.cy + shape.b * np.sin(th)
        inside = ((X - shape.cx) / shape.a) ** 2 + ((Y - shape.cy) / shape.b) ** 2 < 1.0
        return _sdf_from_boundary(spec, X, Y, bx, by, inside)
    if isinstance(shape, Flower):
        if shape.r0 <= 0 or shape.amp < 0 or shape.amp >= shape.r0:
            raise ConfigError("flower needs r0 > 0 and 0 <= amp < r0")
        if shape.petals < 1 or int(shape.petals) != shape.petals:
            raise ConfigError("flower petal count must be a positive integer")
        if shape.amp == 0.0:
            return init_shape(spec, Circle(shape.cx, shape.cy, shape.r0))
        rmax = shape.r0 + shape.amp
        _check_fits(spec, shape.cx - rmax, shape.cx + rmax,
                    shape.cy - rmax, shape.cy + rmax)
        th = _boundary_thetas(spec, 2 * np.pi * rmax, min_n=512 * int(shape.petals))
        rho = shape.r0 + shape.amp * np.cos(shape.petals * th)
        bx = shape.cx + rho * np.cos(th)
        by = shape.cy + rho * np.sin(th)
        ang = np.arctan2(Y - shape.cy, X - shape.cx)
        inside = np.hypot(X - shape.cx, Y - shape.cy) < shape.r0 + shape.amp * np.cos(shape.petals * ang)
        return _sdf_from_boundary(spec, X, Y, bx, by, inside)
    if isinstance(shape, HalfPlane):
        n = np.hypot(shape.nx, shape.ny)
        if n == 0:
            raise ConfigError("halfplane normal must be nonzero")
        vals = shape.offset - (X * shape.nx + Y * shape.ny) / n
        return ScalarField2D(spec, vals)
    raise ConfigError(f"unknown shape {shape!r}")


def _boundary_thetas(spec: GridSpec, perimeter: float, min_n: int = 2048) -> np.ndarray:
    # Sample the parametric boundary densely enough that the point-cloud
    # distance error stays far below the grid scale.
    h = min(spec.hx, spec.hy)
    n = int(max(min_n, np.ceil(perimeter / (h / 8.0))))
    return np.linspace(0.0, 2 * np.pi, n, endpoint=False)


def _sdf_from_boundary(spec, X, Y, bx, by, inside) -> ScalarField2D:
    """Signed distance from dense boundary samples, exact to the polyline."""
    verts = np.column_stack([bx, by])
    d = _distance_to_polyline(np.column_stack([X.ravel(), Y.ravel()]), verts, closed=True)
    vals = np.where(inside.ravel(), d, -d).reshape(X.shape)
    return ScalarField2D(spec, vals)


def _distance_to_polyline(q: np.ndarray, verts: np.ndarray, closed: bool) -> np.ndarray:
    """Exact distance from query points to a polyline.

    Nearest vertices come from a k-d tree; the true foot is then refined on
    the segments adjacent to the k nearest vertices, which is exact when the
    vertex spacing is below the local feature size.
    """
    tree = cKDTree(verts)
    k = min(4, len(verts))
    _, idx = tree.query(q, k=k)
    idx = np.atleast_2d(idx)
    nv = len(verts)
    if closed:
        seg_ids = np.concatenate([idx, (idx - 1) % nv], axis=1)
        a = verts[seg_ids]
        b = verts[(seg_ids + 1) % nv]
    else:
        prev = np.maximum(idx - 1, 0)
        seg_ids = np.concatenate([np.minimum(idx, nv - 2), prev], axis=1)
        a = verts[seg_ids]
        b = verts[seg_ids + 1]
    ab = b - a
    denom = np.einsum("ijk,ijk->ij", ab, ab)
    denom[denom == 0.0] = 1.0
    t = np.einsum("ijk,ijk->ij", q[:, None, :] - a, ab) / denom
    t = np.clip(t, 0.0, 1.0)
    foot = a + t[..., None] * ab
    d = np.linalg.norm(q[:, None, :] - foot, axis=2)
    return d.min(axis=1)


# ---------------------------------------------------------------------------
# polylines and contours


@dataclass
class FrontPolyline:
    """Ordered curve vertices; closed curves do not repeat the first point."""

    points: np.ndarray
    closed: bool = True

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2 or len(self.points) < 2:
            raise ConfigError("polyline needs an (n, 2) array with n >= 2")
        if not np.all(np.isfinite(self.points)):
            raise ConfigError("polyline vertices must be finite")

    def segment_vectors(self) -> np.ndarray:
        p = self.points
        if self.closed:
            return np.roll(p, -1, axis=0) - p
        return p[1:] - p[:-1]

    def segment_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.segment_vectors(), axis=1)

    @property
    def length(self) -> float:
        return float(self.segment_lengths().sum())

    def resample(self, spacing: float) -> np.ndarray:
        """Points spaced ~evenly along the curve, step <= spacing."""
        if spacing <= 0:
            raise ConfigError("resample spacing must be positive")
        p = self.points
        if self.closed:
            p = np.vstack([p, p[:1]])
        seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        total = s[-1]
        if total == 0.0:
            return p[:1].copy()
        n = max(int(np.ceil(total / spacing)), 1)
        si = np.linspace(0.0, total, n, endpoint=False) if self.closed else np.linspace(0.0, total, n + 1)
        x = np.interp(si, s, p[:, 0])
        y = np.interp(si, s, p[:, 1])
        return np.column_stack([x, y])


# marching-squares segment table: case -> list of edge pairs.
# Edges 0=S bottom, 1=E right, 2=N top, 3=W left; bit k set means corner k
# is in {phi >= level} with corners 0=(i,j) 1=(i+1,j) 2=(i+1,j+1) 3=(i,j+1).
_MS_TABLE = {
    1: [(3, 0)],
    2: [(0, 1)],
    3: [(3, 1)],
    4: [(1, 2)],
    6: [(0, 2)],
    7: [(3, 2)],
    8: [(3, 2)],
    9: [(0, 2)],
    11: [(1, 2)],
    12: [(3, 1)],
    13: [(0, 1)],
    14: [(3, 0)],
}
_MS_SADDLE = {
    5: {True: [(3, 2), (0, 1)], False: [(3, 0), (1, 2)]},
    10: {True: [(3, 0), (1, 2)], False: [(3, 2), (0, 1)]},
}


def extract_contour(fld: ScalarField2D, level: float) -> list[FrontPolyline]:
    """Marching-squares contour of {phi = level} with linear edge crossings.

    Saddle cells are disambiguated by the sign of the cell-center sample
    (the corner mean).  On periodic grids cells wrap, so interior contours
    always stitch into closed polylines; on clamped grids contours may end
    on the domain boundary and come back open.
    """
    spec = fld.spec
    v = fld.values
    nx, ny = spec.nx, spec.ny
    # Cell corner arrays; periodic axes wrap the +1 neighbor, clamped axes
    # simply have one less cell row/column.
    if spec.periodic_x:
        ii0 = np.arange(nx)
        ii1 = (ii0 + 1) % nx
    else:
        ii0 = np.arange(nx - 1)
        ii1 = ii0 + 1
    if spec.periodic_y:
        jj0 = np.arange(ny)
        jj1 = (jj0 + 1) % ny
    else:
        jj0 = np.arange(ny - 1)
        jj1 = jj0 + 1
    c00 = v[np.ix_(ii0, jj0)]
    c10 = v[np.ix_(ii1, jj0)]
    c01 = v[np.ix_(ii0, jj1)]
    c11 = v[np.ix_(ii1, jj1)]
    b0 = c00 >= level
    b1 = c10 >= level
    b2 = c11 >= level
    b3 = c01 >= level
    case = (b0 * 1 + b1 * 2 + b2 * 4 + b3 * 8).astype(np.int8)
    active = (case != 0) & (case != 15)
    cells = np.argwhere(active)

    hx, hy = spec.hx, spec.hy
    crossings: dict[tuple, np.ndarray] = {}
    links: dict[tuple, list[int]] = {}
    segments: list[tuple] = []

    def edge_key(edge: int, i: int, j: int) -> tuple:
        # S=0 E=1 N=2 W=3 of cell (i,j), with modular node indexing.
        if edge == 0:
            return ("x", i % nx, j % ny)
        if edge == 2:
            return ("x", i % nx, (j + 1) % ny)
        if edge == 3:
            return ("y", i % nx, j % ny)
        return ("y", (i + 1) % nx, j % ny)

    def crossing_point(edge: int, i: int, j: int, corners) -> np.ndarray:
        v00, v10, v11, v01 = corners
        if edge == 0:
            t = (level - v00) / (v10 - v00)
            return np.array([(i + t) * hx, j * hy])
        if edge == 2:
            t = (level - v01) / (v11 - v01)
            return np.array([(i + t) * hx, (j + 1) * hy])
        if edge == 3:
            t = (level - v00) / (v01 - v00)
            return np.array([i * hx, (j + t) * hy])
        t = (level - v10) / (v11 - v10)
        return np.array([(i + 1) * hx, (j + t) * hy])

    for i, j in cells:
        c = int(case[i, j])
        corners = (c00[i, j], c10[i, j], c11[i, j], c01[i, j])
        if c in _MS_SADDLE:
            center_in = (corners[0] + corners[1] + corners[2] + corners[3]) / 4.0 >= level
            pairs = _MS_SADDLE[c][bool(center_in)]
        else:
            pairs = _MS_TABLE[c]
        for ea, eb in pairs:
            ka = edge_key(ea, i, j)
            kb = edge_key(eb, i, j)
            if ka not in crossings:
                crossings[ka] = crossing_point(ea, i, j, corners)
            if kb not in crossings:
                crossings[kb] = crossing_point(eb, i, j, corners)
            seg_id = len(segments)
            segments.append((ka, kb))
            links.setdefault(ka, []).append(seg_id)
            links.setdefault(kb, []).append(seg_id)

    return _stitch(segments, links, crossings)


def _stitch(segments, links, crossings) -> list[FrontPolyline]:
    used = [False] * len(segments)
    polylines = []

    def walk(seg_id: int, start_edge) -> tuple[list, bool]:
        # Follow the chain of segments leaving `start_edge` through seg_id.
        chain = []
        edge = start_edge
        sid = seg_id
        while True:
            used[sid] = True
            a, b = segments[sid]
            edge = b if a == edge else a
            chain.append(edge)
            nxt = [s for s in links[edge] if not used[s]]
            if not nxt:
                return chain, False
            sid = nxt[0]
            if edge == start_edge:
                return chain, True

    for sid in range(len(segments)):
        if used[sid]:
            continue
        a, b = segments[sid]
        fwd, closed_fwd = walk(sid, a)
        pts_edges = [a] + fwd
        closed = pts_edges[0] == pts_edges[-1]
        if closed:
            pts_edges = pts_edges[:-1]
        else:
            back = [s for s in links[a] if not used[s]]
            while back:
                more, _ = walk(back[0], a)
                pts_edges = list(reversed(more)) + pts_edges
                a = pts_edges[0]
                back = [s for s in links[a] if not used[s]]
        pts = np.array([crossings[e] for e in pts_edges])
        if len(pts) >= 2:
            polylines.append(FrontPolyline(pts, closed=closed))
    return polylines


def hausdorff_distance(a, b, spacing: float | None = None) -> float:
    """Symmetric Hausdorff distance between two curves (or curve lists).

    Both sides are resampled at `spacing` (default: the smaller of the two
    curves' minimum segment lengths, floored at 1e-6 of the total length)
    and compared as point sets, so the result carries an O(spacing) error.
    """
    la = [a] if isinstance(a, FrontPolyline) else list(a)
    lb = [b] if isinstance(b, FrontPolyline) else list(b)
    if not la or not lb:
        raise ConfigError("hausdorff_distance needs nonempty curve sets")
    if spacing is None:
        seg = min(min(p.segment_lengths().min() for p in la),
                  min(p.segment_lengths().min() for p in lb))
        total = sum(p.length for p in la) + sum(p.length for p in lb)
        spacing = max(seg, 1e-6 * total)
    pa = np.vstack([p.resample(spacing) for p in la])
    pb = np.vstack([p.resample(spacing) for p in lb])
    dab = cKDTree(pb).query(pa)[0].max()
    dba = cKDTree(pa).query(pb)[0].max()
    return float(max(dab, dba))


def lipschitz_quotient(fld: ScalarField2D) -> float:
    """Max |dphi| / |dx| over axis and diagonal neighbor pairs."""
    v = fld.values
    spec = fld.spec
    hx, hy = spec.hx, spec.hy
    hd = float(np.hypot(hx, hy))
    if spec.periodic_x:
        ii0 = np.arange(spec.nx)
        ii1 = (ii0 + 1) % spec.nx
    else:
        ii0 = np.arange(spec.nx - 1)
        ii1 = ii0 + 1
    if spec.periodic_y:
        jj0 = np.arange(spec.ny)
        jj1 = (jj0 + 1) % spec.ny
    else:
        jj0 = np.arange(spec.ny - 1)
        jj1 = jj0 + 1
    dx = np.abs(v[ii1, :] - v[ii0, :]).max() / hx
    dy = np.abs(v[:, jj1] - v[:, jj0]).max() / hy
    dd1 = np.abs(v[np.ix_(ii1, jj1)] - v[np.ix_(ii0, jj0)]).max() / hd
    dd2 = np.abs(v[np.ix_(ii1, jj0)] - v[np.ix_(ii0, jj1)]).max() / hd
    return float(max(dx, dy, dd1, dd2))


# ---------------------------------------------------------------------------
# file formats

_FIELD_MAGIC = "medianflow-field"


def save_field(fld: ScalarField2D, path: str, fmt: str = "bin"):
    """Dump a field: one text header line, then row-major float64 data.

    fmt="bin" appends the raw bytes; fmt="csv" appends nx comma-separated
    text rows of ny values each.
    """
    if fmt not in ("bin", "csv"):
        raise ConfigError(f"field format must be bin or csv, got {fmt!r}")
    spec = fld.spec
    header = f"{_FIELD_MAGIC} {spec.nx} {spec.ny} {spec.lx!r} {spec.ly!r} {spec.boundary} {fmt}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode())
        if fmt == "bin":
            fh.write(np.ascontiguousarray(fld.values).tobytes())
        else:
            buf = io.StringIO()
            np.savetxt(buf, fld.values, delimiter=",", fmt="%.17g")
            fh.write(buf.getvalue().encode())


def load_field(path: str) -> ScalarField2D:
    with open(path, "rb") as fh:
        header = fh.readline().decode().split()
        if len(header) != 7 or header[0] != _FIELD_MAGIC:
            raise ConfigError(f"{path} is not a medianflow field dump")
        nx, ny = int(header[1]), int(header[2])
        lx, ly = float(header[3]), float(header[4])
        boundary, fmt = header[5], header[6]
        spec = GridSpec(nx, ny, lx, ly, boundary)
        if fmt == "bin":
            vals = np.frombuffer(fh.read(nx * ny * 8), dtype=np.float64).reshape(nx, ny)
        elif fmt == "csv":
            vals = np.loadtxt(io.BytesIO(fh.read()), delimiter=",").reshape(nx, ny)
        else:
            raise ConfigError(f"unknown field format {fmt!r} in {path}")
    return ScalarField2D(spec, vals.copy())


def save_polylines(polys: list[FrontPolyline], path: str):
    """CSV rows curve_id,x,y; closed curves repeat their first vertex."""
    with open(path, "w") as fh:
        fh.write("curve_id,x,y\n")
        for cid, p in enumerate(polys):
            pts = p.points
            if p.closed:
                pts = np.vstack([pts, pts[:1]])
            for x, y in pts:
                fh.write(f"{cid},{x!r},{y!r}\n")


def load_polylines(path: str) -> list[FrontPolyline]:
    data: dict[int, list] = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "curve_id,x,y":
            raise ConfigError(f"{path} is not a polyline CSV")
        for line in fh:
            if not line.strip():
                continue
            cid, x, y = line.split(",")
            data.setdefault(int(cid), []).append((float(x), float(y)))
    out = []
    for cid in sorted(data):
        pts = np.array(data[cid])
        closed = len(pts) > 2 and np.allclose(pts[0], pts[-1])
        if closed:
            pts = pts[:-1]
        out.append(FrontPolyline(pts, closed=closed))
    return out
