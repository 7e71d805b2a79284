"""Lattices for the triangular schemes.

Two families are supported:

* the hexagonal Bravais lattice (seven velocities, one node class), over an
  equilateral triangle or a periodic parallelogram ("pipe"/"rectangle");
* cell-centred triangle meshes (four velocities, LEFT/RIGHT classes), where
  each node sits at the centroid of a triangle of an underlying
  triangulation, optionally with randomly displaced vertices.

A :class:`Lattice` is immutable once built. Links are stored as dense
``(N, q)`` tables; slot 0 is always the rest velocity.  A missing neighbor
(``neighbors[x, j] == -1``) is a cut link with a Dirichlet wall point.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

SQRT3 = np.sqrt(3.0)
HALF_SQRT3 = SQRT3 / 2.0

# Hexagonal velocities, j = 1..6 at angles 90 + (j-1)*60 degrees.  Written out
# explicitly so that opposite directions are exact negations.
HEX_VELOCITIES = np.array(
    [
        [0.0, 0.0],
        [0.0, 1.0],
        [-HALF_SQRT3, 0.5],
        [-HALF_SQRT3, -0.5],
        [0.0, -1.0],
        [HALF_SQRT3, -0.5],
        [HALF_SQRT3, 0.5],
    ]
)
# Opposite direction on the hexagonal lattice (0 maps to itself).
HEX_OPPOSITE = np.array([0, 4, 5, 6, 1, 2, 3])
# Integer offsets of the six directions in the sheared (i, r) index space,
# where position = i * (sqrt3/2, 1/2) + r * (0, 1).
HEX_INDEX_STEPS = np.array([[0, 0], [0, 1], [-1, 1], [-1, 0], [0, -1], [1, -1], [1, 0]])

# Cell-centred velocities: LEFT triangles have a vertical edge on their left.
LEFT_VELOCITIES = np.array([[0.0, 0.0], [-1.0, 0.0], [0.5, -HALF_SQRT3], [0.5, HALF_SQRT3]])
RIGHT_VELOCITIES = -LEFT_VELOCITIES + 0.0  # + 0.0 turns -0.0 into 0.0

LEFT, RIGHT = 0, 1


class LatticeError(ValueError):
    """Invalid lattice size or inconsistent construction request."""


class GeometryError(LatticeError):
    """A perturbed triangulation is no longer a valid embedding."""


class BoundaryLink(NamedTuple):
    owner: int
    direction: int
    wall_point: tuple[float, float]
    wall_value_id: int


class Violation(NamedTuple):
    kind: str
    node: int
    link: int
    detail: str


def _frozen(a) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Lattice:
    """Node positions, per-node velocities and the link tables.

    ``node_class`` indexes ``class_names``.  For class-uniform lattices
    (``uniform_classes``) all nodes in a class share their velocity set, which
    lets the moment matrices be stored once per class.
    """

    scheme: str
    domain: str
    positions: np.ndarray
    dx: float
    velocities: np.ndarray
    neighbors: np.ndarray
    dual: np.ndarray
    node_class: np.ndarray
    class_names: tuple[str, ...]
    wall_points: np.ndarray
    wall_value_ids: np.ndarray
    wraps: np.ndarray | None = None
    bravais: bool = False
    uniform_classes: bool = True
    vertices: np.ndarray | None = None
    triangles: np.ndarray | None = None
    triangle_kind: np.ndarray | None = None
    wall_triangle: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in (
            "positions",
            "velocities",
            "neighbors",
            "dual",
            "node_class",
            "wall_points",
            "wall_value_ids",
            "wraps",
            "vertices",
            "triangles",
            "triangle_kind",
            "wall_triangle",
        ):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _frozen(value))

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    @property
    def q(self) -> int:
        return self.velocities.shape[1]

    @property
    def degree(self) -> int:
        return self.q - 1

    @property
    def periodic(self) -> bool:
        return self.wraps is not None

    @property
    def cut_links(self) -> np.ndarray:
        """(L, 2) array of (owner, direction) for every cut link, row-major order."""
        owner, direction = np.nonzero(self.neighbors < 0)
        return np.stack([owner, direction], axis=1)

    def boundary_links(self) -> list[BoundaryLink]:
        out = []
        for x, j in self.cut_links:
            p = self.wall_points[x, j]
            out.append(BoundaryLink(int(x), int(j), (float(p[0]), float(p[1])), int(self.wall_value_ids[x, j])))
        return out

    def replace(self, **changes) -> "Lattice":
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# Hexagonal (Bravais) lattices


def _hex_position(i, r, dx):
    i = np.asarray(i, dtype=float)
    r = np.asarray(r, dtype=float)
    return np.stack([i * HALF_SQRT3 * dx, (0.5 * i + r) * dx], axis=-1)


def _check_size(name, value, minimum):
    if int(value) != value or value < minimum:
        raise LatticeError(f"{name} must be an integer >= {minimum}, got {value!r}")


def build_d2t7_triangle(n_edge: int, dx: float = 1.0, origin=(0.0, 0.0)) -> Lattice:
    """Equilateral triangle of the hexagonal lattice with ``n_edge`` nodes per edge.

    Node (i, r) sits at ``origin + dx*(i*(sqrt3/2, 1/2) + r*(0, 1))`` for
    ``i, r >= 0, i + r <= n_edge - 1``; the left edge is vertical.  Cut links
    get their wall point at the half link, so the walls form a larger
    equilateral triangle of side ``(n_edge + 1/2) * dx`` (``wall_triangle``).
    """
    _check_size("n_edge", n_edge, 2)
    if dx <= 0:
        raise LatticeError("dx must be positive")
    n = int(n_edge)
    ii, rr = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    keep = ii + rr <= n - 1
    ii, rr = ii[keep], rr[keep]
    order = np.lexsort((rr, ii))
    ii, rr = ii[order], rr[order]
    index = -np.ones((n, n), dtype=np.int64)
    index[ii, rr] = np.arange(ii.size)
    origin = np.asarray(origin, dtype=float)
    positions = origin + _hex_position(ii, rr, dx)

    q = 7
    N = ii.size
    neighbors = np.empty((N, q), dtype=np.int64)
    dual = np.empty((N, q), dtype=np.int64)
    neighbors[:, 0] = np.arange(N)
    dual[:, 0] = 0
    for j in range(1, q):
        ni = ii + HEX_INDEX_STEPS[j, 0]
        nr = rr + HEX_INDEX_STEPS[j, 1]
        inside = (ni >= 0) & (nr >= 0) & (ni + nr <= n - 1)
        nb = np.full(N, -1, dtype=np.int64)
        nb[inside] = index[ni[inside], nr[inside]]
        neighbors[:, j] = nb
        dual[:, j] = np.where(inside, HEX_OPPOSITE[j], -1)

    velocities = np.broadcast_to(HEX_VELOCITIES, (N, q, 2)).copy()
    wall_points = np.full((N, q, 2), np.nan)
    cut = neighbors < 0
    wall_points[cut] = (positions[:, None, :] + 0.5 * dx * velocities)[cut]

    # Wall triangle: node triangle pushed out by a quarter link-height.
    node_corners = origin + _hex_position([0, 0, n - 1], [0, n - 1, 0], dx)
    centre = node_corners.mean(axis=0)
    side_nodes = (n - 1) * dx
    side_wall = (n + 0.5) * dx
    corners = centre + (node_corners - centre) * (side_wall / side_nodes)
    wall_ids = _nearest_edge_ids(wall_points, cut, corners)

    return Lattice(
        scheme="d2t7",
        domain="triangle",
        positions=positions,
        dx=float(dx),
        velocities=velocities,
        neighbors=neighbors,
        dual=dual,
        node_class=np.zeros(N, dtype=np.int64),
        class_names=("BRAVAIS",),
        wall_points=wall_points,
        wall_value_ids=wall_ids,
        bravais=True,
        wall_triangle=corners,
        meta={"n_edge": n, "index": np.stack([ii, rr], axis=1)},
    )


def build_d2t7_periodic(nx: int, ny: int, dx: float = 1.0) -> Lattice:
    """Fully periodic hexagonal lattice of ``nx * ny`` nodes.

    Sheared indexing: node (i, r) at ``dx*(i*(sqrt3/2, 1/2) + r*(0, 1))`` with
    wrap vectors ``nx*dx*(sqrt3/2, 1/2)`` and ``ny*dx*(0, 1)``.  The period
    along x is therefore ``nx * dx * sqrt3/2``.
    """
    _check_size("nx", nx, 1)
    _check_size("ny", ny, 1)
    if dx <= 0:
        raise LatticeError("dx must be positive")
    nx, ny = int(nx), int(ny)
    ii, rr = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ii, rr = ii.ravel(), rr.ravel()
    N = nx * ny
    q = 7
    positions = _hex_position(ii, rr, dx)
    neighbors = np.empty((N, q), dtype=np.int64)
    for j in range(q):
        neighbors[:, j] = ((ii + HEX_INDEX_STEPS[j, 0]) % nx) * ny + (rr + HEX_INDEX_STEPS[j, 1]) % ny
    dual = np.broadcast_to(HEX_OPPOSITE, (N, q)).copy()
    wraps = np.array([[nx * HALF_SQRT3 * dx, 0.5 * nx * dx], [0.0, ny * dx]])
    return Lattice(
        scheme="d2t7",
        domain="periodic",
        positions=positions,
        dx=float(dx),
        velocities=np.broadcast_to(HEX_VELOCITIES, (N, q, 2)).copy(),
        neighbors=neighbors,
        dual=dual,
        node_class=np.zeros(N, dtype=np.int64),
        class_names=("BRAVAIS",),
        wall_points=np.full((N, q, 2), np.nan),
        wall_value_ids=np.full((N, q), -1, dtype=np.int64),
        wraps=wraps,
        bravais=True,
        meta={"nx": nx, "ny": ny, "length_x": nx * HALF_SQRT3 * dx},
    )


def _nearest_edge_ids(wall_points, cut, corners):
    """Label each wall point with the index of the closest edge of ``corners``."""
    ids = np.full(cut.shape, -1, dtype=np.int64)
    pts = wall_points[cut]
    if pts.size == 0:
        return ids
    dist = []
    for e in range(3):
        a, b = corners[e], corners[(e + 1) % 3]
        t = b - a
        nrm = np.array([-t[1], t[0]]) / np.hypot(*t)
        dist.append(np.abs((pts - a) @ nrm))
    ids[cut] = np.argmin(np.stack(dist, axis=1), axis=1)
    return ids


# ---------------------------------------------------------------------------
# Cell-centred triangle lattices

# Local edge j (j = 1, 2, 3) as a pair of local vertex slots.  LEFT triangles
# are (A, B, C) = (v(i,r), v(i,r+1), v(i+1,r)); RIGHT triangles are
# (D, E, F) = (v(i,r+1), v(i+1,r+1), v(i+1,r)).  With this numbering the
# neighbor across local edge j sees the shared edge as its own edge j.
_LOCAL_EDGES = {
    LEFT: ((0, 1), (0, 2), (1, 2)),
    RIGHT: ((1, 2), (0, 1), (0, 2)),
}


def _vertex_grid(i, r, h):
    return _hex_position(i, r, h)


def build_d2t4_equilateral(n_edge: int, dx: float = 1.0, origin=(0.0, 0.0), wall_at: str = "edge") -> Lattice:
    """Centroid lattice of an equilateral triangle cut into ``n_edge**2`` triangles.

    ``dx`` is the centroid-to-centroid distance, so the small triangles have
    edge ``sqrt(3)*dx`` and the global triangle has side ``n_edge*sqrt(3)*dx``
    with a vertical left edge.  ``wall_at`` chooses where cut links see the
    wall: at the triangle edge midpoint (``"edge"``) or at the foot of the
    perpendicular from the centroid (``"half-link"``); the two coincide for
    equilateral triangles.
    """
    _check_size("n_edge", n_edge, 1)
    if dx <= 0:
        raise LatticeError("dx must be positive")
    n = int(n_edge)
    h = SQRT3 * dx
    vi, vr = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = vi + vr <= n
    vi, vr = vi[keep], vr[keep]
    vindex = -np.ones((n + 1, n + 1), dtype=np.int64)
    vindex[vi, vr] = np.arange(vi.size)
    origin = np.asarray(origin, dtype=float)
    vertices = origin + _vertex_grid(vi, vr, h)

    tris, kinds = [], []
    for i in range(n):
        for r in range(n - i):
            tris.append([vindex[i, r], vindex[i, r + 1], vindex[i + 1, r]])
            kinds.append(LEFT)
            if i + r <= n - 2:
                tris.append([vindex[i, r + 1], vindex[i + 1, r + 1], vindex[i + 1, r]])
                kinds.append(RIGHT)
    tris = np.array(tris, dtype=np.int64)
    kinds = np.array(kinds, dtype=np.int64)
    corners = origin + _vertex_grid([0, 0, n], [0, n, 0], h)
    lat = _centroid_lattice(
        vertices,
        tris,
        kinds,
        dx,
        wraps=None,
        exact_velocities=True,
        wall_at=wall_at,
        domain="triangle",
    )
    wall_ids = _nearest_edge_ids(lat.wall_points, lat.neighbors < 0, corners)
    return lat.replace(wall_triangle=corners, wall_value_ids=wall_ids, meta={"n_edge": n, "wall_at": wall_at})


def build_d2t4_periodic(nx: int, ny: int, dx: float = 1.0) -> Lattice:
    """Periodic centroid lattice over an ``nx * ny`` sheared grid of vertices.

    Each vertex cell holds one LEFT and one RIGHT triangle, giving
    ``2 * nx * ny`` nodes.  Wraps are ``nx*h*(sqrt3/2, 1/2)`` and
    ``ny*h*(0, 1)`` with ``h = sqrt(3)*dx``.
    """
    _check_size("nx", nx, 3)
    _check_size("ny", ny, 3)
    nx, ny = int(nx), int(ny)
    h = SQRT3 * dx
    ci, cr = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ci, cr = ci.ravel(), cr.ravel()

    def vid(i, r):
        return (i % nx) * ny + (r % ny)

    vertices_unwrapped = []
    tris = []
    kinds = []
    for i, r in zip(ci, cr):
        tris.append([vid(i, r), vid(i, r + 1), vid(i + 1, r)])
        vertices_unwrapped.append(_vertex_grid([i, i, i + 1], [r, r + 1, r], h))
        kinds.append(LEFT)
        tris.append([vid(i, r + 1), vid(i + 1, r + 1), vid(i + 1, r)])
        vertices_unwrapped.append(_vertex_grid([i, i + 1, i + 1], [r + 1, r + 1, r], h))
        kinds.append(RIGHT)
    vi, vr = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    vertices = _vertex_grid(vi.ravel(), vr.ravel(), h)
    wraps = np.array([[nx * HALF_SQRT3 * h, 0.5 * nx * h], [0.0, ny * h]])
    lat = _centroid_lattice(
        vertices,
        np.array(tris, dtype=np.int64),
        np.array(kinds, dtype=np.int64),
        dx,
        wraps=wraps,
        exact_velocities=True,
        wall_at="edge",
        domain="periodic",
        triangle_coords=np.array(vertices_unwrapped),
    )
    return lat.replace(meta={"nx": nx, "ny": ny, "length_x": nx * HALF_SQRT3 * h})


def _reduce_wrap(delta, wraps):
    """Shortest periodic image of displacement vectors ``delta`` (..., 2)."""
    if wraps is None:
        return delta
    coeff = np.linalg.solve(wraps.T, delta.reshape(-1, 2).T).T
    return (delta.reshape(-1, 2) - np.rint(coeff) @ wraps).reshape(delta.shape)


def _centroid_lattice(
    vertices,
    tris,
    kinds,
    dx,
    *,
    wraps,
    exact_velocities,
    wall_at,
    domain,
    triangle_coords=None,
):
    if wall_at not in ("edge", "half-link"):
        raise LatticeError(f"wall_at must be 'edge' or 'half-link', got {wall_at!r}")
    T = tris.shape[0]
    q = 4
    coords = vertices[tris] if triangle_coords is None else triangle_coords  # (T, 3, 2)
    centroids = coords.mean(axis=1)

    # Edge -> (triangle, local index) incidence.
    edge_owner: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for t in range(T):
        for j, (a, b) in enumerate(_LOCAL_EDGES[kinds[t]], start=1):
            key = tuple(sorted((int(tris[t, a]), int(tris[t, b]))))
            edge_owner.setdefault(key, []).append((t, j))

    neighbors = -np.ones((T, q), dtype=np.int64)
    dual = -np.ones((T, q), dtype=np.int64)
    neighbors[:, 0] = np.arange(T)
    dual[:, 0] = 0
    for key, owners in edge_owner.items():
        if len(owners) > 2:
            raise LatticeError(f"edge {key} shared by more than two triangles")
        if len(owners) == 2:
            (t1, j1), (t2, j2) = owners
            neighbors[t1, j1], dual[t1, j1] = t2, j2
            neighbors[t2, j2], dual[t2, j2] = t1, j1

    velocities = np.zeros((T, q, 2))
    wall_points = np.full((T, q, 2), np.nan)
    if exact_velocities:
        velocities[kinds == LEFT] = LEFT_VELOCITIES
        velocities[kinds == RIGHT] = RIGHT_VELOCITIES
    else:
        # Internal links: geometric centroid differences, set once per link so
        # that the reverse link is an exact negation.
        for x in range(T):
            for j in range(1, q):
                y = neighbors[x, j]
                if y < 0 or (y, dual[x, j]) < (x, j):
                    continue
                d = _reduce_wrap(centroids[y] - centroids[x], wraps) / dx
                velocities[x, j] = d
                velocities[y, dual[x, j]] = -d
    # Cut links point at a ghost centroid placed symmetrically about the wall
    # point: the edge midpoint, or the foot of the perpendicular.
    for x in range(T):
        for j, (a, b) in enumerate(_LOCAL_EDGES[kinds[x]], start=1):
            if neighbors[x, j] >= 0:
                continue
            pa, pb = coords[x, a], coords[x, b]
            t = pb - pa
            foot = pa + t * np.dot(centroids[x] - pa, t) / np.dot(t, t)
            wall = 0.5 * (pa + pb) if wall_at == "edge" else foot
            if not exact_velocities:
                velocities[x, j] = 2.0 * (wall - centroids[x]) / dx
            wall_points[x, j] = wall

    uniform = bool(exact_velocities)
    return Lattice(
        scheme="d2t4",
        domain=domain,
        positions=centroids,
        dx=float(dx),
        velocities=velocities,
        neighbors=neighbors,
        dual=dual,
        node_class=kinds.copy() if uniform else np.arange(T, dtype=np.int64),
        class_names=("LEFT", "RIGHT") if uniform else tuple(f"N{t}" for t in range(T)),
        wall_points=wall_points,
        wall_value_ids=np.where(neighbors < 0, 0, -1),
        wraps=wraps,
        bravais=False,
        uniform_classes=uniform,
        vertices=vertices,
        triangles=tris,
        triangle_kind=kinds,
    )


def _signed_areas(vertices, tris):
    a, b, c = vertices[tris[:, 0]], vertices[tris[:, 1]], vertices[tris[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def perturb(lattice: Lattice, amplitude: float, seed: int) -> Lattice:
    """Randomly displace the interior vertices of a centroid lattice.

    Each interior vertex moves by an independent offset drawn uniformly from
    the disc of radius ``amplitude * dx``.  Boundary vertices stay fixed.
    Velocities are recomputed from the new centroids, so they become
    node-dependent while the link tables are unchanged.
    """
    if lattice.triangles is None or lattice.scheme != "d2t4":
        raise LatticeError("perturb needs a centroid lattice built from a triangulation")
    if lattice.periodic:
        raise LatticeError("perturb supports bounded triangulations only")
    if not 0 <= amplitude < 0.3:
        raise LatticeError(f"amplitude must lie in [0, 0.3), got {amplitude}")
    if amplitude == 0:
        return lattice
    tris = lattice.triangles
    edge_count: dict[tuple[int, int], int] = {}
    for t in tris:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[0], t[2])):
            key = (min(a, b), max(a, b))
            edge_count[key] = edge_count.get(key, 0) + 1
    on_boundary = np.zeros(lattice.vertices.shape[0], dtype=bool)
    for (a, b), c in edge_count.items():
        if c == 1:
            on_boundary[[a, b]] = True

    rng = np.random.default_rng(seed)
    nv = lattice.vertices.shape[0]
    radius = amplitude * lattice.dx * np.sqrt(rng.random(nv))
    angle = 2.0 * np.pi * rng.random(nv)
    offset = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    offset[on_boundary] = 0.0
    vertices = lattice.vertices + offset

    before = np.sign(_signed_areas(lattice.vertices, tris))
    after = _signed_areas(vertices, tris)
    if np.any(np.sign(after) != before) or np.any(np.abs(after) < 1e-12 * lattice.dx**2):
        raise GeometryError("perturbation inverted or collapsed a triangle")

    out = _centroid_lattice(
        vertices,
        tris,
        lattice.triangle_kind,
        lattice.dx,
        wraps=None,
        exact_velocities=False,
        wall_at=lattice.meta.get("wall_at", "edge"),
        domain=lattice.domain,
    )
    if not (np.array_equal(out.neighbors, lattice.neighbors) and np.array_equal(out.dual, lattice.dual)):
        raise GeometryError("perturbation changed the mesh connectivity")
    meta = dict(lattice.meta, perturbation={"amplitude": amplitude, "seed": seed})
    return out.replace(wall_triangle=lattice.wall_triangle, wall_value_ids=lattice.wall_value_ids, meta=meta)


# ---------------------------------------------------------------------------
# Validation


def validate(lattice: Lattice, require_bravais: bool | None = None) -> list[Violation]:
    """Check the lattice invariants and return every violation found.

    ``require_bravais`` defaults to the lattice's own ``bravais`` flag.
    """
    out: list[Violation] = []
    N, q = lattice.neighbors.shape
    dx = lattice.dx
    pos = lattice.positions
    vel = lattice.velocities
    nb = lattice.neighbors
    dual = lattice.dual

    if np.any(vel[:, 0] != 0):
        for x in np.nonzero(np.any(vel[:, 0] != 0, axis=1))[0]:
            out.append(Violation("rest", int(x), 0, "rest velocity is not zero"))

    for x in range(N):
        targets = []
        for j in range(1, q):
            y = nb[x, j]
            if y < 0:
                w = lattice.wall_points[x, j]
                a, b = pos[x], pos[x] + vel[x, j] * dx
                t = np.dot(w - a, b - a) / np.dot(b - a, b - a)
                off = np.linalg.norm(a + t * (b - a) - w)
                if not (np.all(np.isfinite(w)) and -1e-12 <= t <= 1 + 1e-12 and off <= 1e-12 * dx):
                    out.append(Violation("wall", x, j, "wall point not on the cut link"))
                continue
            if not 0 <= y < N:
                out.append(Violation("index", x, j, f"neighbor {y} out of range"))
                continue
            k = dual[x, j]
            targets.append((int(y), int(k)))
            delta = pos[y] - pos[x] - vel[x, j] * dx
            delta = _reduce_wrap(delta, lattice.wraps)
            if np.max(np.abs(delta)) > 1e-12 * dx:
                out.append(Violation("position", x, j, f"offset {np.max(np.abs(delta)):.3e}"))
            if not 1 <= k < q or nb[y, k] != x or dual[y, k] != j:
                out.append(Violation("duality", x, j, f"dual index {k} is not an involution"))
                continue
            if np.max(np.abs(vel[x, j] + vel[y, k])) > 1e-14:
                out.append(Violation("duality", x, j, "velocities are not opposite"))
        internal = all(nb[x, j] >= 0 for j in range(1, q))
        if internal and len(set(targets)) != q - 1:
            out.append(Violation("degree", x, -1, "links do not reach q-1 distinct neighbor slots"))

    # Streaming bijection: (x, j) -> (y, dual) over internal links.
    xs, js = np.nonzero(nb[:, 1:] >= 0)
    js = js + 1
    ok = dual[xs, js] >= 0
    dest = nb[xs[ok], js[ok]] * q + dual[xs[ok], js[ok]]
    if np.unique(dest).size != dest.size:
        out.append(Violation("streaming", -1, -1, "streaming map is not injective"))

    check = lattice.bravais if require_bravais is None else require_bravais
    if check:
        ref = vel[0]
        for x in np.nonzero(np.any(np.abs(vel - ref) > 1e-14, axis=(1, 2)))[0]:
            out.append(Violation("bravais", int(x), -1, "velocity set differs from node 0"))
        for j in range(1, q):
            if not np.any(np.all(np.abs(ref + ref[j]) <= 1e-14, axis=1)):
                out.append(Violation("bravais", 0, j, "velocity set is not symmetric"))
    return out


def opposite_index(velocities: np.ndarray) -> np.ndarray:
    """sigma(j) such that velocities[sigma(j)] == -velocities[j]; -1 if none."""
    q = velocities.shape[0]
    out = -np.ones(q, dtype=np.int64)
    for j in range(q):
        hit = np.nonzero(np.all(np.abs(velocities + velocities[j]) <= 1e-14, axis=1))[0]
        if hit.size:
            out[j] = hit[0]
    return out


def build_lattice(scheme: str, domain: str, n=None, nx=None, ny=None, dx: float = 1.0, **kw) -> Lattice:
    """Dispatch helper used by the CLI and experiment configs."""
    scheme = scheme.lower()
    if scheme == "d2t7":
        if domain == "triangle":
            return build_d2t7_triangle(n, dx, **kw)
        if domain in ("pipe", "rect", "periodic"):
            return build_d2t7_periodic(nx, ny, dx)
    elif scheme == "d2t4":
        if domain == "triangle":
            return build_d2t4_equilateral(n, dx, **kw)
        if domain in ("pipe", "rect", "periodic"):
            return build_d2t4_periodic(nx, ny, dx)
    raise LatticeError(f"unsupported scheme/domain combination {scheme}/{domain}")
