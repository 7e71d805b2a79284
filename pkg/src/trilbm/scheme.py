"""Collide-and-stream engine for the triangular schemes.

The state holds the *incoming* populations ``f[x, j]`` (the particle that
arrived at x through link j).  One step is

1. moments of the incoming particles, ``m = Mt(x) f``;
2. relaxation ``m*_k = m_k + s_k (m_k^eq - m_k)``;
3. outgoing particles ``f* = P(x) m*``;
4. streaming ``f[x, j] <- f*[x_j, n_j(x)]``, or anti-bounce-back
   ``f[x, j] <- -f*[x, j] + 2 f^eq_j(rho_wall)`` on a cut link.

Steps 1-3 are folded into one matrix per node class, and step 4 is a signed
gather over flat slot indices, so the whole update is
``f_new = sign * (K f)[src] + b``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .basis import MomentMatrices, family_for, transition_matrices
from .mesh import Lattice

# Time step in units of dx**2 / zeta.  The four-velocity scheme diffuses
# a3*sigma1*dx**2/2 per update, so its step is half as long for the
# diffusivity zeta*a3*sigma1 to hold in physical units.
TIME_FACTOR = {"d2t7": 1.0, "d2t4": 0.5}
MOMENT_COUNT = {"d2t7": 7, "d2t4": 4}


class ParameterError(ValueError):
    """Scheme parameters violate a structural constraint."""


class DivergenceError(FloatingPointError):
    def __init__(self, step, node):
        super().__init__(f"non-finite population at step {step}, node {node}")
        self.step = step
        self.node = node


@dataclass(frozen=True)
class SchemeParams:
    """Full parameterization of one scheme.

    ``s`` lists the relaxation rates of moments 1..q-1 (moment 0 is conserved).
    """

    scheme: str
    a3: float
    s: tuple[float, ...]
    zeta: float = 1.0
    dx: float = 1.0
    u: float = 0.0
    v: float = 0.0
    name: str = ""

    def __post_init__(self):
        scheme = self.scheme.lower()
        object.__setattr__(self, "scheme", scheme)
        object.__setattr__(self, "s", tuple(float(x) for x in self.s))
        if scheme not in MOMENT_COUNT:
            raise ParameterError(f"unknown scheme {self.scheme!r}")
        if len(self.s) != MOMENT_COUNT[scheme] - 1:
            raise ParameterError(f"{scheme} needs {MOMENT_COUNT[scheme] - 1} rates, got {len(self.s)}")
        if self.zeta <= 0 or self.dx <= 0:
            raise ParameterError("zeta and dx must be positive")
        if not all(0.0 < x < 2.0 for x in self.s):
            raise ParameterError(f"relaxation rates must lie in (0, 2): {self.s}")
        if self.s[0] != self.s[1]:
            raise ParameterError("isotropy requires s1 == s2")
        if scheme == "d2t7" and self.s[3] != self.s[4]:
            raise ParameterError("isotropy requires s4 == s5")

    @property
    def q(self) -> int:
        return MOMENT_COUNT[self.scheme]

    @property
    def dt(self) -> float:
        return TIME_FACTOR[self.scheme] * self.dx**2 / self.zeta

    @property
    def rates(self) -> np.ndarray:
        """Rates indexed by moment, with 0 for the conserved moment."""
        return np.array((0.0,) + self.s)

    def with_(self, **changes) -> "SchemeParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "name": self.name,
            "a3": self.a3,
            "s": list(self.s),
            "zeta": self.zeta,
            "dx": self.dx,
            "dt": self.dt,
            "u": self.u,
            "v": self.v,
        }


@dataclass
class FieldState:
    f: np.ndarray
    t: float = 0.0
    step_count: int = 0

    @property
    def rho(self) -> np.ndarray:
        return self.f.sum(axis=1)


@dataclass(frozen=True)
class BoundarySpec:
    """``kind`` is "periodic" or "dirichlet"; ``wall_value(points, t)`` returns wall densities."""

    kind: str
    wall_value: Callable | float | None = None

    def __post_init__(self):
        if self.kind not in ("periodic", "dirichlet"):
            raise ParameterError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "dirichlet" and self.wall_value is None:
            raise ParameterError("Dirichlet boundary requires a wall_value")

    def values(self, points: np.ndarray, t: float) -> np.ndarray:
        w = self.wall_value
        if callable(w):
            out = np.asarray(w(points, t), dtype=float)
        else:
            out = np.full(points.shape[0], float(w))
        if out.shape != (points.shape[0],) or not np.all(np.isfinite(out)):
            raise ParameterError("wall_value must return one finite value per wall point")
        return out


HOMOGENEOUS = BoundarySpec("dirichlet", 0.0)


def equilibrium_moments(rho, params: SchemeParams, q: int | None = None) -> np.ndarray:
    """(rho, rho*u*dx/zeta, rho*v*dx/zeta, a3*rho, 0, ...), shape ``shape(rho) + (q,)``."""
    q = params.q if q is None else q
    rho = np.asarray(rho, dtype=float)
    unit = np.zeros(q)
    unit[0] = 1.0
    if q > 1:
        unit[1] = params.u * params.dx / params.zeta
    if q > 2:
        unit[2] = params.v * params.dx / params.zeta
    if q > 3:
        unit[3] = params.a3
    return rho[..., None] * unit


def relax(m, m_eq, s) -> np.ndarray:
    """Relax moments 1..q-1 with rates ``s``; moment 0 is left untouched."""
    m = np.asarray(m, dtype=float)
    m_eq = np.asarray(m_eq, dtype=float)
    rates = np.concatenate([[0.0], np.asarray(s, dtype=float)])
    return m + rates * (m_eq - m)


def collision_matrices(mats: MomentMatrices, params: SchemeParams) -> np.ndarray:
    """Per-class linear collision ``f* = K f`` (incoming to outgoing populations)."""
    q = mats.q
    rates = params.rates
    unit = equilibrium_moments(1.0, params, q)
    R = np.eye(q) - np.diag(rates) + np.outer(rates * unit, np.eye(q)[0])
    return np.einsum("cik,kl,clj->cij", mats.P, R, mats.Mt)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("TRI_LBM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(eq=False)
class Stepper:
    """Precomputed update for one lattice, parameter set and boundary."""

    lattice: Lattice
    params: SchemeParams
    boundary: BoundarySpec | None = None
    matrices: MomentMatrices | None = None
    workers: int | None = None
    K: np.ndarray = field(init=False)
    src: np.ndarray = field(init=False)
    sign: np.ndarray = field(init=False)

    def __post_init__(self):
        lat = self.lattice
        if lat.scheme != self.params.scheme:
            raise ParameterError(f"lattice is {lat.scheme} but parameters are {self.params.scheme}")
        if self.matrices is None:
            self.matrices = transition_matrices(lat, family_for(lat.scheme))
        if self.boundary is None:
            self.boundary = BoundarySpec("periodic") if lat.periodic else HOMOGENEOUS
        if self.boundary.kind == "periodic" and np.any(lat.neighbors < 0):
            raise ParameterError("periodic boundary requested on a lattice with cut links")
        if self.workers is None:
            self.workers = default_workers()
        self.K = collision_matrices(self.matrices, self.params)
        q = lat.q
        N = lat.n_nodes
        nb, dual = lat.neighbors, lat.dual
        cut = nb < 0
        own = np.arange(N)[:, None] * q + np.arange(q)
        self.src = np.where(cut, own, nb * q + dual).ravel()
        self.sign = np.where(cut, -1.0, 1.0).ravel()
        self.cut_slots = np.flatnonzero(cut)
        owner, j = np.divmod(self.cut_slots, q)
        self.wall_points = lat.wall_points[owner, j]
        # 2 f^eq_j per unit wall density, from the owner's P and m^eq.
        feq = np.einsum("cjk,k->cj", self.matrices.P, equilibrium_moments(1.0, self.params, q))
        self.wall_coeff = 2.0 * feq[self.matrices.cls[owner], j]
        self._per_node = not lat.uniform_classes
        self._class_rows = [] if self._per_node else [np.flatnonzero(self.matrices.cls == c) for c in range(self.K.shape[0])]
        self._static_wall = None
        self._pool = None

    # -- pieces of one step -------------------------------------------------

    def collide(self, f: np.ndarray) -> np.ndarray:
        """Outgoing populations f* from incoming f, shape (N, q)."""
        out = np.empty_like(f)
        N = f.shape[0]
        if self.workers <= 1 or N < 2 * self.workers:
            self._collide_range(f, out, 0, N)
            return out
        bounds = np.linspace(0, N, self.workers + 1).astype(int)
        if self._pool is None:
            self._pool = ThreadPoolExecutor(self.workers)
        list(self._pool.map(lambda ab: self._collide_range(f, out, *ab), zip(bounds[:-1], bounds[1:])))
        return out

    def _collide_range(self, f, out, lo, hi):
        if self._per_node:
            out[lo:hi] = np.einsum("nij,nj->ni", self.K[lo:hi], f[lo:hi])
            return
        if len(self._class_rows) == 1:
            out[lo:hi] = f[lo:hi] @ self.K[0].T
            return
        if lo == 0 and hi == f.shape[0]:
            groups = self._class_rows
        else:
            cls = self.matrices.cls[lo:hi]
            groups = [np.flatnonzero(cls == c) + lo for c in range(self.K.shape[0])]
        for c, rows in enumerate(groups):
            if rows.size:
                out[rows] = f[rows] @ self.K[c].T
        return

    def wall_term(self, t: float) -> np.ndarray:
        """Inhomogeneous part of the anti-bounce-back closure at time t."""
        if self.cut_slots.size == 0:
            return np.zeros(0)
        if self.boundary.kind != "dirichlet":
            raise ParameterError("cut links need a Dirichlet boundary")
        w = self.boundary.wall_value
        if not callable(w):
            if self._static_wall is None:
                self._static_wall = self.wall_coeff * float(w)
            return self._static_wall
        return self.wall_coeff * self.boundary.values(self.wall_points, t)

    def stream(self, fstar: np.ndarray, t: float, homogeneous: bool = False) -> np.ndarray:
        new = np.take(fstar.ravel(), self.src)
        new *= self.sign
        if self.cut_slots.size and not homogeneous:
            new[self.cut_slots] += self.wall_term(t)
        return new.reshape(fstar.shape)

    def step(self, state: FieldState) -> FieldState:
        f = self.stream(self.collide(state.f), state.t)
        n = state.step_count + 1
        if not np.all(np.isfinite(f)):
            node = int(np.argmax(~np.all(np.isfinite(f), axis=1)))
            raise DivergenceError(n, node)
        return FieldState(f, state.t + self.params.dt, n)

    def run(self, state: FieldState, steps: int, callback=None, every: int = 1) -> FieldState:
        for _ in range(int(steps)):
            state = self.step(state)
            if callback is not None and state.step_count % every == 0:
                callback(state)
        return state

    # -- linear-operator views ---------------------------------------------

    def apply(self, f_flat: np.ndarray) -> np.ndarray:
        """One step with homogeneous boundary data on a flat state vector."""
        f = np.asarray(f_flat)
        shape = (self.lattice.n_nodes, self.lattice.q)
        if np.iscomplexobj(f):
            return self.apply(f.real) + 1j * self.apply(f.imag)
        return self.stream(self.collide(f.reshape(shape)), 0.0, homogeneous=True).ravel()

    @property
    def size(self) -> int:
        return self.lattice.n_nodes * self.lattice.q

    def sparse_matrix(self) -> sp.csr_matrix:
        """The homogeneous one-step operator as a sparse matrix."""
        q = self.lattice.q
        n = self.size
        owner, row = np.divmod(self.src, q)
        K = self.K[self.matrices.cls[owner], row]  # (n, q): row `row` of the owner's K
        cols = owner[:, None] * q + np.arange(q)
        vals = self.sign[:, None] * K
        return sp.csr_matrix((vals.ravel(), (np.repeat(np.arange(n), q), cols.ravel())), shape=(n, n))

    # -- states ---------------------------------------------------------------

    def equilibrium_state(self, rho, t: float = 0.0) -> FieldState:
        """Incoming populations whose moments are the equilibrium of ``rho``."""
        rho = np.broadcast_to(np.asarray(rho, dtype=float), (self.lattice.n_nodes,))
        m_eq = equilibrium_moments(rho, self.params, self.lattice.q)
        Mt_inv = self.matrices.Mt_inv[self.matrices.cls]
        f = np.einsum("nij,nj->ni", Mt_inv, m_eq)
        return FieldState(f, t, 0)

    def moments(self, f: np.ndarray) -> np.ndarray:
        return np.einsum("nkj,nj->nk", self.matrices.Mt[self.matrices.cls], f)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


def apply_dirichlet(state: FieldState, lattice: Lattice, boundary: BoundarySpec, params: SchemeParams, stepper=None):
    """Incoming populations on every cut link after one collision of ``state``.

    Returns ``(cut_links, values)`` with ``cut_links`` the (L, 2) owner/direction
    array in the lattice's row-major order.
    """
    st = stepper or Stepper(lattice, params, boundary)
    fstar = st.collide(state.f)
    values = -fstar.ravel()[st.cut_slots] + st.wall_term(state.t)
    return lattice.cut_links, values


def step(state: FieldState, lattice: Lattice, matrices: MomentMatrices | None, params: SchemeParams, boundary=None) -> FieldState:
    """Single step without keeping a :class:`Stepper` around (convenience)."""
    return Stepper(lattice, params, boundary, matrices, workers=1).step(state)


def operator_apply(f_flat: np.ndarray, stepper: Stepper) -> np.ndarray:
    """Homogeneous one-step operator applied to a flat state vector."""
    return stepper.apply(f_flat)
