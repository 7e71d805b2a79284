"""Moment machinery: polynomial families, moment and transition matrices.

For a node with velocities xi_j the moment matrix is ``M[k, j] = p_k(xi_j)``
and the incoming-moment matrix is ``Mt[k, j] = p_k(-xi_j)``.  Outgoing
particles are rebuilt from relaxed moments with the transition matrix
``P(x)[i, l] = inv(Mt(x_i))[n_i(x), l]``, which makes the incoming moments
at every internal node consistent with what its neighbors emitted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mesh import Lattice

log = logging.getLogger(__name__)


class SingularMomentMatrix(np.linalg.LinAlgError):
    """A moment matrix is singular; ``node`` identifies where, when known."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


@dataclass(frozen=True)
class PolynomialFamily:
    """Bivariate polynomials stored as ``{(a, b): coefficient}`` maps for X^a Y^b."""

    name: str
    terms: tuple[dict, ...]

    def __len__(self):
        return len(self.terms)

    def evaluate(self, X, Y) -> np.ndarray:
        """Values of every member at (X, Y); shape ``(q,) + shape(X)``."""
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        out = np.zeros((len(self.terms),) + np.broadcast(X, Y).shape)
        for k, poly in enumerate(self.terms):
            for (a, b), c in poly.items():
                out[k] += c * X**a * Y**b
        return out


def d2t7_family() -> PolynomialFamily:
    r = 4.0 / np.sqrt(3.0)
    return PolynomialFamily(
        "d2t7",
        (
            {(0, 0): 1.0},
            {(1, 0): 1.0},
            {(0, 1): 1.0},
            {(2, 0): 1.0, (0, 2): 1.0},
            {(1, 1): r},
            {(2, 0): 2.0, (0, 2): -2.0},
            {(0, 1): 3.0, (0, 3): -4.0},
        ),
    )


def d2t4_family() -> PolynomialFamily:
    return PolynomialFamily("d2t4", d2t7_family().terms[:4])


def family_for(scheme: str) -> PolynomialFamily:
    return {"d2t7": d2t7_family, "d2t4": d2t4_family}[scheme.lower()]()


def moment_matrix(family: PolynomialFamily, velocities) -> np.ndarray:
    """``M[k, j] = p_k(xi_j)``; raises :class:`SingularMomentMatrix` if not invertible."""
    v = np.asarray(velocities, dtype=float)
    if v.shape != (len(family), 2):
        raise ValueError(f"need {len(family)} velocities for family {family.name}, got shape {v.shape}")
    M = family.evaluate(v[:, 0], v[:, 1])
    _check_invertible(M)
    return M


def _check_invertible(M, node=None):
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e12:
        where = "" if node is None else f" at node {node}"
        raise SingularMomentMatrix(f"moment matrix is singular{where} (cond={cond:.3g})", node)
    if cond > 1e8:
        log.warning("moment matrix poorly conditioned (cond=%.3g)", cond)
    return cond


@dataclass(frozen=True, eq=False)
class MomentMatrices:
    """Per-class matrices; ``cls[x]`` selects the row of the stacked arrays for node x."""

    M: np.ndarray
    Mt: np.ndarray
    Minv: np.ndarray
    Mt_inv: np.ndarray
    P: np.ndarray
    cls: np.ndarray

    @property
    def q(self) -> int:
        return self.M.shape[1]

    def node(self, x: int) -> dict:
        c = self.cls[x]
        return {"M": self.M[c], "Mt": self.Mt[c], "Minv": self.Minv[c], "P": self.P[c]}


def _stacked_moment_matrices(family, velocities):
    X, Y = velocities[..., 0], velocities[..., 1]
    M = np.moveaxis(family.evaluate(X, Y), 0, 1)  # (N, q, q) with [k, j]
    Mt = np.moveaxis(family.evaluate(-X, -Y), 0, 1)
    return M, Mt


def transition_matrices(lattice: Lattice, family: PolynomialFamily | None = None) -> MomentMatrices:
    """Build M, Mt, their inverses and P for every node (stored per class when possible).

    Rows of P belonging to cut links use the node's own ``inv(M)``: a ghost
    neighbor mirrors the node, whose incoming matrix is then ``M``.
    """
    family = family or family_for(lattice.scheme)
    q = lattice.q
    if len(family) != q:
        raise ValueError(f"family {family.name} has {len(family)} members, lattice has q={q}")
    M, Mt = _stacked_moment_matrices(family, lattice.velocities)
    N = lattice.n_nodes
    for x in range(N):
        if lattice.uniform_classes and x != _class_representative(lattice, x):
            continue
        _check_invertible(M[x], x)
        _check_invertible(Mt[x], x)
    Minv = np.linalg.inv(M)
    Mt_inv = np.linalg.inv(Mt)

    nb = lattice.neighbors
    dual = lattice.dual
    P = np.empty_like(M)
    for i in range(q):
        internal = nb[:, i] >= 0
        rows = np.where(internal[:, None], Mt_inv[np.where(internal, nb[:, i], 0), np.where(internal, dual[:, i], 0)], Minv[:, i])
        P[:, i, :] = rows

    if lattice.uniform_classes:
        classes = np.unique(lattice.node_class)
        reps = np.array([_first_internal(lattice, c) for c in classes])
        for c, r in zip(classes, reps):
            members = lattice.node_class == c
            for name, arr in (("M", M), ("Mt", Mt), ("P", P)):
                spread = np.max(np.abs(arr[members] - arr[r]))
                if spread > 1e-12:
                    raise ValueError(f"{name} not uniform within class {lattice.class_names[c]} (spread {spread:.3g})")
        cls = np.searchsorted(classes, lattice.node_class)
        return MomentMatrices(M[reps], Mt[reps], Minv[reps], Mt_inv[reps], P[reps], cls)
    return MomentMatrices(M, Mt, Minv, Mt_inv, P, np.arange(N))


def _class_representative(lattice, x):
    return int(np.argmax(lattice.node_class == lattice.node_class[x]))


def _first_internal(lattice, c):
    members = np.nonzero(lattice.node_class == c)[0]
    internal = members[np.all(lattice.neighbors[members] >= 0, axis=1)]
    return int(internal[0] if internal.size else members[0])


def prop1_residuals(lattice: Lattice, mats: MomentMatrices) -> np.ndarray:
    """Per-node max |sum_j Mt(x)[k, j] * P(x_j)[n_j(x), l] - delta_kl| over internal nodes.

    Boundary nodes get NaN.
    """
    q = lattice.q
    nb, dual = lattice.neighbors, lattice.dual
    out = np.full(lattice.n_nodes, np.nan)
    internal = np.all(nb >= 0, axis=1)
    xs = np.nonzero(internal)[0]
    Mt = mats.Mt[mats.cls[xs]]  # (n, q, q)
    # Row j of the gathered matrix: P(x_j)[n_j(x), :].
    gathered = mats.P[mats.cls[nb[xs]], dual[xs]]  # (n, q, q)
    prod = np.einsum("nkj,njl->nkl", Mt, gathered)
    out[xs] = np.max(np.abs(prod - np.eye(q)), axis=(1, 2))
    return out


def lambda_tensor(M) -> np.ndarray:
    """Momentum-velocity tensor ``L[k, p, l] = sum_j M[k, j] M[p, j] inv(M)[j, l]``."""
    M = np.asarray(M, dtype=float)
    _check_invertible(M)
    return np.einsum("kj,pj,jl->kpl", M, M, np.linalg.inv(M))
