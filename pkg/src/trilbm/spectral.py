"""Leading eigenpairs of the one-step operator.

:func:`arnoldi` is a restarted Arnoldi method in real arithmetic
(Krylov-Schur restarts with an ordered real Schur form, classical
Gram-Schmidt with one full re-orthogonalization pass).  It only needs a
black-box ``apply``.  An optional ``project`` callable, typically a symmetry
projector that commutes with the operator, is applied to every new Krylov
vector so the iteration stays inside an invariant subspace.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

import mpmath as mp

from .analysis import diffusivity, exact_collision_matrices, neg_log_near_one
from .mesh import Lattice
from .scheme import HOMOGENEOUS, BoundarySpec, SchemeParams, Stepper


class ConvergenceError(RuntimeError):
    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    """Ritz pairs sorted by decreasing modulus, with derived quantities."""

    eigenvalues: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    modes: np.ndarray | None = None
    mu_num: np.ndarray | None = None
    Lambda_num: np.ndarray | None = None
    applies: int = 0
    restarts: int = 0
    extra: dict = field(default_factory=dict)


def _orthogonalize(V, w, j):
    """Two passes of classical Gram-Schmidt of w against V[:, :j]."""
    Vj = V[:, :j]
    h = Vj.T @ w
    w = w - Vj @ h
    h2 = Vj.T @ w
    w = w - Vj @ h2
    return w, h + h2


def arnoldi(
    apply: Callable[[np.ndarray], np.ndarray],
    n: int,
    m: int | None = None,
    nev: int = 6,
    tol: float = 1e-10,
    seed: int = 0,
    max_restarts: int = 5000,
    v0: np.ndarray | None = None,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> SpectrumReport:
    """``nev`` eigenvalues of largest modulus of a real linear map.

    Converged when every wanted Ritz pair has ``||A v - lam v|| <= tol`` for
    unit ``v``; the residuals are re-verified with one extra application each.
    """
    m = max(30, 4 * nev) if m is None else m
    m = min(m, n)
    if m < nev + 2 and m < n:
        raise ValueError("subspace size m must be at least nev + 2")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) if v0 is None else np.array(v0, dtype=float)
    if project is not None:
        v = project(v)
    v = v / np.linalg.norm(v)

    V = np.zeros((n, m + 1))
    H = np.zeros((m + 1, m))
    V[:, 0] = v
    k = 0
    applies = 0
    best = np.full(nev, np.inf)
    keep = min(m - 1, nev + max(2, (m - nev) // 2))

    for restart in range(max_restarts + 1):
        for j in range(k, m):
            w = apply(V[:, j])
            applies += 1
            if project is not None:
                w = project(w)
            w, h = _orthogonalize(V, w, j + 1)
            H[: j + 1, j] = h
            beta = np.linalg.norm(w)
            H[j + 1, j] = beta
            if beta <= 1e-14 * max(1.0, np.abs(h).max(initial=0.0)):
                # Invariant subspace found: restart the tail with a fresh vector.
                w = rng.standard_normal(n)
                if project is not None:
                    w = project(w)
                w, _ = _orthogonalize(V, w, j + 1)
                H[j + 1, j] = 0.0
                beta = np.linalg.norm(w)
            V[:, j + 1] = w / beta

        Hm = H[:m, :m]
        theta, Y = np.linalg.eig(Hm)
        order = np.argsort(-np.abs(theta), kind="stable")
        theta, Y = theta[order], Y[:, order]
        res = np.abs(H[m, :m] @ Y)
        wanted = slice(0, min(nev, m))
        best = np.minimum(best[: len(res[wanted])], res[wanted])
        if np.all(res[wanted] <= tol) or m == n:
            break
        if restart == max_restarts:
            raise ConvergenceError(f"Arnoldi did not converge after {max_restarts} restarts", best)

        # Krylov-Schur restart: keep the Schur vectors of the `keep` largest.
        kk = keep
        while kk < m and kk > 0 and np.isclose(abs(theta[kk - 1]), abs(theta[kk]), rtol=1e-12, atol=0):
            kk += 1  # never split a complex-conjugate pair
        cut = abs(theta[kk - 1])
        T, Z, sdim = sla.schur(Hm, output="real", sort=lambda re, im: np.hypot(re, im) >= cut * (1 - 1e-12))
        k = sdim
        b = H[m, :m] @ Z[:, :k]
        V[:, :k] = V[:, :m] @ Z[:, :k]
        V[:, k] = V[:, m]
        H[:] = 0.0
        H[:k, :k] = T[:k, :k]
        H[k, :k] = b

    nk = min(nev, len(theta))
    vals = theta[:nk]
    X = V[:, :m] @ Y[:, :nk]
    X /= np.linalg.norm(X, axis=0)
    checked = np.empty(nk)
    for i in range(nk):
        x = X[:, i]
        Ax = apply(x.real) + (1j * apply(x.imag) if np.iscomplexobj(x) and np.any(x.imag) else 0.0)
        applies += 1
        checked[i] = np.linalg.norm(Ax - vals[i] * x)
    return SpectrumReport(vals, X, checked, applies=applies, restarts=restart)


# ---------------------------------------------------------------------------
# Symmetry projectors


def _match_points(points, targets, wraps=None, tol=1e-9):
    """Index of the target coinciding with each point (modulo periodic wraps)."""
    scale = max(1.0, float(np.abs(targets).max()))
    if wraps is not None:
        coeff = np.linalg.solve(wraps.T, points.T).T
        points = points - np.floor(coeff + 1e-9) @ wraps
        tcoeff = np.linalg.solve(wraps.T, targets.T).T
        targets = targets - np.floor(tcoeff + 1e-9) @ wraps
    key = lambda p: tuple(np.round(p / (tol * scale * 1e3)).astype(np.int64))  # noqa: E731
    lookup = {key(t): i for i, t in enumerate(targets)}
    out = np.empty(len(points), dtype=np.int64)
    for i, p in enumerate(points):
        hit = lookup.get(key(p))
        if hit is None:
            d = np.linalg.norm(targets - p, axis=1)
            hit = int(np.argmin(d))
            if d[hit] > tol * scale:
                raise ValueError("point set is not invariant under the requested map")
        out[i] = hit
    return out


def slot_permutation(lattice: Lattice, linear: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """Flat slot map of the isometry ``p -> linear @ p + offset``.

    Returns ``perm`` with ``(g f).flat[perm[s]] = f.flat[s]``.
    """
    q = lattice.q
    pos = lattice.positions @ linear.T + offset
    node = _match_points(pos, lattice.positions, lattice.wraps)
    vel = lattice.velocities @ linear.T  # (N, q, 2)
    perm = np.empty((lattice.n_nodes, q), dtype=np.int64)
    for x in range(lattice.n_nodes):
        y = node[x]
        for j in range(q):
            d = np.abs(lattice.velocities[y] - vel[x, j]).max(axis=1)
            jj = int(np.argmin(d))
            if d[jj] > 1e-9:
                raise ValueError("velocity set is not invariant under the requested map")
            perm[x, j] = y * q + jj
    return perm.ravel()


def triangle_symmetry_group(lattice: Lattice) -> list[np.ndarray]:
    """Slot permutations of the six symmetries of an equilateral-triangle lattice."""
    if lattice.wall_triangle is None:
        raise ValueError("lattice has no triangle geometry")
    c = lattice.wall_triangle.mean(axis=0)
    perms = []
    for rot in range(3):
        a = 2.0 * np.pi * rot / 3.0
        Rm = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        for flip in (False, True):
            L = Rm @ np.diag([1.0, -1.0]) if flip else Rm
            perms.append(slot_permutation(lattice, L, c - L @ c))
    return perms


def symmetric_projector(perms: list[np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    """Average over a permutation group: projector onto the invariant subspace."""

    def project(v):
        out = np.zeros_like(v)
        for p in perms:
            gv = np.empty_like(v)
            gv[p] = v
            out += gv
        return out / len(perms)

    return project


def row_average_projector(lattice: Lattice) -> Callable[[np.ndarray], np.ndarray]:
    """Projector onto states invariant under translation along the short periodic direction."""
    nx, ny = lattice.meta["nx"], lattice.meta["ny"]
    per_cell = lattice.n_nodes // (nx * ny)
    shape = (nx, ny, per_cell * lattice.q)

    def project(v):
        w = v.reshape(shape)
        return np.broadcast_to(w.mean(axis=1, keepdims=True), shape).ravel().copy()

    return project


# ---------------------------------------------------------------------------
# Physical quantities


def eig_to_continuum(lam, k_or_lambda_scale: float, dt: float, convention: str = "log"):
    """``-log(lam) / (scale * dt)`` (or ``(1 - lam) / (scale * dt)`` for ``"linear"``)."""
    lam = np.asarray(lam, dtype=complex)
    num = neg_log_near_one(1.0 - lam) if convention == "log" else 1.0 - lam
    return num / (k_or_lambda_scale * dt)


def rho_modes(vectors: np.ndarray, lattice: Lattice) -> np.ndarray:
    """Density field of each eigenvector, real, normalized to max-norm 1 with a positive peak."""
    N, q = lattice.n_nodes, lattice.q
    out = np.empty((N, vectors.shape[1]))
    for i in range(vectors.shape[1]):
        rho = vectors[:, i].reshape(N, q).sum(axis=1)
        peak = rho[np.argmax(np.abs(rho))]
        rho = (rho / peak).real if abs(peak) > 0 else rho.real
        out[:, i] = rho / np.max(np.abs(rho))
    return out


def reflection_projector(lattice: Lattice) -> Callable[[np.ndarray], np.ndarray]:
    """Projector onto states even under the mirror x -> -x."""
    perm = slot_permutation(lattice, np.diag([-1.0, 1.0]), np.zeros(2))

    def project(v):
        gv = np.empty_like(v)
        gv[perm] = v
        return 0.5 * (v + gv)

    return project


@dataclass(frozen=True)
class PipeResult:
    k: float
    lambda0: complex
    mu: float
    mu_num: complex
    eps: float
    report: SpectrumReport
    lambda_ritz: complex = 0.0
    one_minus_lambda: complex = 0.0


def pipe_diffusivity(
    lattice: Lattice,
    params: SchemeParams,
    nev: int = 3,
    tol: float = 1e-13,
    seed: int = 0,
    m: int | None = None,
    reduce: bool = True,
    refine: bool = True,
    convention: str = "log",
) -> PipeResult:
    """Numerical diffusivity from the slowest decaying nonconstant periodic mode.

    The mode with wavenumber ``k = 2 pi / L`` along the pipe (L the period in
    x) is the leading eigenvalue below 1.  With ``reduce`` the iteration runs
    on states that are invariant along the short direction and even in x;
    that subspace holds the cosine mode and makes its eigenvalue simple.
    With ``refine`` the eigenvalue is polished by a two-sided Rayleigh
    quotient using a left eigenvector from a second run on the transpose.
    """
    if not lattice.periodic:
        raise ValueError("pipe_diffusivity needs a periodic lattice")
    st = Stepper(lattice, params, BoundarySpec("periodic"), workers=1)
    project = None
    if reduce:
        rows, mirror = row_average_projector(lattice), reflection_projector(lattice)
        project = lambda v: rows(mirror(v))  # noqa: E731
    rep = arnoldi(st.apply, st.size, m=m, nev=nev, tol=tol, seed=seed, project=project)
    L = lattice.meta["length_x"]
    k = 2.0 * np.pi / L
    idx = _fundamental_index(rep, lattice, k)
    lam_ritz = rep.eigenvalues[idx]
    lam0 = lam_ritz
    if refine:
        A = st.sparse_matrix()
        AT = A.T.tocsr()
        left = arnoldi(lambda v: AT @ v, st.size, m=m, nev=nev, tol=tol, seed=seed + 1, project=project)
        j = int(np.argmin(np.abs(left.eigenvalues - lam_ritz)))
        v = _real_vector(rep.vectors[:, idx])
        w = _real_vector(left.vectors[:, j])
        exact = _exact_gap(st, w, v) if refine == "exact" or refine is True else None
        if exact is None:
            r = A @ v - lam_ritz.real * v
            gap = (1.0 - lam_ritz.real) - (w @ r) / (w @ v)
        else:
            gap = exact
        # 1 - lambda is carried on its own: near 1 a double cannot resolve
        # lambda finer than 1e-16, which is the size of the error we measure.
        lam0 = 1.0 - gap
    else:
        gap = 1.0 - lam0
    mu = diffusivity(params)
    if convention == "log":
        mu_num = complex(neg_log_near_one(gap)) / (k**2 * params.dt)
    else:
        mu_num = complex(gap) / (k**2 * params.dt)
    return PipeResult(k, complex(lam0), mu, complex(mu_num), float(abs(mu - mu_num)), rep, complex(lam_ritz), complex(gap))


def _exact_gap(st: Stepper, w: np.ndarray, v: np.ndarray, dps: int = 50):
    """``1 - w.Av / w.v`` with the collision matrices and dot products in extended precision.

    Rounding the collision matrices to double perturbs the operator by about
    1e-16, which shifts an eigenvalue near 1 by the same amount.  The
    two-sided Rayleigh quotient is insensitive to first-order errors in the
    vectors, so double eigenvectors with an exact operator give the
    eigenvalue to far beyond double precision.  Returns ``None`` when the
    lattice is not one of the regular meshes with known exact matrices.
    """
    lat = st.lattice
    if not lat.uniform_classes:
        return None
    q = lat.q
    N = lat.n_nodes
    with mp.workdps(dps):
        table = exact_collision_matrices(st.params, mp.mp)
        names = [lat.class_names[c] for c in np.unique(lat.node_class)]
        if any(n not in table for n in names):
            return None
        Kc = [table[n] for n in names]
        for c, K in enumerate(Kc):
            if np.max(np.abs(np.array(K.tolist(), dtype=float) - st.K[c])) > 1e-12:
                return None
        # w.A v = sum over nodes of u_x . K v_x with u the signed gather of w.
        u = np.empty_like(w)
        u[st.src] = st.sign * w
        U, V, W = u.reshape(N, q), v.reshape(N, q), w.reshape(N, q)
        num = mp.mpf(0)
        den = mp.mpf(0)
        for c, K in enumerate(Kc):
            rows = st.matrices.cls == c
            blocks, counts = np.unique(np.hstack([U[rows], V[rows], W[rows]]), axis=0, return_counts=True)
            cnt = [mp.mpf(int(n)) for n in counts]
            Ub, Vb, Wb = blocks[:, :q], blocks[:, q : 2 * q], blocks[:, 2 * q :]
            for i in range(q):
                ui = [mp.mpf(float(a)) * n for a, n in zip(Ub[:, i], cnt)]
                for j in range(q):
                    if K[i, j] != 0:
                        num += K[i, j] * mp.fdot(ui, [mp.mpf(float(b)) for b in Vb[:, j]])
                wi = [mp.mpf(float(a)) * n for a, n in zip(Wb[:, i], cnt)]
                den += mp.fdot(wi, [mp.mpf(float(b)) for b in Vb[:, i]])
        return float((den - num) / den)


def _real_vector(x):
    x = x * np.exp(-1j * np.angle(x[np.argmax(np.abs(x))]))
    return x.real / np.linalg.norm(x.real)


def _fundamental_index(rep, lattice, k):
    rho = rho_modes(rep.vectors, lattice)
    xs = lattice.positions[:, 0]
    wave = np.stack([np.cos(k * xs), np.sin(k * xs)], axis=1)
    score = []
    for i in range(len(rep.eigenvalues)):
        coef, *_ = np.linalg.lstsq(wave, rho[:, i], rcond=None)
        fit = np.linalg.norm(wave @ coef - rho[:, i]) / np.linalg.norm(rho[:, i])
        score.append(fit if abs(rep.eigenvalues[i] - 1.0) > 1e-9 else np.inf)
    idx = int(np.argmin(score))
    if score[idx] > 1e-3:
        raise ConvergenceError("no eigenvector matches the fundamental pipe mode", rep.residuals)
    return idx


def dirichlet_modes(
    lattice: Lattice,
    params: SchemeParams,
    nev: int = 8,
    tol: float = 1e-10,
    seed: int = 0,
    m: int | None = None,
    symmetric: bool = False,
    convention: str = "log",
    max_restarts: int = 5000,
) -> SpectrumReport:
    """Leading Dirichlet modes on a bounded lattice with zero wall density.

    ``Lambda_num = -log(lam) / (mu dt)`` is in the inverse-squared length units
    of the lattice geometry.  ``symmetric=True`` restricts the iteration to
    states invariant under the six symmetries of the triangle.
    """
    if lattice.periodic:
        raise ValueError("dirichlet_modes needs a bounded lattice")
    if not np.isclose(lattice.dx, params.dx, rtol=1e-14):
        raise ValueError("params.dx must match lattice.dx")
    st = Stepper(lattice, params, HOMOGENEOUS, workers=1)
    project = symmetric_projector(triangle_symmetry_group(lattice)) if symmetric else None
    rep = arnoldi(st.apply, st.size, m=m, nev=nev, tol=tol, seed=seed, project=project, max_restarts=max_restarts)
    mu = diffusivity(params)
    Lam = eig_to_continuum(rep.eigenvalues, mu, params.dt, convention)
    return SpectrumReport(
        rep.eigenvalues,
        rep.vectors,
        rep.residuals,
        modes=rho_modes(rep.vectors, lattice),
        Lambda_num=Lam,
        applies=rep.applies,
        restarts=rep.restarts,
        extra={"symmetric": symmetric},
    )
