"""Equivalent-equation coefficients, the built-in parameter sets and the
plane-wave (one-point) dispersion analysis.

Numerical diffusivity convention: for a physical eigenvalue ``lam`` of the
one-step amplification matrix at wavenumber ``k``,
``mu_num = -log(lam) / (k**2 * dt)`` (principal branch, complex in general)
and ``eps = |mu - mu_num|``.  The logarithm removes the ``O(k**2)`` bias that
``(1 - lam) / k**2`` carries from the exponential time dependence; the latter
is available as ``convention="linear"``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath as mp
import numpy as np

from .basis import family_for
from .mesh import HEX_VELOCITIES, LEFT_VELOCITIES, RIGHT_VELOCITIES
from .scheme import ParameterError, SchemeParams, TIME_FACTOR, equilibrium_moments

ZERO_TOL = 1e-12


class BranchTrackingError(RuntimeError):
    pass


class InsufficientSpan(ValueError):
    pass


# ---------------------------------------------------------------------------
# Closed-form coefficients


def henon_sigma(s: float) -> float:
    if not 0.0 < s < 2.0:
        raise ParameterError(f"relaxation rate must lie in (0, 2), got {s}")
    return 1.0 / s - 0.5


def mu_d2t7(zeta: float, a3: float, s1: float) -> float:
    return 0.5 * zeta * a3 * henon_sigma(s1)


def theta_d2t7(zeta: float, a3: float, s1: float, s3: float, s4: float) -> float:
    """Coefficient of the fourth-order term in the seven-velocity equivalent equation."""
    g1, g3, g4 = henon_sigma(s1), henon_sigma(s3), henon_sigma(s4)
    return -(1.0 / 16.0) * g1 * a3 * zeta * ((1.0 - a3) * (1.0 - 4.0 * g1 * g3) - 2.0 * g1 * g4 + 4.0 * a3 * g1**2)


def d2t4_first_order_coeff(zeta: float, a3: float, s1: float) -> float:
    """Coefficient of the anisotropic dx*(dxx - 3 dyy) dx term of the four-velocity scheme."""
    g1 = henon_sigma(s1)
    return (a3 * zeta / 24.0) * (12.0 * g1**2 - 1.0)


def mu_d2t4(zeta: float, a3: float, s1: float) -> float:
    return zeta * a3 * henon_sigma(s1)


def diffusivity(params: SchemeParams) -> float:
    if params.scheme == "d2t7":
        return mu_d2t7(params.zeta, params.a3, params.s[0])
    return mu_d2t4(params.zeta, params.a3, params.s[0])


# ---------------------------------------------------------------------------
# Parameter catalog

_SETS = {
    "d2t7-order2": ("d2t7", 0.25, (0.8, 0.8, 1.428571428571428, 0.481927710843373, 0.481927710843373, 0.476190476190476)),
    "d2t7-order4": ("d2t7", 0.25, (0.8, 0.8, 1.428571428571428, 0.930232558139534, 0.930232558139534, 0.526315789473684)),
    "d2t7-order6": ("d2t7", 0.25, (0.8, 0.8, 1.086117521785847, 1.344205296559553, 1.344205296559553, 0.647305233773416)),
    "d2t4-order1": ("d2t4", 0.216506350946109, (1.2, 1.2, 0.750796078775233)),
    "d2t4-order2": ("d2t4", 0.25, (1.267949192431122, 1.267949192431122, 0.422649730810374)),
    "d2t4-order3": ("d2t4", 0.25, (1.267949192431122, 1.267949192431122, 0.758775495823486)),
    "d2t4-order4": ("d2t4", 0.25, (1.267949192431122, 1.267949192431122, 0.732050807568877)),
}

# Formal accuracy claimed for each set by the equivalent-equation analysis.
FORMAL_ORDER = {
    "d2t7-order2": 2,
    "d2t7-order4": 4,
    "d2t7-order6": 6,
    "d2t4-order1": 1,
    "d2t4-order2": 2,
    "d2t4-order3": 3,
    "d2t4-order4": 4,
}


def builtin_param_sets(zeta: float = 1.0, dx: float = 1.0) -> dict[str, SchemeParams]:
    return {
        name: SchemeParams(scheme, a3, s, zeta=zeta, dx=dx, name=name) for name, (scheme, a3, s) in _SETS.items()
    }


def param_set(name: str, **kw) -> SchemeParams:
    sets = builtin_param_sets(**kw)
    key = name if name in sets else None
    if key is None:
        matches = [n for n in sets if n.endswith(name)]
        if len(matches) != 1:
            raise KeyError(f"unknown parameter set {name!r}; choose from {sorted(sets)}")
        key = matches[0]
    return sets[key]


@dataclass(frozen=True)
class OrderReport:
    scheme: str
    param_set: str
    mu: float
    theta: float
    formal_order: int


def order_report(params: SchemeParams) -> OrderReport:
    """Diffusivity, leading error coefficient and the formal order it implies.

    For the four-velocity scheme the higher coefficients are not available in
    closed form; the order beyond 2 is taken from the catalog claim.
    """
    mu = diffusivity(params)
    if params.scheme == "d2t7":
        theta = theta_d2t7(params.zeta, params.a3, params.s[0], params.s[2], params.s[3])
        order = 2 if abs(theta) >= ZERO_TOL else max(4, FORMAL_ORDER.get(params.name, 4))
    else:
        theta = d2t4_first_order_coeff(params.zeta, params.a3, params.s[0])
        order = 1 if abs(theta) >= ZERO_TOL else max(2, FORMAL_ORDER.get(params.name, 2))
    return OrderReport(params.scheme, params.name, mu, theta, order)


# ---------------------------------------------------------------------------
# One-point (plane wave) analysis


def _exact_velocity_tables(scheme: str, ctx):
    """Velocity tables with entries built exactly in the arithmetic context."""
    if ctx is None:
        if scheme == "d2t7":
            return [HEX_VELOCITIES]
        return [LEFT_VELOCITIES, RIGHT_VELOCITIES]
    h = ctx.sqrt(3) / 2
    half = ctx.mpf(1) / 2
    if scheme == "d2t7":
        hexv = [(0, 0), (0, 1), (-h, half), (-h, -half), (0, -1), (h, -half), (h, half)]
        return [[(ctx.mpf(a), ctx.mpf(b)) for a, b in hexv]]
    left = [(ctx.mpf(0), ctx.mpf(0)), (ctx.mpf(-1), ctx.mpf(0)), (half, -h), (half, h)]
    right = [(-a + 0, -b + 0) for a, b in left]
    return [left, right]


def _moment_matrix_ctx(scheme, vel, ctx):
    """Moment matrix built with exact-in-context polynomial coefficients."""
    q = len(vel)
    if ctx is None:
        return family_for(scheme).evaluate(np.asarray(vel)[:, 0], np.asarray(vel)[:, 1])
    r = 4 / ctx.sqrt(3)
    rows = [
        lambda X, Y: ctx.mpf(1),
        lambda X, Y: X,
        lambda X, Y: Y,
        lambda X, Y: X**2 + Y**2,
        lambda X, Y: r * X * Y,
        lambda X, Y: 2 * (X**2 - Y**2),
        lambda X, Y: 3 * Y - 4 * Y**3,
    ][:q]
    return ctx.matrix([[p(X, Y) for (X, Y) in vel] for p in rows])


def _relaxation_ctx(params, ctx):
    q = params.q
    rates = params.rates
    unit = equilibrium_moments(1.0, params, q)
    if ctx is None:
        return np.eye(q) - np.diag(rates) + np.outer(rates * unit, np.eye(q)[0])
    R = ctx.eye(q)
    for k in range(q):
        R[k, k] = 1 - ctx.mpf(rates[k])
        R[k, 0] += ctx.mpf(rates[k]) * ctx.mpf(unit[k])
    return R


def exact_collision_matrices(params: SchemeParams, ctx=mp.mp) -> dict:
    """Incoming-form collision matrices of the regular meshes in ``ctx`` precision.

    Keys are class names: ``BRAVAIS`` for the hexagonal scheme, ``LEFT`` and
    ``RIGHT`` for the four-velocity scheme.
    """
    tables = _exact_velocity_tables(params.scheme, ctx)
    R = _relaxation_ctx(params, ctx)
    if params.scheme == "d2t7":
        vel = tables[0]
        M = _moment_matrix_ctx("d2t7", vel, ctx)
        Mt = _moment_matrix_ctx("d2t7", [(-a, -b) for a, b in vel], ctx)
        return {"BRAVAIS": ctx.inverse(M) * R * Mt}
    ML, MR = (_moment_matrix_ctx("d2t4", t, ctx) for t in tables)
    return {"LEFT": ctx.inverse(ML) * R * MR, "RIGHT": ctx.inverse(MR) * R * ML}


def amplification_matrix(params: SchemeParams, k: float, theta_k: float, cell: str = "auto", ctx=None):
    """One-step plane-wave amplification matrix.

    ``cell="single"``: one node with its own velocity set, streaming
    ``f_j(x) <- f*_j(x - xi_j dx)``, i.e. ``A = diag(exp(-i k.xi_j dx)) inv(M) R M``.
    ``cell="pair"`` (four-velocity scheme only): LEFT+RIGHT Bloch cell of the
    actual mesh, an 8x8 matrix on incoming populations.  ``"auto"`` picks
    ``single`` for the Bravais scheme and ``pair`` otherwise.
    ``ctx`` is ``None`` for numpy or an mpmath context for extended precision.
    """
    if cell == "auto":
        cell = "single" if params.scheme == "d2t7" else "pair"
    if cell == "pair" and params.scheme != "d2t4":
        raise ParameterError("the two-node cell applies to the four-velocity scheme")
    tables = _exact_velocity_tables(params.scheme, ctx)
    R = _relaxation_ctx(params, ctx)
    q = params.q
    if ctx is None:
        kx, ky = k * math.cos(theta_k), k * math.sin(theta_k)
        dx = params.dx

        def phase(v, sgn):
            return np.exp(sgn * 1j * (kx * v[0] + ky * v[1]) * dx)

        if cell == "single":
            vel = tables[0]
            M = _moment_matrix_ctx(params.scheme, vel, None)
            K = np.linalg.solve(M, R @ M)
            return np.array([phase(v, -1) for v in vel])[:, None] * K
        ML, MR = (_moment_matrix_ctx(params.scheme, t, None) for t in tables)
        # Incoming form: Mt(LEFT) = M(RIGHT) and vice versa; P = inv(M) per class.
        KL = np.linalg.solve(ML, R @ MR)
        KR = np.linalg.solve(MR, R @ ML)
        A = np.zeros((2 * q, 2 * q), dtype=complex)
        A[0, :q] = KL[0]
        A[q, q:] = KR[0]
        for j in range(1, q):
            A[j, q:] = phase(tables[0][j], +1) * KR[j]
            A[q + j, :q] = phase(tables[1][j], +1) * KL[j]
        return A

    kk = ctx.mpf(k)
    c, s = ctx.cos(ctx.mpf(theta_k)), ctx.sin(ctx.mpf(theta_k))
    dx = ctx.mpf(params.dx)

    def phase_mp(v, sgn):
        return ctx.expj(sgn * kk * (v[0] * c + v[1] * s) * dx)

    if cell == "single":
        vel = tables[0]
        M = _moment_matrix_ctx(params.scheme, vel, ctx)
        K = ctx.inverse(M) * R * M
        A = ctx.matrix(q, q)
        for j in range(q):
            ph = phase_mp(vel[j], -1)
            for l in range(q):
                A[j, l] = ph * K[j, l]
        return A
    ML, MR = (_moment_matrix_ctx(params.scheme, t, ctx) for t in tables)
    KL = ctx.inverse(ML) * R * MR
    KR = ctx.inverse(MR) * R * ML
    A = ctx.matrix(2 * q, 2 * q)
    for l in range(q):
        A[0, l] = KL[0, l]
        A[q, q + l] = KR[0, l]
    for j in range(1, q):
        pl, pr = phase_mp(tables[0][j], +1), phase_mp(tables[1][j], +1)
        for l in range(q):
            A[j, q + l] = pl * KR[j, l]
            A[q + j, l] = pr * KL[j, l]
    return A


@dataclass(frozen=True)
class OnePointSpectrum:
    k: float
    theta_k: float
    eigenvalues: np.ndarray
    physical: complex


@dataclass(frozen=True)
class DispersionPoint:
    k: float
    theta_k: float
    lambda_phys: complex
    mu_num: complex
    eps: float


def _refine(params, k, theta_k, cell, lam0, vec0, dps):
    """Polish one eigenpair of the amplification matrix by inverse iteration in mpmath."""
    with mp.workdps(dps):
        A = amplification_matrix(params, k, theta_k, cell, ctx=mp)
        n = A.rows
        sigma = mp.mpc(complex(lam0))
        B = A - sigma * mp.eye(n)
        x = mp.matrix([mp.mpc(complex(v)) for v in vec0])
        for _ in range(4):
            x = mp.lu_solve(B, x)
            x = x / mp.norm(x)
        Ax = A * x
        i = max(range(n), key=lambda t: abs(x[t]))
        return Ax[i] / x[i]


def one_point_spectrum(
    params: SchemeParams,
    k: float,
    theta_k: float = 0.0,
    cell: str = "auto",
    previous: complex | None = None,
    dps: int | None = None,
) -> OnePointSpectrum:
    """Eigenvalues of the amplification matrix and the physical branch.

    The physical eigenvalue is the one continuing from 1 at ``k = 0``:
    the eigenvalue closest to ``previous`` (the value at a slightly smaller
    ``k`` on the same ray), or to 1 when no previous value is given.  With
    ``dps`` the physical eigenvalue is refined to that many digits and
    returned as an ``mpmath.mpc``.
    """
    A = amplification_matrix(params, k, theta_k, cell)
    w, V = np.linalg.eig(A)
    target = 1.0 if previous is None else complex(previous)
    dist = np.abs(w - target)
    order = np.argsort(dist)
    idx = order[0]
    if len(w) > 1 and previous is not None:
        gap = dist[order[1]]
        if gap < 1e-10 and abs(w[order[1]] - w[idx]) > 1e-12:
            raise BranchTrackingError(f"ambiguous physical branch at k={k}, theta={theta_k}")
    lam = w[idx]
    if dps is not None:
        lam = _refine(params, k, theta_k, cell, lam, V[:, idx], dps)
    return OnePointSpectrum(k, theta_k, w, lam)


def neg_log_near_one(gap):
    """``-log(1 - gap)`` accurate for small complex ``gap`` (numpy's complex log1p is not)."""
    g = np.asarray(gap, dtype=complex)
    a, b = -g.real, -g.imag
    re = 0.5 * np.log1p(2.0 * a + a * a + b * b)
    im = np.arctan2(b, 1.0 + a)
    return -(re + 1j * im)


def numerical_diffusivity(lam, k, params: SchemeParams, convention: str = "log"):
    """mu_num from a physical eigenvalue; exact arithmetic is kept for mpmath input."""
    if isinstance(lam, (mp.mpc, mp.mpf)):
        kk = mp.mpf(k)
        dt = mp.mpf(TIME_FACTOR[params.scheme]) * mp.mpf(params.dx) ** 2 / mp.mpf(params.zeta)
        num = -mp.log(lam) if convention == "log" else 1 - lam
        return num / (kk**2 * dt)
    gap = 1.0 - complex(lam)
    num = complex(neg_log_near_one(gap)) if convention == "log" else gap
    return num / (k**2 * params.dt)


def _diffusivity_mp(params):
    g1 = 1 / mp.mpf(params.s[0]) - mp.mpf(1) / 2
    base = mp.mpf(params.zeta) * mp.mpf(params.a3) * g1
    return base / 2 if params.scheme == "d2t7" else base


def dispersion_sweep(
    params: SchemeParams,
    ks,
    thetas=(0.0,),
    cell: str = "auto",
    dps: int | None = 40,
    convention: str = "log",
) -> list[DispersionPoint]:
    """Physical branch along each ray ``theta`` by continuation from ``k = 0``.

    ``ks`` are sorted ascending internally; intermediate continuation steps
    are inserted so each step in k is small compared to the branch spacing.
    """
    ks = np.sort(np.asarray(ks, dtype=float))
    out = []
    with mp.workdps(dps or 15):
        mu = _diffusivity_mp(params) if dps else diffusivity(params)
    for th in thetas:
        prev = 1.0
        kprev = 0.0
        for k in ks:
            # Continue through intermediate wavenumbers when the jump is large.
            for kc in np.linspace(kprev, k, max(1, int(np.ceil((k - kprev) / 0.05))) + 1)[1:-1]:
                prev = one_point_spectrum(params, kc, th, cell, previous=prev).physical
            spec = one_point_spectrum(params, k, th, cell, previous=prev, dps=dps)
            prev = complex(spec.physical)
            kprev = k
            if dps:
                with mp.workdps(dps):
                    mun = numerical_diffusivity(spec.physical, k, params, convention)
                    eps = float(abs(mu - mun))
                    mun = complex(mun)
            else:
                mun = numerical_diffusivity(spec.physical, k, params, convention)
                eps = float(abs(mu - mun))
            out.append(DispersionPoint(float(k), float(th), complex(spec.physical), mun, eps))
    return out


def measured_order(points, min_span: float = 10.0) -> float:
    """Least-squares slope of log(error) against log(k or h).

    ``points`` is a sequence of :class:`DispersionPoint` or ``(h, error)`` pairs.
    """
    pts = [(p.k, p.eps) if isinstance(p, DispersionPoint) else (float(p[0]), float(p[1])) for p in points]
    h = np.array([p[0] for p in pts])
    e = np.array([p[1] for p in pts])
    if len(pts) < 3 or h.min() <= 0 or h.max() / h.min() < min_span * (1 - 1e-12):
        raise InsufficientSpan(f"need >= 3 points spanning a factor {min_span}")
    if np.any(e <= 0):
        raise ValueError("errors must be positive to fit an order")
    slope, _ = np.polyfit(np.log(h), np.log(e), 1)
    return float(slope)


def worst_case_order(points: list[DispersionPoint]) -> tuple[float, np.ndarray, np.ndarray]:
    """Slope of max-over-theta eps(k); returns (slope, ks, worst eps)."""
    ks = np.array(sorted({p.k for p in points}))
    worst = np.array([max(p.eps for p in points if p.k == k) for k in ks])
    return measured_order(list(zip(ks, worst))), ks, worst


def anisotropy(params: SchemeParams, k: float, thetas, cell: str = "auto", dps: int | None = 40) -> float:
    """Largest difference of mu_num between two directions at fixed k."""
    pts = dispersion_sweep(params, [k], thetas, cell, dps)
    mus = np.array([p.mu_num for p in pts])
    return float(np.max(np.abs(mus[:, None] - mus[None, :])))


THETA_GRID = tuple(np.deg2rad(np.arange(0, 91, 15)))
