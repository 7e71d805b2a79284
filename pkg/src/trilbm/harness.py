"""Experiment scenarios on the equilateral triangle, exact-solution oracles,
error metrics and refinement studies.

Geometry conventions: triangles are equilateral with a vertical left edge and
their *wall* triangle (where anti-bounce-back imposes the boundary value)
centred at the origin.  The harmonic problem uses unit circumradius (side
sqrt(3)); the mode problems use side ``4*pi/3`` so that the Dirichlet
spectrum is ``m**2 + m*n + n**2`` and the fundamental mode has eigenvalue 3.
"""

from __future__ import annotations

import dataclasses
import functools
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.optimize as sopt
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import io
from .analysis import InsufficientSpan, diffusivity, param_set as named_param_set
from .mesh import SQRT3, Lattice, build_d2t4_equilateral, build_d2t4_periodic, build_d2t7_periodic, build_d2t7_triangle, perturb
from .scheme import TIME_FACTOR, BoundarySpec, FieldState, ParameterError, SchemeParams, Stepper
from .spectral import SpectrumReport, dirichlet_modes, rho_modes, arnoldi

log = logging.getLogger(__name__)

UNIT_CIRCUMRADIUS_SIDE = SQRT3
NORMALIZED_MODE_SIDE = 4.0 * math.pi / 3.0  # 16 pi^2 / (9 H^2) == 1


class ConfigError(ValueError):
    """Malformed experiment configuration."""


class SteadyStateTimeout(RuntimeError):
    def __init__(self, steps, residual):
        super().__init__(f"steady state not reached after {steps} steps (best residual {residual:.3e})")
        self.steps = steps
        self.residual = residual


# ---------------------------------------------------------------------------
# Exact solutions


def exact_harmonic(point) -> np.ndarray:
    """The harmonic polynomial x**2 - y**2 at ``point`` (shape (..., 2))."""
    p = np.asarray(point, dtype=float)
    return p[..., 0] ** 2 - p[..., 1] ** 2


def triangle_corners(side: float, center=(0.0, 0.0)) -> np.ndarray:
    """Equilateral triangle with a vertical left edge, centroid at ``center``.

    Order: bottom-left, top-left, right (the lattice builders' order).
    """
    R = side / SQRT3
    c = np.asarray(center, dtype=float)
    return c + np.array([[-R / 2, -side / 2], [-R / 2, side / 2], [R, 0.0]])


def barycentric(points, corners) -> np.ndarray:
    """Barycentric coordinates (..., 3) of points with respect to ``corners``."""
    p = np.asarray(points, dtype=float)
    a, b, c = np.asarray(corners, dtype=float)
    T = np.column_stack([b - a, c - a])
    l12 = np.linalg.solve(T, (p - a).reshape(-1, 2).T).T.reshape(p.shape)
    return np.concatenate([1.0 - l12.sum(axis=-1, keepdims=True), l12], axis=-1)


# Alcove of the A2 affine Weyl group in the plane x1 + x2 + x3 = 0: vertices
# 0, (2/3, -1/3, -1/3), (1/3, 1/3, -2/3).  Antisymmetrized plane waves over
# the six permutations vanish on its three walls.
_ALCOVE = np.array([[0.0, 0.0, 0.0], [2 / 3, -1 / 3, -1 / 3], [1 / 3, 1 / 3, -2 / 3]])
_PERMS = [(p, round(np.linalg.det(np.eye(3)[list(p)]))) for p in itertools.permutations(range(3))]


def _weyl_mode(bary: np.ndarray, m: int, n: int) -> np.ndarray:
    x = bary @ _ALCOVE
    lam = np.array([m + n, n, 0.0])
    out = np.zeros(x.shape[:-1])
    for p, sgn in _PERMS:
        out += sgn * np.sin(2.0 * np.pi * (x[..., list(p)] @ lam))
    return out


@functools.lru_cache(maxsize=64)
def _mode_peak(m: int, n: int) -> float:
    """Signed extremum of the unnormalized mode (largest magnitude)."""
    N = 240
    i, j = np.meshgrid(np.arange(N + 1), np.arange(N + 1), indexing="ij")
    keep = i + j <= N
    b = np.stack([N - i[keep] - j[keep], i[keep], j[keep]], axis=-1) / N
    vals = _weyl_mode(b, m, n)
    k = int(np.argmax(np.abs(vals)))
    sign = np.sign(vals[k])

    def neg(y):
        b1, b2 = y
        return -sign * _weyl_mode(np.array([1.0 - b1 - b2, b1, b2]), m, n)

    res = sopt.minimize(neg, b[k, 1:], method="Nelder-Mead", options={"xatol": 1e-13, "fatol": 1e-15, "maxiter": 4000})
    return float(-res.fun * sign) if abs(res.fun) >= abs(vals[k]) else float(vals[k])


def triangle_mode_eigenvalue(m: int, n: int, side: float) -> float:
    return 16.0 * math.pi**2 / (9.0 * side**2) * (m * m + m * n + n * n)


def exact_triangle_mode(point, m: int, n: int, side: float, corners=None, tol: float = 1e-9) -> np.ndarray:
    """Symmetric (m, n) Dirichlet eigenfunction of the equilateral triangle, max-normalized.

    The mode is symmetric under the reflection that swaps the second and
    third corners; for ``m == n`` it is invariant under all six symmetries.
    ``corners`` defaults to :func:`triangle_corners` of side ``side``.
    Eigenvalue: :func:`triangle_mode_eigenvalue`.
    """
    if m < 1 or n < 1:
        raise ValueError("mode indices must be >= 1")
    corners = triangle_corners(side) if corners is None else np.asarray(corners, dtype=float)
    b = barycentric(point, corners)
    if np.any(b < -tol):
        raise ValueError("point outside the triangle")
    b = np.clip(b, 0.0, 1.0)
    return _weyl_mode(b, int(m), int(n)) / _mode_peak(int(m), int(n))


# ---------------------------------------------------------------------------
# Configuration and reports


@dataclass(frozen=True)
class StopCriterion:
    """``kind`` is ``"time"`` (final time ``value``), ``"steps"`` or ``"steady"``.

    For ``"steady"`` the run stops once ``max|rho(t+dt) - rho(t)| <= steady_tol * max|rho|``.
    """

    kind: str = "steady"
    value: float | None = None
    steady_tol: float = 1e-12
    max_steps: int = 2_000_000
    check_every: int = 10

    def __post_init__(self):
        if self.kind not in ("time", "steps", "steady"):
            raise ConfigError(f"unknown stop criterion {self.kind!r}")
        if self.kind in ("time", "steps") and (self.value is None or self.value <= 0):
            raise ConfigError(f"stop criterion {self.kind!r} needs a positive value")
        if self.kind == "steps" and int(self.value) != self.value:
            raise ConfigError("step count must be an integer")
        if self.steady_tol <= 0 or self.max_steps < 1 or self.check_every < 1:
            raise ConfigError("steady_tol, max_steps and check_every must be positive")


@dataclass(frozen=True)
class OutputSpec:
    directory: str | None = None
    cadence: int = 0
    formats: tuple[str, ...] = ("json", "csv", "vtk")

    def __post_init__(self):
        bad = set(self.formats) - {"json", "csv", "vtk"}
        if bad:
            raise ConfigError(f"unknown output formats {sorted(bad)}")


EXPERIMENTS = ("harmonic", "decay", "modes")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one run.

    ``param_set`` is a catalog name or a mapping with ``a3`` and ``s``.
    ``side`` defaults to sqrt(3) for the harmonic problem and 4*pi/3 for the
    mode problems.  ``domain="periodic"`` uses an ``nx`` by ``ny`` lattice.
    """

    experiment: str = "harmonic"
    scheme: str = "d2t7"
    param_set: str | dict = "d2t7-order2"
    domain: str = "triangle"
    n_edge: int = 61
    side: float | None = None
    nx: int | None = None
    ny: int | None = None
    zeta: float = 1.0
    boundary: str | None = None
    initial: str | None = None
    mode: tuple[int, int] = (1, 1)
    stop: StopCriterion = field(default_factory=StopCriterion)
    outputs: OutputSpec = field(default_factory=OutputSpec)
    seed: int = 0
    nev: int = 12
    solver: str = "march"
    perturbation: float = 0.0
    convention: str = "log"
    tol: float = 1e-10

    def __post_init__(self):
        object.__setattr__(self, "scheme", self.scheme.lower())
        if isinstance(self.stop, dict):
            object.__setattr__(self, "stop", StopCriterion(**self.stop))
        if isinstance(self.outputs, dict):
            object.__setattr__(self, "outputs", OutputSpec(**{k: tuple(v) if k == "formats" else v for k, v in self.outputs.items()}))
        object.__setattr__(self, "mode", tuple(int(v) for v in self.mode))
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.scheme not in TIME_FACTOR:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.domain not in ("triangle", "periodic"):
            raise ConfigError(f"unknown domain {self.domain!r}")
        if self.domain == "triangle" and (int(self.n_edge) != self.n_edge or self.n_edge < 2):
            raise ConfigError("n_edge must be an integer >= 2")
        if self.domain == "periodic" and (not self.nx or not self.ny):
            raise ConfigError("periodic domain needs nx and ny")
        if self.solver not in ("march", "direct"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.zeta <= 0 or (self.side is not None and self.side <= 0):
            raise ConfigError("zeta and side must be positive")
        if self.convention not in ("log", "linear"):
            raise ConfigError(f"unknown convention {self.convention!r}")
        if len(self.mode) != 2 or min(self.mode) < 1:
            raise ConfigError("mode must be two indices >= 1")
        if isinstance(self.param_set, str):
            try:
                p = named_param_set(self.param_set)
            except KeyError as exc:
                raise ConfigError(str(exc)) from None
            if p.scheme != self.scheme:
                raise ConfigError(f"parameter set {self.param_set} is for {p.scheme}, not {self.scheme}")
        elif not {"a3", "s"} <= set(self.param_set):
            raise ConfigError("explicit parameter set needs 'a3' and 's'")

    # -- resolution ------------------------------------------------------------

    @property
    def resolved_side(self) -> float:
        if self.side is not None:
            return float(self.side)
        return UNIT_CIRCUMRADIUS_SIDE if self.experiment == "harmonic" else NORMALIZED_MODE_SIDE

    @property
    def dx(self) -> float:
        if self.domain == "periodic":
            return 1.0 if self.side is None else float(self.side)
        return triangle_dx(self.scheme, self.n_edge, self.resolved_side)

    def params(self, zeta: float | None = None) -> SchemeParams:
        zeta = self.zeta if zeta is None else zeta
        try:
            if isinstance(self.param_set, str):
                return named_param_set(self.param_set, zeta=zeta, dx=self.dx)
            ps = dict(self.param_set)
            return SchemeParams(
                self.scheme, float(ps["a3"]), tuple(ps["s"]), zeta=zeta, dx=self.dx, u=ps.get("u", 0.0), v=ps.get("v", 0.0), name=ps.get("name", "custom")
            )
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None

    def lattice(self) -> Lattice:
        if self.domain == "periodic":
            build = build_d2t7_periodic if self.scheme == "d2t7" else build_d2t4_periodic
            return build(int(self.nx), int(self.ny), self.dx)
        lat = triangle_lattice(self.scheme, int(self.n_edge), self.resolved_side)
        if self.perturbation:
            lat = perturb(lat, self.perturbation, self.seed)
        return lat

    def with_(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return io.to_jsonable(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        data = dict(data)
        if "mode" in data:
            data["mode"] = tuple(data["mode"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass
class ErrorReport:
    """Errors of one run (or of a refinement study when ``convergence_table`` is filled)."""

    linf: float
    l2: float
    error_field: np.ndarray | None = None
    convergence_table: list[tuple[float, float]] = field(default_factory=list)
    measured_order: float | None = None
    fit_residual: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.linf < 0 or self.l2 < 0:
            raise ValueError("errors must be non-negative")

    def summary(self) -> dict:
        d = {k: v for k, v in dataclasses.asdict(self).items() if k != "error_field"}
        return io.to_jsonable(d)


def triangle_dx(scheme: str, n_edge: int, side: float) -> float:
    """Node spacing that makes the wall triangle of an ``n_edge`` mesh have side ``side``."""
    if scheme == "d2t7":
        return side / (n_edge + 0.5)
    return side / (n_edge * SQRT3)


def triangle_lattice(scheme: str, n_edge: int, side: float, center=(0.0, 0.0)) -> Lattice:
    """Triangle lattice whose wall triangle has side ``side`` and centroid ``center``."""
    dx = triangle_dx(scheme, n_edge, side)
    build = build_d2t7_triangle if scheme == "d2t7" else build_d2t4_equilateral
    trial = build(n_edge, dx)
    shift = np.asarray(center, dtype=float) - trial.wall_triangle.mean(axis=0)
    return build(n_edge, dx, origin=tuple(shift))


def field_errors(numeric, exact, lattice: Lattice) -> tuple[float, float, np.ndarray]:
    """(L-inf, discrete L2, per-node error); L2 weights each node by the mean cell area."""
    err = np.asarray(numeric, dtype=float) - np.asarray(exact, dtype=float)
    if lattice.wall_triangle is not None:
        a, b, c = lattice.wall_triangle
        area = 0.5 * abs((b - a)[0] * (c - a)[1] - (b - a)[1] * (c - a)[0])
    else:
        area = abs(np.linalg.det(lattice.wraps)) if lattice.wraps is not None else float(lattice.n_nodes)
    weight = area / lattice.n_nodes
    return float(np.max(np.abs(err))), float(math.sqrt(weight * np.sum(err**2))), err


# ---------------------------------------------------------------------------
# Scenarios


def _write_outputs(config: ExperimentConfig, name: str, summary: dict, lattice: Lattice | None = None, fields: dict | None = None, tables: dict | None = None):
    out = config.outputs
    if out.directory is None:
        return
    base = Path(out.directory)
    if "json" in out.formats:
        io.write_json(base / f"{name}.json", {"config": config.to_dict(), **summary})
    if "csv" in out.formats:
        for tname, (header, rows) in (tables or {}).items():
            io.write_csv(base / f"{tname}.csv", header, rows)
    if "vtk" in out.formats and lattice is not None and fields:
        io.write_vtk(base / f"{name}.vtk", lattice, fields)


def _march_to_steady(st: Stepper, state: FieldState, stop: StopCriterion, callback=None) -> tuple[FieldState, float]:
    best = math.inf
    while state.step_count < stop.max_steps:
        check = (state.step_count + 1) % stop.check_every == 0
        if check:
            rho = state.rho
        nxt = st.step(state)
        if check:
            new_rho = nxt.rho
            scale = max(float(np.max(np.abs(new_rho))), np.finfo(float).tiny)
            res = float(np.max(np.abs(new_rho - rho))) / scale
            best = min(best, res)
            if res <= stop.steady_tol:
                return nxt, res
        if callback is not None:
            callback(nxt)
        state = nxt
    raise SteadyStateTimeout(state.step_count, best)


def steady_state_direct(st: Stepper, t: float = 0.0) -> FieldState:
    """Fixed point of a time-independent problem by one sparse solve of (I - A) f = b."""
    b = np.zeros(st.size)
    b[st.cut_slots] = st.wall_term(t)
    A = st.sparse_matrix()
    f = spla.spsolve((sp.identity(st.size, format="csc") - A.tocsc()), b)
    return FieldState(f.reshape(st.lattice.n_nodes, st.lattice.q), t, 0)


def run_harmonic(config: ExperimentConfig) -> ErrorReport:
    """Steady anti-bounce-back solution for wall data x**2 - y**2, compared with x**2 - y**2."""
    if config.domain != "triangle":
        raise ConfigError("the harmonic problem is posed on the triangle")
    t0 = time.perf_counter()
    lat = config.lattice()
    params = config.params()
    bc = BoundarySpec("dirichlet", lambda pts, t: exact_harmonic(pts))
    st = Stepper(lat, params, bc)
    if config.solver == "direct":
        state, residual = steady_state_direct(st), 0.0
        nxt = st.step(state)
        residual = float(np.max(np.abs(nxt.rho - state.rho)) / max(np.max(np.abs(nxt.rho)), 1e-300))
    else:
        stop = config.stop if config.stop.kind == "steady" else StopCriterion("steady")
        state = FieldState(np.zeros((lat.n_nodes, lat.q)))
        state, residual = _march_to_steady(st, state, stop)
    exact = exact_harmonic(lat.positions)
    linf, l2, err = field_errors(state.rho, exact, lat)
    st.close()
    report = ErrorReport(
        linf,
        l2,
        err,
        extra={
            "steps": state.step_count,
            "steady_residual": residual,
            "dx": lat.dx,
            "n_nodes": lat.n_nodes,
            "params": params.as_dict(),
            "seconds": time.perf_counter() - t0,
        },
    )
    _write_outputs(
        config,
        f"harmonic_n{config.n_edge}",
        report.summary(),
        lat,
        {"rho": state.rho, "exact": exact, "error": err},
        {f"harmonic_n{config.n_edge}_nodes": (["x", "y", "rho", "exact", "error"], np.column_stack([lat.positions, state.rho, exact, err]))},
    )
    return report


def admissible_time_step(T: float, params: SchemeParams) -> tuple[int, SchemeParams]:
    """Step count N and adjusted zeta so that N * dt == T (to rounding)."""
    factor = TIME_FACTOR[params.scheme]
    N = max(1, int(round(T * params.zeta / (factor * params.dx**2))))
    zeta = N * factor * params.dx**2 / T
    adjusted = params.with_(zeta=zeta)
    if abs(T / adjusted.dt - N) > 1e-12 * N:
        raise ConfigError(f"cannot make T = {T} an integer multiple of dt")
    if zeta != params.zeta:
        log.info("zeta adjusted from %.17g to %.17g so that %d steps reach T = %g", params.zeta, zeta, N, T)
    return N, adjusted


def consistent_initial_state(st: Stepper, rho, tol: float = 1e-14, max_iter: int = 1000) -> tuple[FieldState, int]:
    """Populations with density ``rho`` and the non-equilibrium part the dynamics would carry.

    Starting from equilibrium, repeat one step followed by adding the
    equilibrium of the density defect, until the populations stop changing.
    The non-equilibrium moments then match the scheme's own slow dynamics,
    which removes the initial layer that pure equilibrium data excites.
    """
    rho = np.asarray(rho, dtype=float)
    f = st.equilibrium_state(rho).f
    for it in range(1, max_iter + 1):
        g = st.step(FieldState(f)).f
        g = g + st.equilibrium_state(rho - g.sum(axis=1)).f
        change = float(np.max(np.abs(g - f)))
        f = g
        if change <= tol * max(float(np.max(np.abs(f))), 1e-300):
            break
    return FieldState(f), it


@dataclass
class DecayResult:
    report: ErrorReport
    times: np.ndarray
    center_values: np.ndarray
    fitted_rate: float
    expected_rate: float


def run_mode_decay(config: ExperimentConfig, fit_from: float = 0.25) -> DecayResult:
    """Relaxation of a Dirichlet mode from equilibrium initial data.

    Records the density at the node nearest the centroid, fits its decay rate
    over ``t >= fit_from * T`` and measures the L-inf error at the final time
    against the exactly decayed mode ``exp(-mu * Lambda * T) * mode``.
    """
    if config.domain != "triangle":
        raise ConfigError("mode decay is posed on the triangle")
    stop = config.stop if config.stop.kind in ("time", "steps") else StopCriterion("time", 4.0 / 3.0)
    t0 = time.perf_counter()
    lat = config.lattice()
    params = config.params()
    side = config.resolved_side
    m, n = config.mode
    if stop.kind == "time":
        steps, params = admissible_time_step(float(stop.value), params)
    else:
        steps = int(stop.value)
    T = steps * params.dt
    mu = diffusivity(params)
    Lam = triangle_mode_eigenvalue(m, n, side)
    center = lat.wall_triangle.mean(axis=0)
    corners = lat.wall_triangle
    mode = exact_triangle_mode(lat.positions, m, n, side, corners=corners)
    ic = int(np.argmin(np.linalg.norm(lat.positions - center, axis=1)))

    st = Stepper(lat, params, BoundarySpec("dirichlet", 0.0))
    initial = config.initial or "relaxed"
    if initial == "relaxed":
        state, init_iters = consistent_initial_state(st, mode)
    elif initial == "equilibrium":
        state, init_iters = st.equilibrium_state(mode), 0
    else:
        raise ConfigError(f"unknown initial state {initial!r}; use 'relaxed' or 'equilibrium'")
    times, values = [0.0], [state.rho[ic]]
    for _ in range(steps):
        state = st.step(state)
        times.append(state.step_count * params.dt)
        values.append(state.rho[ic])
    st.close()
    times = np.array(times)
    values = np.array(values)
    sel = (times >= fit_from * T) & (values > 0)
    if np.count_nonzero(sel) >= 2:
        rate = -np.polyfit(times[sel], np.log(values[sel]), 1)[0]
    else:
        rate = float("nan")
    exact = math.exp(-mu * Lam * T) * mode
    linf, l2, err = field_errors(state.rho, exact, lat)
    report = ErrorReport(
        linf,
        l2,
        err,
        extra={
            "steps": steps,
            "T": T,
            "dx": lat.dx,
            "mu": mu,
            "Lambda": Lam,
            "fitted_rate": rate,
            "expected_rate": mu * Lam,
            "center_node": ic,
            "initial": initial,
            "init_iterations": init_iters,
            "params": params.as_dict(),
            "seconds": time.perf_counter() - t0,
        },
    )
    name = f"decay_n{config.n_edge}"
    _write_outputs(
        config,
        name,
        report.summary(),
        lat,
        {"rho": state.rho, "exact": exact, "error": err},
        {f"{name}_center": (["t", "rho_center", "exact_center"], np.column_stack([times, values, values[0] * np.exp(-mu * Lam * times)]))},
    )
    return DecayResult(report, times, values, float(rate), mu * Lam)


def align(numeric: np.ndarray, exact: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares scalar c minimizing |c*numeric - exact|; returns (c*numeric, c)."""
    numeric = np.asarray(numeric, dtype=float)
    denom = float(numeric @ numeric)
    if denom == 0.0:
        return numeric, 0.0
    c = float(numeric @ exact) / denom
    return c * numeric, c


@dataclass
class ModeMatch:
    label: tuple[int, int]
    index: int
    Lambda_num: complex
    Lambda_exact: float
    overlap: float
    error: ErrorReport


@dataclass
class ModesResult:
    spectrum: SpectrumReport
    matches: dict


SYMMETRIC_FAMILY = {3: (2, 2), 5: (4, 4), 7: (6, 6)}


def run_dirichlet_modes(config: ExperimentConfig, targets=None, symmetric: bool = True) -> ModesResult:
    """Leading Dirichlet modes, matched to exact modes by overlap and aligned by least squares.

    ``targets`` lists (m, n) index pairs (default: the symmetric modes
    (2, 2), (4, 4), (6, 6), i.e. Lambda = 12, 48, 108).  With ``symmetric``
    the eigen-iteration is restricted to fully symmetric states, which holds
    those modes and removes the degenerate pairs.  On a periodic domain the
    leading mode is compared with a constant.
    """
    lat = config.lattice()
    params = config.params()
    t0 = time.perf_counter()
    if lat.periodic:
        st = Stepper(lat, params)
        rep = arnoldi(st.apply, st.size, nev=min(config.nev, 4), tol=config.tol, seed=config.seed)
        modes = rho_modes(rep.vectors, lat)
        k = int(np.argmin(np.abs(rep.eigenvalues - 1.0)))
        exact = np.ones(lat.n_nodes)
        aligned, _ = align(modes[:, k], exact)
        linf, l2, err = field_errors(aligned, exact, lat)
        spectrum = SpectrumReport(rep.eigenvalues, rep.vectors, rep.residuals, modes=modes, applies=rep.applies, restarts=rep.restarts)
        match = ModeMatch((0, 0), k, complex(0.0), 0.0, 1.0, ErrorReport(linf, l2, err))
        return ModesResult(spectrum, {(0, 0): match})

    targets = [tuple(t) for t in (targets or [(2, 2), (4, 4), (6, 6)])]
    if symmetric and any(a != b for a, b in targets):
        symmetric = False
    nev = config.nev
    rep = dirichlet_modes(lat, params, nev=nev, tol=config.tol, seed=config.seed, symmetric=symmetric, convention=config.convention)
    side = config.resolved_side
    corners = lat.wall_triangle
    matches = {}
    for m, n in targets:
        exact = exact_triangle_mode(lat.positions, m, n, side, corners=corners)
        overlaps = np.abs(rep.modes.T @ exact) / (np.linalg.norm(rep.modes, axis=0) * np.linalg.norm(exact))
        k = int(np.argmax(overlaps))
        aligned, _ = align(rep.modes[:, k], exact)
        linf, l2, err = field_errors(aligned, exact, lat)
        Lam_exact = triangle_mode_eigenvalue(m, n, side)
        er = ErrorReport(linf, l2, err, extra={"Lambda_num": rep.Lambda_num[k], "Lambda_exact": Lam_exact, "overlap": float(overlaps[k])})
        matches[(m, n)] = ModeMatch((m, n), k, complex(rep.Lambda_num[k]), Lam_exact, float(overlaps[k]), er)
    if config.outputs.directory is not None:
        base = Path(config.outputs.directory)
        if "csv" in config.outputs.formats:
            order = np.argsort(-np.abs(rep.eigenvalues))
            io.write_csv(
                base / "eigenvalues.csv",
                ["index", "lambda_re", "lambda_im", "Lambda_num_re", "Lambda_num_im", "residual"],
                [(i, rep.eigenvalues[i].real, rep.eigenvalues[i].imag, rep.Lambda_num[i].real, rep.Lambda_num[i].imag, rep.residuals[i]) for i in order],
            )
        if "vtk" in config.outputs.formats:
            for i in range(rep.modes.shape[1]):
                io.write_vtk(base / f"mode_{i}.vtk", lat, {"rho": rep.modes[:, i]})
        if "json" in config.outputs.formats:
            io.write_json(
                base / "modes.json",
                {
                    "config": config.to_dict(),
                    "seconds": time.perf_counter() - t0,
                    "matches": {f"{a}_{b}": {"index": mm.index, "Lambda_num": mm.Lambda_num, "Lambda_exact": mm.Lambda_exact, "overlap": mm.overlap, "linf": mm.error.linf, "l2": mm.error.l2} for (a, b), mm in matches.items()},
                },
            )
    return ModesResult(rep, matches)


# ---------------------------------------------------------------------------
# Refinement studies


def fit_order(hs, errors) -> tuple[float, float]:
    """Least-squares slope of log(error) against log(h) and the RMS residual of the fit."""
    h = np.asarray(hs, dtype=float)
    e = np.asarray(errors, dtype=float)
    if np.any(h <= 0) or np.any(e <= 0):
        raise ValueError("sizes and errors must be positive for a log-log fit")
    A = np.column_stack([np.log(h), np.ones_like(h)])
    coef, *_ = np.linalg.lstsq(A, np.log(e), rcond=None)
    resid = np.log(e) - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid**2)))


def _default_runner(config: ExperimentConfig) -> ErrorReport:
    if config.experiment == "harmonic":
        return run_harmonic(config)
    if config.experiment == "decay":
        return run_mode_decay(config).report
    raise ConfigError("convergence sweeps support the harmonic and decay experiments")


def convergence_sweep(
    base_config: ExperimentConfig,
    sizes,
    runner: Callable[[ExperimentConfig], ErrorReport] | None = None,
    metric: str = "linf",
    min_span: float = 4.0,
    workers: int = 1,
) -> ErrorReport:
    """Run ``base_config`` at each ``n_edge`` in ``sizes`` and fit the error order in h = dx.

    Runs are independent and may go to a thread pool; results are merged in
    size order.  ``runner`` replaces the scenario (e.g. for synthetic errors).
    """
    sizes = sorted(int(s) for s in sizes)
    if len(sizes) < 3:
        raise InsufficientSpan("need at least three sizes")
    runner = runner or _default_runner
    configs = [base_config.with_(n_edge=n) for n in sizes]
    hs = [c.dx for c in configs]
    if max(hs) / min(hs) < min_span:
        raise InsufficientSpan(f"sizes span a factor {max(hs) / min(hs):.3g} in h, need {min_span}")
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            reports = list(pool.map(runner, configs))
    else:
        reports = [runner(c) for c in configs]
    errs = [getattr(r, metric) for r in reports]
    table = sorted(zip(hs, errs))
    slope, resid = fit_order([h for h, _ in table], [e for _, e in table])
    rep = ErrorReport(
        linf=float(max(r.linf for r in reports)),
        l2=float(max(r.l2 for r in reports)),
        convergence_table=[(float(h), float(e)) for h, e in table],
        measured_order=slope,
        fit_residual=resid,
        extra={"sizes": sizes, "metric": metric, "runs": [r.extra for r in reports]},
    )
    if base_config.outputs.directory is not None and "csv" in base_config.outputs.formats:
        io.write_csv(Path(base_config.outputs.directory) / f"sweep_{base_config.experiment}.csv", ["n_edge", "h", metric], [(n, h, e) for n, (h, e) in zip(sizes, sorted(zip(hs, errs), reverse=True))])
    return rep
