"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one ``CRITERION n: PASS|FAIL`` line (collected again at the
end of the pytest run) followed by the individual checks.  Expensive runs are
cached so later criteria can compare against earlier ones.
"""

from __future__ import annotations

import functools
import math
import time

import numpy as np
import pytest

from trilbm.analysis import (
    THETA_GRID,
    anisotropy,
    builtin_param_sets,
    d2t4_first_order_coeff,
    dispersion_sweep,
    mu_d2t4,
    mu_d2t7,
    param_set,
    theta_d2t7,
    worst_case_order,
)
from trilbm.basis import prop1_residuals, transition_matrices
from trilbm.harness import (
    NORMALIZED_MODE_SIDE,
    ExperimentConfig,
    StopCriterion,
    convergence_sweep,
    run_dirichlet_modes,
    run_harmonic,
    run_mode_decay,
)
from trilbm.mesh import (
    build_d2t4_equilateral,
    build_d2t4_periodic,
    build_d2t7_periodic,
    build_d2t7_triangle,
    perturb,
    validate,
)
from trilbm.scheme import BoundarySpec, FieldState, Stepper
from trilbm.spectral import arnoldi, pipe_diffusivity

D2T7_SETS = ("d2t7-order2", "d2t7-order4", "d2t7-order6")
D2T4_SETS = ("d2t4-order1", "d2t4-order2", "d2t4-order3", "d2t4-order4")


class Checks:
    """Collects named checks and reports them as one verdict."""

    def __init__(self, number: int, title: str, log):
        self.number = number
        self.title = title
        self.log = log
        self.items: list[tuple[str, bool, str]] = []
        self.t0 = time.perf_counter()

    def add(self, label: str, ok: bool, detail: str = ""):
        self.items.append((label, bool(ok), detail))

    def info(self, label: str, detail: str):
        self.items.append((label, None, detail))

    def finish(self):
        failed = [lab for lab, ok, _ in self.items if ok is False]
        verdict = "PASS" if not failed else "FAIL"
        secs = time.perf_counter() - self.t0
        self.log(f"CRITERION {self.number}: {verdict} - {self.title} ({len(self.items) - len(failed)}/{len(self.items)} checks, {secs:.1f}s)")
        for lab, ok, det in self.items:
            tag = "info" if ok is None else ("ok" if ok else "FAIL")
            print(f"    [{tag}] {lab}: {det}")
        assert not failed, f"criterion {self.number} failed checks: {failed}"


# ---------------------------------------------------------------------------
# Cached runs shared between criteria


@functools.lru_cache(maxsize=None)
def one_point_order(name: str, cell: str):
    ks = np.geomspace(1e-3, 1e-1, 9)
    pts = dispersion_sweep(param_set(name), ks, THETA_GRID, cell=cell, dps=40)
    slope, _, worst = worst_case_order(pts)
    return slope, worst


PIPE_SIZES = ((96, 4), (192, 8), (384, 16))


@functools.lru_cache(maxsize=None)
def pipe_study(name: str):
    p = param_set(name)
    build = build_d2t7_periodic if p.scheme == "d2t7" else build_d2t4_periodic
    rows = []
    for nx, ny in PIPE_SIZES:
        res = pipe_diffusivity(build(nx, ny), p)
        rows.append((res.k, res.eps))
    ks = np.array([r[0] for r in rows])
    eps = np.array([r[1] for r in rows])
    slope = float(np.polyfit(np.log(ks), np.log(eps), 1)[0])
    return slope, ks, eps


HARMONIC_TARGET = {"d2t7-order2": 8.14e-4, "d2t7-order4": 2.36e-4, "d2t7-order6": 4.47e-5}
HARMONIC_SIZES = (16, 23, 32, 45, 61)


@functools.lru_cache(maxsize=None)
def harmonic_study(name: str):
    base = ExperimentConfig(experiment="harmonic", scheme="d2t7", param_set=name, n_edge=61)
    at61 = run_harmonic(base)
    sweep = convergence_sweep(base, HARMONIC_SIZES, min_span=3.5)
    return at61.linf, sweep.measured_order, sweep.convergence_table


MODE_TARGETS = ((2, 2), (4, 4), (6, 6))


@functools.lru_cache(maxsize=None)
def modes_study(name: str, n_edge: int = 61):
    scheme = param_set(name).scheme
    cfg = ExperimentConfig(experiment="modes", scheme=scheme, param_set=name, n_edge=n_edge, nev=12, tol=1e-10)
    res = run_dirichlet_modes(cfg, targets=list(MODE_TARGETS))
    lams = {t: res.matches[t].Lambda_num.real for t in MODE_TARGETS}
    idx = [res.matches[t].index for t in MODE_TARGETS]
    return lams, float(np.max(res.spectrum.residuals[idx])), float(np.max(res.spectrum.residuals))


DECAY_SIZES = {"d2t7": (20, 28, 40, 57, 80), "d2t4": (12, 17, 24, 34, 48)}


def _decay_config(name: str, n_edge: int) -> ExperimentConfig:
    scheme = param_set(name).scheme
    return ExperimentConfig(
        experiment="decay",
        scheme=scheme,
        param_set=name,
        n_edge=n_edge,
        mode=(1, 1),
        stop=StopCriterion("time", 4.0 / 3.0),
    )


@functools.lru_cache(maxsize=None)
def decay_study(name: str):
    scheme = param_set(name).scheme
    sweep = convergence_sweep(_decay_config(name, 10), DECAY_SIZES[scheme], min_span=3.5)
    return sweep.measured_order, sweep.convergence_table


@functools.lru_cache(maxsize=None)
def decay_center_rate(name: str):
    res = run_mode_decay(_decay_config(name, 10))
    return res.fitted_rate, res.expected_rate


# ---------------------------------------------------------------------------
# Criteria


def test_criterion_1_coefficient_identities(acceptance_log):
    c = Checks(1, "coefficient identities", acceptance_log)
    v = mu_d2t7(1.0, 0.25, 0.8)
    c.add("mu_d2t7(1, 1/4, 0.8) = 0.09375", abs(v - 0.09375) <= 1e-15, f"{v!r}")
    target = 1.0 / (4.0 * math.sqrt(12.0))
    for name in D2T4_SETS:
        p = param_set(name)
        v = mu_d2t4(p.zeta, p.a3, p.s[0])
        c.add(f"mu_d2t4 {name}", abs(v - target) <= 1e-13, f"{v:.16g} vs {target:.16g}")
    p4 = param_set("d2t7-order4")
    th4 = theta_d2t7(p4.zeta, p4.a3, p4.s[0], p4.s[2], p4.s[3])
    c.add("theta_d2t7 quartic set = 0", abs(th4) <= 1e-12, f"{th4:.3e}")
    p2 = param_set("d2t7-order2")
    th2 = theta_d2t7(p2.zeta, p2.a3, p2.s[0], p2.s[2], p2.s[3])
    c.add("theta_d2t7 second-order set ~ 1.7578e-2", abs(th2 - 1.7578e-2) <= 1e-6, f"{th2:.6e}")
    s1 = 1.267949192431122
    v = d2t4_first_order_coeff(1.0, 0.25, s1)
    c.add("d2t4_first_order_coeff(s1 = 1.2679...) = 0", abs(v) <= 1e-14, f"{v:.3e}")
    s3 = param_set("d2t4-order4").s[2]
    c.add("d2t4 quartic s3 = sqrt(3) - 1", abs(s3 - (math.sqrt(3.0) - 1.0)) <= 1e-15, f"{s3!r}")
    c.finish()


def test_criterion_2_one_point_dispersion_orders(acceptance_log):
    c = Checks(2, "one-point dispersion orders and anisotropy", acceptance_log)
    expected = {"d2t7-order2": 2, "d2t7-order4": 4, "d2t7-order6": 6, "d2t4-order1": 1, "d2t4-order2": 2, "d2t4-order3": 3, "d2t4-order4": 4}
    for name, order in expected.items():
        slope, worst = one_point_order(name, "single")
        c.add(f"{name} slope {order} +- 0.15", abs(slope - order) <= 0.15, f"slope {slope:.3f}, eps(k=0.1) {worst[-1]:.3e}")
    for name in D2T4_SETS:
        slope, _ = one_point_order(name, "pair")
        c.info(f"{name} two-node cell slope", f"{slope:.3f}")
    aniso = {name: anisotropy(param_set(name), 0.1, THETA_GRID, cell="single") for name in D2T4_SETS}
    for name in ("d2t4-order1", "d2t4-order3"):
        c.add(f"{name} anisotropy > 1e-6 at k = 0.1", aniso[name] > 1e-6, f"{aniso[name]:.3e}")
    for name in ("d2t4-order2", "d2t4-order4"):
        c.add(f"{name} anisotropy < 1e-7 at k = 0.1", aniso[name] < 1e-7, f"{aniso[name]:.3e}")
    c.finish()


def test_criterion_3_periodic_pipe_arnoldi(acceptance_log):
    c = Checks(3, "periodic pipe Arnoldi orders", acceptance_log)
    for name, lo, hi in (("d2t7-order2", 1.7, 2.3), ("d2t7-order4", 3.7, 4.3), ("d2t7-order6", 4.0, math.inf), ("d2t4-order4", 1.7, 2.3)):
        slope, ks, eps = pipe_study(name)
        rng = f"[{lo}, {hi}]" if math.isfinite(hi) else f">= {lo}"
        c.add(f"{name} slope {rng}", lo <= slope <= hi, f"slope {slope:.3f}, eps {', '.join(f'{e:.3e}' for e in eps)}")
    c.finish()


def test_criterion_4_harmonic_triangle(acceptance_log):
    c = Checks(4, "harmonic steady state on the triangle", acceptance_log)
    for name in D2T7_SETS:
        linf, slope, _ = harmonic_study(name)
        ratio = linf / HARMONIC_TARGET[name]
        c.add(f"{name} n=61 L-inf within factor 2 of {HARMONIC_TARGET[name]:.2e}", 0.5 <= ratio <= 2.0, f"{linf:.4e} (ratio {ratio:.3f})")
        c.add(f"{name} refinement slope 2 +- 0.3", abs(slope - 2.0) <= 0.3, f"{slope:.3f}")
    c.finish()


def test_criterion_5_dirichlet_eigenvalues(acceptance_log):
    c = Checks(5, "Dirichlet eigenvalues on the triangle", acceptance_log)
    for name in ("d2t7-order2", "d2t7-order4"):
        lams, res, _ = modes_study(name)
        l3, l5, l7 = (lams[t] for t in MODE_TARGETS)
        c.add(f"{name} mode 3 in [11.995, 12.0]", 11.995 <= l3 <= 12.0, f"{l3:.5f}")
        c.add(f"{name} mode 5 within 0.1% of 48", abs(l5 - 48) <= 0.001 * 48, f"{l5:.5f} ({100 * (l5 / 48 - 1):+.3f}%)")
        c.add(f"{name} mode 7 within 0.15% of 108", abs(l7 - 108) <= 0.0015 * 108, f"{l7:.5f} ({100 * (l7 / 108 - 1):+.3f}%)")
        c.add(f"{name} Arnoldi residuals <= 1e-10", res <= 1e-10, f"{res:.2e}")
    lams, res, _ = modes_study("d2t4-order4")
    for t, exact, tol in zip(MODE_TARGETS, (12, 48, 108), (0.005, 0.010, 0.025)):
        lam = lams[t]
        c.add(f"d2t4-order4 mode {t} within {100 * tol:.1f}% of {exact}", abs(lam - exact) <= tol * exact, f"{lam:.5f} ({100 * (lam / exact - 1):+.3f}%)")
    c.add("d2t4-order4 Arnoldi residuals <= 1e-10", res <= 1e-10, f"{res:.2e}")
    lams2, _, _ = modes_study("d2t4-order2")
    c.info("d2t4-order2 modes", ", ".join(f"{lams2[t]:.5f}" for t in MODE_TARGETS))
    c.finish()


def test_criterion_6_mode_decay(acceptance_log):
    c = Checks(6, "mode decay on the triangle", acceptance_log)
    for name in D2T7_SETS:
        rate, expected = decay_center_rate(name)
        rel = abs(rate / expected - 1.0)
        c.add(f"{name} centre decay rate within 2% of 3 mu (55 nodes)", rel <= 0.02, f"{rate:.5f} vs {expected:.5f} ({100 * rel:.2f}%)")
    for name, lo in (("d2t7-order2", 1.5), ("d2t7-order4", 2.5)):
        slope, _ = decay_study(name)
        c.add(f"{name} refinement slope >= {lo}", slope >= lo, f"{slope:.3f}")
    s2, t2 = decay_study("d2t4-order2")
    s4, t4 = decay_study("d2t4-order4")
    c.add("d2t4-order2 refinement slope 2 +- 0.3", abs(s2 - 2.0) <= 0.3, f"{s2:.3f}")
    c.add("d2t4-order4 refinement slope 2 +- 0.3", abs(s4 - 2.0) <= 0.3, f"{s4:.3f}")
    smaller = all(e4 < e2 for (_, e2), (_, e4) in zip(t2, t4))
    c.add("d2t4 quartic error smaller at every size", smaller, ", ".join(f"{e4:.2e}<{e2:.2e}" for (_, e2), (_, e4) in zip(t2, t4)))
    c.finish()


def test_criterion_7_structural_properties(acceptance_log):
    c = Checks(7, "structural properties", acceptance_log)
    lattices = {
        "d2t7 triangle": build_d2t7_triangle(12),
        "d2t7 periodic": build_d2t7_periodic(9, 7),
        "d2t4 triangle": build_d2t4_equilateral(8),
        "d2t4 periodic": build_d2t4_periodic(5, 4),
        "d2t4 perturbed": perturb(build_d2t4_equilateral(8), 0.2, 42),
    }
    for label, lat in lattices.items():
        v = validate(lat)
        c.add(f"{label} invariants (duality, degree, streaming)", not v, f"{len(v)} violations")
        mats = transition_matrices(lat)
        r = float(np.nanmax(prop1_residuals(lat, mats)))
        c.add(f"{label} streaming identity <= 1e-10", r <= 1e-10, f"{r:.2e}")
        e = float(np.max(np.abs(mats.M @ mats.Minv - np.eye(lat.q))))
        c.add(f"{label} M inv(M) = I", e <= 1e-12, f"{e:.2e}")

    rng = np.random.default_rng(7)
    for name in ("d2t7-order4", "d2t4-order4"):
        p = param_set(name)
        lat = lattices["d2t7 periodic" if p.scheme == "d2t7" else "d2t4 periodic"]
        st = Stepper(lat, p)
        s0 = FieldState(rng.random((lat.n_nodes, lat.q)))
        m0 = s0.f.sum()
        drift = abs(st.run(s0, 10_000).f.sum() - m0) / abs(m0)
        c.add(f"{name} mass drift over 1e4 periodic steps <= 1e-12", drift <= 1e-12, f"{drift:.2e}")
        eq = st.equilibrium_state(np.full(lat.n_nodes, 1.3))
        fp = float(np.max(np.abs(st.step(eq).f - eq.f)))
        c.add(f"{name} equilibrium fixed point <= 1e-13", fp <= 1e-13, f"{fp:.2e}")
        x, y = rng.standard_normal((2, st.size))
        lin = float(np.max(np.abs(st.apply(2.5 * x - 0.75 * y) - (2.5 * st.apply(x) - 0.75 * st.apply(y)))))
        c.add(f"{name} operator linearity <= 1e-12", lin <= 1e-12, f"{lin:.2e}")

    worst = 0.0
    for seed in range(20):
        A = np.random.default_rng(seed).standard_normal((50, 50))
        rep = arnoldi(lambda v: A @ v, 50, nev=6, tol=1e-12, seed=seed)
        dense = np.linalg.eigvals(A)
        worst = max(worst, max(float(np.min(np.abs(dense - lam))) for lam in rep.eigenvalues))
    c.add("Arnoldi vs dense eigensolver on 20 random 50x50 maps <= 1e-9", worst <= 1e-9, f"{worst:.2e}")

    lat = build_d2t7_triangle(15)
    bc = BoundarySpec("dirichlet", lambda pts, t: pts[:, 0] ** 2 - pts[:, 1] ** 2)
    f0 = np.random.default_rng(3).standard_normal((lat.n_nodes, lat.q))
    finals = []
    for workers in (1, 2, 4):
        st = Stepper(lat, param_set("d2t7-order2"), bc, workers=workers)
        finals.append(st.run(FieldState(f0.copy()), 50).f)
        st.close()
    same = all(np.array_equal(f, finals[0]) for f in finals[1:])
    c.add("bitwise determinism for 1, 2, 4 workers", same, "identical" if same else "differs")
    c.finish()


def test_criterion_8_sixth_order_set(acceptance_log):
    c = Checks(8, "sixth-order set: one-point slope and non-regression", acceptance_log)
    slope, _ = one_point_order("d2t7-order6", "single")
    c.add("one-point slope 6 +- 0.15", abs(slope - 6.0) <= 0.15, f"{slope:.3f}")
    s6, _, e6 = pipe_study("d2t7-order6")
    _, _, e4 = pipe_study("d2t7-order4")
    c.add("pipe slope >= 4 and error <= quartic set", s6 >= 4.0 and np.all(e6 <= e4), f"slope {s6:.3f}; eps {e6[-1]:.2e} vs {e4[-1]:.2e}")
    h6, hs6, _ = harmonic_study("d2t7-order6")
    h4, _, _ = harmonic_study("d2t7-order4")
    c.add("harmonic error <= quartic set, slope within 2 +- 0.3", h6 <= h4 and abs(hs6 - 2) <= 0.3, f"{h6:.3e} vs {h4:.3e}, slope {hs6:.3f}")
    l6, r6, _ = modes_study("d2t7-order6")
    l4, _, _ = modes_study("d2t7-order4")
    exact = dict(zip(MODE_TARGETS, (12.0, 48.0, 108.0)))
    better = all(abs(l6[t] - exact[t]) <= abs(l4[t] - exact[t]) for t in MODE_TARGETS)
    c.add("Dirichlet eigenvalues no farther from exact than quartic set", better and r6 <= 1e-10, ", ".join(f"{l6[t]:.5f}" for t in MODE_TARGETS))
    d6, t6 = decay_study("d2t7-order6")
    _, t4 = decay_study("d2t7-order4")
    c.add(
        "decay slope >= 2.5 and error <= quartic set at every size",
        d6 >= 2.5 and all(a <= b for (_, a), (_, b) in zip(t6, t4)),
        f"slope {d6:.3f}",
    )
    rate, expected = decay_center_rate("d2t7-order6")
    c.add("centre decay rate within 2%", abs(rate / expected - 1) <= 0.02, f"{100 * abs(rate / expected - 1):.3f}%")
    c.finish()


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
