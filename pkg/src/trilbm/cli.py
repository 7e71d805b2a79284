"""``tri-lbm`` command line interface.

Every subcommand prints a JSON summary on stdout.  Exit codes: 0 success,
2 configuration error, 3 numerical failure (divergence or non-convergence).
"""

from __future__ import annotations

import json
import logging
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import io
from .analysis import (
    FORMAL_ORDER,
    THETA_GRID,
    BranchTrackingError,
    InsufficientSpan,
    builtin_param_sets,
    diffusivity,
    dispersion_sweep,
    order_report,
    param_set,
    worst_case_order,
)
from .basis import SingularMomentMatrix, prop1_residuals, transition_matrices
from .harness import (
    ConfigError,
    ExperimentConfig,
    SteadyStateTimeout,
    StopCriterion,
    convergence_sweep,
    run_dirichlet_modes,
    run_harmonic,
    run_mode_decay,
)
from .mesh import LatticeError, build_lattice, perturb, validate
from .scheme import DivergenceError, ParameterError, Stepper
from .spectral import ConvergenceError, arnoldi, pipe_diffusivity, rho_modes

CONFIG_ERRORS = (ConfigError, ParameterError, LatticeError, KeyError, InsufficientSpan, json.JSONDecodeError, FileNotFoundError)
NUMERICAL_ERRORS = (DivergenceError, ConvergenceError, SteadyStateTimeout, BranchTrackingError, SingularMomentMatrix, FloatingPointError)


def _emit(obj):
    click.echo(json.dumps(io.to_jsonable(obj), indent=2, sort_keys=True))


def _params(name, zeta=1.0, dx=1.0):
    return param_set(name, zeta=zeta, dx=dx)


def _floats(text):
    return [float(t) for t in str(text).split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in str(text).split(",") if t.strip()]


@click.group()
@click.option("-v", "--verbose", count=True, help="Increase log verbosity.")
def cli(verbose):
    """Lattice Boltzmann schemes for the heat equation on triangular meshes."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")


# ---------------------------------------------------------------------------
# Meshes and matrices


def _mesh_options(f):
    f = click.option("--scheme", type=click.Choice(["d2t7", "d2t4"]), default="d2t7")(f)
    f = click.option("--domain", type=click.Choice(["triangle", "periodic"]), default="triangle")(f)
    f = click.option("--n", "n_edge", type=int, default=10, help="Nodes (d2t7) or triangles (d2t4) per edge.")(f)
    f = click.option("--nx", type=int, default=12)(f)
    f = click.option("--ny", type=int, default=6)(f)
    f = click.option("--dx", type=float, default=1.0)(f)
    f = click.option("--perturb", "amplitude", type=float, default=0.0, help="Vertex displacement (fraction of dx).")(f)
    f = click.option("--seed", type=int, default=0)(f)
    return f


def _lattice(scheme, domain, n_edge, nx, ny, dx, amplitude, seed):
    lat = build_lattice(scheme, domain, n=n_edge, nx=nx, ny=ny, dx=dx)
    if amplitude:
        lat = perturb(lat, amplitude, seed)
    return lat


@cli.command()
@_mesh_options
@click.option("--out", type=click.Path(), default=None, help="Directory for mesh.json and mesh.vtk.")
def mesh(scheme, domain, n_edge, nx, ny, dx, amplitude, seed, out):
    """Build a lattice, validate it and optionally write it out."""
    lat = _lattice(scheme, domain, n_edge, nx, ny, dx, amplitude, seed)
    violations = validate(lat)
    if out:
        io.write_mesh_json(Path(out) / "mesh.json", lat)
        io.write_vtk(Path(out) / "mesh.vtk", lat, {"node_class": lat.node_class.astype(float)})
    _emit(
        {
            "scheme": lat.scheme,
            "domain": lat.domain,
            "nodes": lat.n_nodes,
            "cut_links": int(len(lat.cut_links)),
            "bravais": lat.bravais,
            "violations": [v._asdict() for v in violations[:20]],
            "violation_count": len(violations),
        }
    )


@cli.command()
@_mesh_options
@click.option("--out", type=click.Path(), default=None, help="Write matrices.json here.")
def matrices(scheme, domain, n_edge, nx, ny, dx, amplitude, seed, out):
    """Moment and transition matrices and the consistency residual of the incoming moments."""
    lat = _lattice(scheme, domain, n_edge, nx, ny, dx, amplitude, seed)
    mats = transition_matrices(lat)
    res = prop1_residuals(lat, mats)
    summary = {
        "classes": int(mats.M.shape[0]),
        "max_consistency_residual": float(np.nanmax(res)) if np.any(np.isfinite(res)) else None,
        "max_inverse_residual": float(np.max(np.abs(mats.M @ mats.Minv - np.eye(mats.q)))),
    }
    if mats.M.shape[0] <= 4:
        summary.update({"M": mats.M, "Minv": mats.Minv, "Mt": mats.Mt, "P": mats.P})
    if out:
        io.write_json(Path(out) / "matrices.json", {"M": mats.M, "Mt": mats.Mt, "Minv": mats.Minv, "P": mats.P, "cls": mats.cls, **summary})
    _emit(summary)


# ---------------------------------------------------------------------------
# Dispersion and periodic spectra


@cli.command()
@click.option("--set", "set_name", default="d2t7-order4", help="Built-in parameter set.")
@click.option("--kmin", type=float, default=1e-3)
@click.option("--kmax", type=float, default=1e-1)
@click.option("--nk", type=int, default=9)
@click.option("--thetas", default=None, help="Comma-separated angles in degrees (default 0..90 by 15).")
@click.option("--cell", type=click.Choice(["auto", "single", "pair"]), default="auto")
@click.option("--dps", type=int, default=40, help="Digits for the eigenvalue refinement (0 for double).")
@click.option("--convention", type=click.Choice(["log", "linear"]), default="log")
@click.option("--out", type=click.Path(), default=None, help="CSV file for the sweep.")
def dispersion(set_name, kmin, kmax, nk, thetas, cell, dps, convention, out):
    """One-point plane-wave analysis: eps(k) along several directions and the worst-case order."""
    p = _params(set_name)
    ths = THETA_GRID if thetas is None else tuple(np.deg2rad(_floats(thetas)))
    ks = np.geomspace(kmin, kmax, nk)
    pts = dispersion_sweep(p, ks, ths, cell, dps or None, convention)
    slope, kk, worst = worst_case_order(pts)
    if out:
        io.write_csv(out, ["k", "theta_deg", "lambda_re", "lambda_im", "mu_num_re", "mu_num_im", "eps"], [(q.k, math.degrees(q.theta_k), q.lambda_phys.real, q.lambda_phys.imag, q.mu_num.real, q.mu_num.imag, q.eps) for q in pts])
    _emit({"set": p.name, "mu": diffusivity(p), "cell": cell, "worst_case_order": slope, "k": kk, "worst_eps": worst, "formal_order": FORMAL_ORDER.get(p.name)})


@cli.command("pipe-modes")
@click.option("--set", "set_name", default="d2t7-order2")
@click.option("--nx", type=int, default=96)
@click.option("--ny", type=int, default=4)
@click.option("--refinements", type=int, default=3, help="Number of pipes, doubling nx and ny each time.")
@click.option("--tol", type=float, default=1e-13)
@click.option("--out", type=click.Path(), default=None, help="CSV file for the table.")
def pipe_modes(set_name, nx, ny, refinements, tol, out):
    """Numerical diffusivity of the slowest periodic mode along refined pipes."""
    p = _params(set_name)
    rows = []
    for r in range(refinements):
        lat = build_lattice(p.scheme, "periodic", nx=nx * 2**r, ny=ny * 2**r, dx=1.0)
        res = pipe_diffusivity(lat, p, tol=tol)
        rows.append((nx * 2**r, ny * 2**r, res.k, res.mu_num.real, res.eps))
    slope = float(np.polyfit(np.log([r[2] for r in rows]), np.log([r[4] for r in rows]), 1)[0]) if len(rows) >= 2 else None
    if out:
        io.write_csv(out, ["nx", "ny", "k", "mu_num", "eps"], rows)
    _emit({"set": p.name, "mu": diffusivity(p), "rows": rows, "order": slope})


@cli.command("rect-modes")
@click.option("--set", "set_name", default="d2t4-order4")
@click.option("--nx", type=int, default=36)
@click.option("--ny", type=int, default=52)
@click.option("--nev", type=int, default=6)
@click.option("--tol", type=float, default=1e-12)
@click.option("--out", type=click.Path(), default=None, help="CSV file for the table.")
def rect_modes(set_name, nx, ny, nev, tol, out):
    """Leading eigenvalues of a periodic rectangle, each matched to its lattice wavevector."""
    p = _params(set_name)
    lat = build_lattice(p.scheme, "periodic", nx=nx, ny=ny, dx=1.0)
    st = Stepper(lat, p)
    rep = arnoldi(st.apply, st.size, nev=nev, tol=tol)
    modes = rho_modes(rep.vectors, lat)
    recip = 2.0 * np.pi * np.linalg.inv(lat.wraps).T  # rows: reciprocal basis vectors
    mu = diffusivity(p)
    rows = []
    for i, lam in enumerate(rep.eigenvalues):
        if abs(lam - 1.0) < 1e-10:
            rows.append((i, lam.real, lam.imag, 0.0, 0.0, float("nan"), float("nan")))
            continue
        # Dominant wavevector of the density field by projection on the low reciprocal vectors.
        best, kbest = -1.0, None
        for a in range(-3, 4):
            for b in range(-3, 4):
                if a == 0 and b == 0:
                    continue
                kv = a * recip[0] + b * recip[1]
                phase = lat.positions @ kv
                w = abs(np.exp(-1j * phase) @ modes[:, i])
                if w > best + 1e-9:
                    best, kbest = w, kv
        k2 = float(kbest @ kbest)
        mu_num = -np.log(complex(lam)) / (k2 * p.dt)
        rows.append((i, lam.real, lam.imag, kbest[0], kbest[1], mu_num.real, abs(mu - mu_num)))
    if out:
        io.write_csv(out, ["index", "lambda_re", "lambda_im", "kx", "ky", "mu_num", "eps"], rows)
    _emit({"set": p.name, "mu": mu, "rows": rows, "residuals": rep.residuals})


# ---------------------------------------------------------------------------
# Triangle experiments


def _experiment_options(f):
    f = click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config; flags override it.")(f)
    f = click.option("--scheme", type=click.Choice(["d2t7", "d2t4"]), default=None)(f)
    f = click.option("--set", "set_name", default=None)(f)
    f = click.option("--n", "n_edge", type=int, default=None)(f)
    f = click.option("--side", type=float, default=None)(f)
    f = click.option("--zeta", type=float, default=None)(f)
    f = click.option("--solver", type=click.Choice(["march", "direct"]), default=None)(f)
    f = click.option("--initial", type=click.Choice(["relaxed", "equilibrium"]), default=None)(f)
    f = click.option("--nev", type=int, default=None)(f)
    f = click.option("--seed", type=int, default=None)(f)
    f = click.option("--perturb", "perturbation", type=float, default=None)(f)
    f = click.option("--convention", type=click.Choice(["log", "linear"]), default=None)(f)
    f = click.option("--out", type=click.Path(), default=None, help="Output directory.")(f)
    return f


def _load_config(experiment, config_path, scheme, set_name, n_edge, side, zeta, solver, initial, nev, seed, perturbation, convention, out, **extra):
    data = {}
    if config_path:
        data = json.loads(Path(config_path).read_text())
    data["experiment"] = experiment
    flags = {
        "scheme": scheme,
        "param_set": set_name,
        "n_edge": n_edge,
        "side": side,
        "zeta": zeta,
        "solver": solver,
        "initial": initial,
        "nev": nev,
        "seed": seed,
        "perturbation": perturbation,
        "convention": convention,
    }
    data.update({k: v for k, v in flags.items() if v is not None})
    data.update({k: v for k, v in extra.items() if v is not None})
    if out is not None:
        outputs = dict(data.get("outputs", {}))
        outputs["directory"] = out
        data["outputs"] = outputs
    if "param_set" in data and "scheme" not in data and isinstance(data["param_set"], str):
        data["scheme"] = param_set(data["param_set"]).scheme
    if "scheme" in data and "param_set" not in data:
        data["param_set"] = "d2t7-order2" if data["scheme"] == "d2t7" else "d2t4-order2"
    return ExperimentConfig.from_dict(data)


@cli.command()
@_experiment_options
def harmonic(**kw):
    """Steady state with wall data x^2 - y^2 on the triangle; L-inf error against x^2 - y^2."""
    cfg = _load_config("harmonic", **kw)
    rep = run_harmonic(cfg)
    _emit({"config": cfg.to_dict(), **rep.summary()})


@cli.command()
@_experiment_options
@click.option("--T", "final_time", type=float, default=4.0 / 3.0, help="Final time.")
def decay(final_time, **kw):
    """Relaxation of the fundamental Dirichlet mode up to time T."""
    cfg = _load_config("decay", **kw)
    if cfg.stop.kind == "steady":
        cfg = cfg.with_(stop=StopCriterion("time", final_time))
    res = run_mode_decay(cfg)
    _emit({"config": cfg.to_dict(), "fitted_rate": res.fitted_rate, "expected_rate": res.expected_rate, **res.report.summary()})


@cli.command()
@_experiment_options
@click.option("--targets", default="2,2;4,4;6,6", help="Exact modes to match, 'm,n;m,n;...'.")
def modes(targets, **kw):
    """Leading Dirichlet modes on the triangle matched to exact modes."""
    cfg = _load_config("modes", **kw)
    pairs = [tuple(int(v) for v in t.split(",")) for t in targets.split(";") if t.strip()]
    res = run_dirichlet_modes(cfg, targets=pairs)
    _emit(
        {
            "config": cfg.to_dict(),
            "eigenvalues": res.spectrum.eigenvalues,
            "Lambda_num": res.spectrum.Lambda_num,
            "residuals": res.spectrum.residuals,
            "matches": {f"{a},{b}": {"Lambda_num": m.Lambda_num, "Lambda_exact": m.Lambda_exact, "overlap": m.overlap, "linf": m.error.linf} for (a, b), m in res.matches.items()},
        }
    )


@cli.command()
@_experiment_options
@click.option("--experiment", type=click.Choice(["harmonic", "decay"]), default="harmonic")
@click.option("--sizes", default="16,23,32,45,61", help="Comma-separated n_edge values.")
@click.option("--min-span", type=float, default=3.5, help="Smallest accepted h_max/h_min.")
@click.option("--workers", type=int, default=1)
def sweep(experiment, sizes, min_span, workers, **kw):
    """Refinement study: error against h and the fitted order."""
    cfg = _load_config(experiment, **kw)
    if experiment == "decay" and cfg.stop.kind == "steady":
        cfg = cfg.with_(stop=StopCriterion("time", 4.0 / 3.0))
    rep = convergence_sweep(cfg, _ints(sizes), min_span=min_span, workers=workers)
    _emit({"config": cfg.to_dict(), **rep.summary()})


@cli.command()
@click.option("--zeta", type=float, default=1.0)
def tune(zeta):
    """Built-in parameter sets with their diffusivity and leading error coefficient."""
    out = []
    for name, p in builtin_param_sets(zeta=zeta).items():
        rep = order_report(p)
        out.append({"name": name, "scheme": p.scheme, "a3": p.a3, "s": p.s, "mu": rep.mu, "theta": rep.theta, "formal_order": rep.formal_order})
    _emit(out)


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 2
    except CONFIG_ERRORS as exc:
        click.echo(f"configuration error: {exc}", err=True)
        return 2
    except NUMERICAL_ERRORS as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
