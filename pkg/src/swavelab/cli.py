"""Experiment orchestration: one declarative JSON config per invocation,
machine-readable reports beside a manifest, optional rendered figures.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 invariant violation.
"""

from __future__ import annotations

import argparse
import datetime
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .carleman import (audit_json, audit_proof_coefficients, verify_condition_d,
                       verify_condition_params)
from .config import ExperimentConfig, build_profile, load_config
from .errors import ConfigurationError, SwaveLabError
from .fields import sine_mode_profile
from .figures import render_figures
from .geometry import extract_gamma0, gamma0_csv_rows
from .identity_lab import (carleman_ratio, deterministic_process,
                           identity_refinement_study, stability_ratio,
                           stochastic_process, verify_pointwise_identity)
from .inverse import (counterexample_forward_check, deterministic_counterexample,
                      forward_observation_map, reconstruct, uniqueness_probe)
from .reports import write_csv, write_json
from .spde import (energy_series, ensemble_summary, hidden_regularity_ratio,
                   simulate_forward, solve_deterministic_reversed)
from .trajectory_io import dump_trajectories
from .errors import UndefinedRatioError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INVARIANT = 4


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _gamma0(config: ExperimentConfig):
    if config.weight is None:
        raise ConfigurationError("this experiment kind needs a weight block "
                                 "to define the observed boundary", field="weight")
    return extract_gamma0(config.mesh, config.principal, config.weight)


def _random_terminal_velocities(config: ExperimentConfig, samples: int,
                                max_mode: int = 5) -> np.ndarray:
    """Random smooth Dirichlet fields: mode sums with 1/k^2 decaying weights."""
    rng = np.random.default_rng([config.seed, 7001])
    mesh = config.mesh
    out = np.zeros((samples, mesh.num_nodes))
    for k in range(1, max_mode + 1):
        mode = sine_mode_profile([k] * mesh.dim, mesh.lo, mesh.hi)(mesh.nodes)
        out += rng.standard_normal((samples, 1)) / k ** 2 * mode[None, :]
    return out


def _resolve_lambda_tilde(config: ExperimentConfig):
    audit = audit_proof_coefficients(config.params, config.weight,
                                     config.principal, config.mesh)
    if audit.lambda_tilde is None:
        raise SwaveLabError("lambda thresholds not found on the doubling grid")
    return audit


# ---------------------------------------------------------------------------
# Runners (each returns: files dict for the manifest, figure payload, exit code)
# ---------------------------------------------------------------------------

def run_audit(config: ExperimentConfig, out: Path):
    if config.params is None:
        raise ConfigurationError("audit requires c0, c1, T, mu0 in the weight block",
                                 field="weight")
    cond_d = verify_condition_d(config.weight, config.principal, config.mesh)
    cond_p = verify_condition_params(config.params, config.weight,
                                     config.principal, config.mesh)
    audit = audit_proof_coefficients(config.params, config.weight,
                                     config.principal, config.mesh,
                                     lambda_grid=config.lambda_grid)
    subset = _gamma0(config)
    header, rows = gamma0_csv_rows(config.mesh, subset)
    payload = audit_json(cond_d, cond_p, audit)
    payload["condition_params_detail"] = {
        "part2_upper_value": cond_p.part2_upper_value,
        "part2_mid_value": cond_p.part2_mid_value,
        "part2_lower_value": cond_p.part2_lower_value,
    }
    write_csv(out / "gamma0.csv", header, rows)
    write_json(out / "audit.json", payload)
    return {"audit_json": payload}, EXIT_OK


def run_forward(config: ExperimentConfig, out: Path):
    mesh = config.mesh
    init = config.raw.get("initial", {})
    z0 = build_profile(init.get("z0", {"kind": "zero"}), mesh)(mesh.nodes)
    z1 = build_profile(init.get("z1", {"kind": "zero"}), mesh)(mesh.nodes)
    ens = simulate_forward(config.coeffs, z0, z1, mesh, config.horizon, config.dt,
                           config.paths, config.seed,
                           threads=config.options.get("threads", 1))
    header, rows, aggregate = ensemble_summary(ens)
    try:
        hidden = hidden_regularity_ratio(ens, config.coeffs)
        aggregate["hidden_regularity_ratio"] = hidden.ratio
    except UndefinedRatioError:
        aggregate["hidden_regularity_ratio"] = None
    write_csv(out / "ensemble_paths.csv", header, rows)
    write_json(out / "ensemble.json", aggregate)
    if config.options.get("dump_trajectories", False):
        dump_trajectories(out / "z.bin", ens.z)
        dump_trajectories(out / "zt.bin", ens.z_t)
    shown = min(ens.paths, 8)
    payload = {
        "times": ens.times,
        "trace_samples": ens.trace[:shown, :, 0],
        "energy": energy_series(mesh, config.principal, ens.z[0], ens.z_t[0]),
    }
    return payload, EXIT_OK


def run_identity(config: ExperimentConfig, out: Path):
    mesh0 = config.raw["resolution"]
    levels = int(config.options.get("levels", 4))
    base_steps = int(config.options.get("base_steps", 16))
    stochastic = bool(config.options.get("stochastic", False))
    paths = int(config.options.get("paths", 256)) if stochastic else 1
    T = config.horizon
    if config.params is None:
        raise ConfigurationError("identity experiment needs weight parameters",
                                 field="weight")

    fine_steps = base_steps * 2 ** (levels - 1)
    rng = np.random.default_rng([config.seed, 4242])
    fine_increments = rng.normal(0.0, np.sqrt(T / fine_steps), size=(paths, fine_steps))

    from .geometry import build_mesh as _bm
    from .config import _build_principal

    def build_case(level):
        res = (int(mesh0) - 1) * 2 ** level + 1
        mesh = _bm(config.raw["domain"], res)
        principal = _build_principal(config.raw.get("principal", {"kind": "identity"}),
                                     mesh)
        steps = base_steps * 2 ** level
        dt = T / steps
        phi = build_profile(config.options.get(
            "profile", {"kind": "sine_mode", "k": 1}), mesh)
        if stochastic:
            group = 2 ** (levels - 1 - level)
            inc = fine_increments.reshape(paths, steps, group).sum(axis=2)
            proc = stochastic_process(phi, inc, dt)
        else:
            proc = deterministic_process(
                phi, lambda t: t ** 2 * (T - t), lambda t: 2 * t * (T - t) - t ** 2,
                T, steps)
        result = verify_pointwise_identity(proc, config.params, config.weight,
                                           principal, mesh)
        return result, dt, float(np.max(mesh.spacing))

    report = identity_refinement_study(build_case, levels)
    header, rows = report.csv_rows()
    write_csv(out / "identity.csv", header, rows)
    orders = report.observed_orders()
    write_json(out / "identity.json", {
        "levels": report.levels,
        "observed_orders": orders.tolist(),
        "stochastic": stochastic,
        "paths": paths,
    })
    return {"levels": report.levels}, EXIT_OK


def run_carleman_ratio(config: ExperimentConfig, out: Path):
    if config.params is None:
        raise ConfigurationError("ratio study requires weight parameters", field="weight")
    audit = _resolve_lambda_tilde(config)
    lam_tilde = float(config.options.get("lambda_tilde", audit.lambda_tilde))
    grid = config.options.get("lambda_multipliers", [1.0, 2.0, 4.0])
    lambda_grid = [lam_tilde * float(m) for m in grid]
    samples = int(config.options.get("samples", 50))
    subset = _gamma0(config)
    w = _random_terminal_velocities(config, samples)
    trajs = solve_deterministic_reversed(
        config.coeffs, w, config.mesh, config.horizon, config.dt)

    code = EXIT_OK
    modes_payload = {}
    summary = {"lambda_tilde": lam_tilde, "samples": samples,
               "audit": audit.as_dict()}
    for mode in ("coupled", "frozen"):
        study = carleman_ratio(trajs, config.params, config.weight,
                               config.principal, config.mesh, subset, lambda_grid,
                               weight_mode=mode, frozen_lambda=lam_tilde)
        header, rows = study.csv_rows()
        stem = "ratio_study" if mode == "coupled" else "ratio_study_frozen"
        write_csv(out / f"{stem}.csv", header, rows)
        modes_payload[mode] = study.rows
        summary[mode] = {
            "max_ratios": study.max_ratios().tolist(),
            "max_log_ratios": [r["max_log_ratio"] for r in study.rows],
            "z0_term_slope": study.z0_term_slope(),
            "violation": study.violation,
        }
        if study.violation:
            code = EXIT_INVARIANT
        sample_header = ["lambda", "sample", "log_lhs_init", "log_lhs_force",
                         "log_rhs", "log_ratio"]
        sample_rows = [[r["lambda"], r["sample"], r["log_lhs_init"],
                        r["log_lhs_force"], r["log_rhs"], r["log_ratio"]]
                       for r in study.sample_rows]
        write_csv(out / f"{stem}_samples.csv", sample_header, sample_rows)
    write_json(out / "ratio.json", summary)
    return {"modes": modes_payload}, code


def run_stability(config: ExperimentConfig, out: Path):
    samples = int(config.options.get("samples", 100))
    subset = _gamma0(config)
    w = _random_terminal_velocities(config, samples)
    trajs = solve_deterministic_reversed(
        config.coeffs, w, config.mesh, config.horizon, config.dt)
    study = stability_ratio(trajs, config.mesh, subset)
    header, rows = study.csv_rows()
    write_csv(out / "stability.csv", header, rows)
    values = study.values()
    write_json(out / "stability.json", {
        "samples": len(rows),
        "s_min": float(values.min()),
        "s_max": float(values.max()),
        "spread": float(values.max() / values.min()),
    })
    return {"values": values}, EXIT_OK


def _ground_truth(config: ExperimentConfig):
    mesh = config.mesh
    gt = config.options.get("ground_truth", {
        "z0": {"kind": "sine_mode", "k": 1},
        "z1": {"kind": "zero"},
        "g2": {"kind": "sine_mode", "k": 2},
    })
    z0 = build_profile(gt.get("z0", {"kind": "zero"}), mesh)(mesh.nodes)
    z1 = build_profile(gt.get("z1", {"kind": "zero"}), mesh)(mesh.nodes)
    g2 = build_profile(gt.get("g2", {"kind": "zero"}), mesh)(mesh.nodes)
    return z0, z1, g2


def _resolve_g1_block(config: ExperimentConfig):
    from .config import _build_g1
    block = config.raw.get("force", {}).get("g1", {"kind": "constant", "value": 1.0})
    return _build_g1(block, None)


def run_reconstruct(config: ExperimentConfig, out: Path):
    mesh = config.mesh
    subset = _gamma0(config)
    z0, z1, g2 = _ground_truth(config)
    g1 = _resolve_g1_block(config)
    base = config.coeffs
    from .spde import CoefficientSet
    coeffs = CoefficientSet(principal=base.principal, b1=base.b1, b2=base.b2,
                            b3=base.b3, b4=base.b4, force=None)
    obs = forward_observation_map(z0, z1, g2, g1, coeffs, mesh, subset,
                                  config.horizon, config.dt, config.paths,
                                  config.seed)
    eps = float(config.options.get("eps", 1e-6))
    result = reconstruct(obs, g1, coeffs, mesh, subset, eps,
                         tol=float(config.options.get("tol", 1e-9)),
                         max_iter=int(config.options.get("max_iter", 400)),
                         ground_truth=(z0, z1, g2))
    summary = result.summary()
    write_json(out / "reconstruction.json", summary)
    header = ["node"] + [f"x{a+1}" for a in range(mesh.dim)] + \
        ["z0_hat", "z1_hat", "g2_hat", "z0_true", "z1_true", "g2_true"]
    rows = [[n, *[float(c) for c in mesh.nodes[n]],
             float(result.z0_hat[n]), float(result.z1_hat[n]), float(result.g2_hat[n]),
             float(z0[n]), float(z1[n]), float(g2[n])]
            for n in range(mesh.num_nodes)]
    write_csv(out / "reconstruction_fields.csv", header, rows)
    payload = {"coords": mesh.nodes[:, 0], "z0_hat": result.z0_hat,
               "z1_hat": result.z1_hat, "g2_hat": result.g2_hat,
               "z0_true": z0, "z1_true": z1, "g2_true": g2}
    # truncated CG is a flagged partial result, not a failure
    return payload, EXIT_OK


def run_uniqueness(config: ExperimentConfig, out: Path):
    mesh = config.mesh
    subset = _gamma0(config)
    z0, z1, g2 = _ground_truth(config)
    g1 = _resolve_g1_block(config)
    from .spde import CoefficientSet
    base = config.coeffs
    coeffs = CoefficientSet(principal=base.principal, b1=base.b1, b2=base.b2,
                            b3=base.b3, b4=base.b4, force=None)
    obs = forward_observation_map(z0, z1, g2, g1, coeffs, mesh, subset,
                                  config.horizon, config.dt, config.paths,
                                  config.seed)
    deltas = config.options.get("deltas", [1e-2, 1e-3, 1e-4])
    report = uniqueness_probe(obs, g1, coeffs, mesh, subset, deltas,
                              eps=float(config.options.get("eps", 1e-6)),
                              max_iter=int(config.options.get("max_iter", 300)))
    write_json(out / "uniqueness.json", report.as_dict())
    write_csv(out / "uniqueness.csv", ["delta", "estimate_norm"],
              list(zip(report.deltas, report.estimate_norms)))
    return report.as_dict(), EXIT_OK


def run_counterexample(config: ExperimentConfig, out: Path):
    opts = config.options
    result = deterministic_counterexample(
        config.mesh, config.coeffs, config.horizon, config.dt,
        t_center=opts.get("t_center"), t_radius=opts.get("t_radius"),
        x_center=opts.get("x_center"), x_radius=opts.get("x_radius"))
    payload = result.as_dict()
    payload["forward_relative_error"] = counterexample_forward_check(
        result, config.mesh, config.coeffs)
    write_json(out / "counterexample.json", payload)
    fig_payload = {"y": result.y, "f": result.f, "dim": config.mesh.dim,
                   "extent": (0.0, result.T, float(config.mesh.lo[0]),
                              float(config.mesh.hi[0]))}
    return fig_payload, EXIT_OK


RUNNERS = {
    "audit": run_audit,
    "forward": run_forward,
    "identity": run_identity,
    "carleman_ratio": run_carleman_ratio,
    "stability": run_stability,
    "reconstruct": run_reconstruct,
    "uniqueness_probe": run_uniqueness,
    "counterexample": run_counterexample,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def run_experiment(config: ExperimentConfig, out_dir, threads: int = 1,
                   figures: bool = True, verbose: bool = False) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    config.options.setdefault("threads", threads)
    try:
        payload, code = RUNNERS[config.kind](config, out)
    except ConfigurationError as exc:
        write_json(out / "failure.json", {"error": "configuration",
                                          "message": str(exc), "field": exc.field})
        return EXIT_CONFIG
    except SwaveLabError as exc:
        write_json(out / "failure.json", {"error": type(exc).__name__,
                                          "message": str(exc)})
        return EXIT_NUMERICAL
    if figures:
        try:
            render_figures(config.kind, payload, out)
        except Exception as exc:  # figures are best-effort presentation output
            if verbose:
                print(f"figure rendering failed: {exc}", file=sys.stderr)
    elapsed = time.perf_counter() - start
    write_json(out / "manifest.json", {
        "config": config.raw,
        "kind": config.kind,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "wall_time_s": elapsed,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    })
    if verbose:
        print(f"{config.kind}: exit {code} in {elapsed:.2f}s -> {out}")
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="swavelab",
        description="Run one declarative experiment and emit reports.")
    parser.add_argument("--config", required=True, help="path to the JSON config")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--verbose", action="store_true")
    parser.add_argument("--figures", action=argparse.BooleanOptionalAction,
                        default=True, help="render figures beside the data files")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
    except ConfigurationError as exc:
        print(f"config error: {exc}" + (f" (field: {exc.field})" if exc.field else ""),
              file=sys.stderr)
        return EXIT_CONFIG
    code = run_experiment(config, args.out, threads=args.threads,
                          figures=args.figures, verbose=args.verbose)
    if code != EXIT_OK:
        print(f"experiment finished with exit code {code}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
