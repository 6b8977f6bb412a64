"""Figure rendering for the report path.

Each experiment kind gets one or two summary figures written next to the
delimited output.  Figures are presentation artifacts; the CSV/JSON files
remain the canonical deterministic outputs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, out_dir: Path, name: str) -> Path:
    fig_dir = Path(out_dir) / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    path = fig_dir / f"{name}.png"
    fig.savefig(path, dpi=140, bbox_inches="tight")
    plt.close(fig)
    return path


def render_audit(payload: dict, out_dir) -> list:
    report = payload["audit_json"]
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    labels = ["part1", "part2 upper", "part2 lower"]
    values = [report["condition_params"]["part1_margin"],
              report["condition_params"]["part2_upper_margin"],
              report["condition_params"]["part2_lower_margin"]]
    ax.bar(labels, values, color=["#4878d0" if v > 0 else "#d65f5f" for v in values])
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_ylabel("margin")
    ax.set_title(f"feasibility margins (mu0_max = {report['condition_d']['mu0_max']:.4g})")
    return [_save(fig, out_dir, "audit_margins")]


def render_forward(payload: dict, out_dir) -> list:
    out = []
    times = payload["times"]
    trace = payload["trace_samples"]          # (paths_shown, K+1)
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    for p in range(trace.shape[0]):
        ax.plot(times, trace[p], lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("boundary slope")
    ax.set_title("normal-derivative trace at the first observed node")
    out.append(_save(fig, out_dir, "forward_trace"))
    if "energy" in payload:
        fig, ax = plt.subplots(figsize=(6.0, 3.0))
        ax.plot(times, payload["energy"], lw=1.0)
        ax.set_xlabel("t")
        ax.set_ylabel("discrete energy")
        ax.set_title("path-0 energy history")
        out.append(_save(fig, out_dir, "forward_energy"))
    return out


def render_identity(payload: dict, out_dir) -> list:
    levels = payload["levels"]
    dts = np.array([lv["dt"] for lv in levels])
    res = np.array([lv["residual"] for lv in levels])
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.loglog(dts, res, "o-", label="residual")
    ax.loglog(dts, res[0] * (dts / dts[0]) ** 2, "k--", lw=0.8, label="slope 2")
    ax.set_xlabel("dt")
    ax.set_ylabel("|L - R|")
    ax.invert_xaxis()
    ax.legend()
    ax.set_title("integrated identity residual under refinement")
    return [_save(fig, out_dir, "identity_residual")]


def render_ratio(payload: dict, out_dir) -> list:
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    for mode, rows in payload["modes"].items():
        lams = [r["lambda"] for r in rows]
        logs = [r["max_log_ratio"] for r in rows]
        ax.plot(lams, logs, "o-", label=mode)
    ax.set_xscale("log")
    ax.set_xlabel("lambda")
    ax.set_ylabel("log max ratio")
    ax.legend()
    ax.set_title("weighted estimate: left/right log-ratio")
    return [_save(fig, out_dir, "ratio_study")]


def render_stability(payload: dict, out_dir) -> list:
    values = np.asarray(payload["values"])
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.hist(values, bins=min(20, max(5, values.size // 4)), color="#4878d0")
    ax.set_xlabel("stability ratio s")
    ax.set_ylabel("count")
    ax.set_title(f"spread {values.max() / values.min():.2f}x over {values.size} samples")
    return [_save(fig, out_dir, "stability_hist")]


def render_reconstruct(payload: dict, out_dir) -> list:
    coords = np.asarray(payload["coords"])
    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.2), sharex=True)
    for ax, name in zip(axes, ("z0", "z1", "g2")):
        ax.plot(coords, payload[f"{name}_hat"], label="estimate", lw=1.2)
        if f"{name}_true" in payload:
            ax.plot(coords, payload[f"{name}_true"], "k--", lw=0.9, label="truth")
        ax.set_title(name)
        ax.set_xlabel("x")
    axes[0].legend()
    fig.suptitle("reconstructed unknowns")
    return [_save(fig, out_dir, "reconstruction")]


def render_uniqueness(payload: dict, out_dir) -> list:
    deltas = np.asarray(payload["deltas"])
    norms = np.asarray(payload["estimate_norms"])
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    ax.loglog(deltas, norms, "o-")
    ax.set_xlabel("observation scale")
    ax.set_ylabel("estimate norm")
    slope = payload.get("slope")
    ax.set_title(f"estimate norm vs data scale (slope {slope:.3f})"
                 if slope is not None else "estimate norm vs data scale")
    return [_save(fig, out_dir, "uniqueness_scaling")]


def render_counterexample(payload: dict, out_dir) -> list:
    y = np.asarray(payload["y"])
    f = np.asarray(payload["f"])
    if payload.get("dim", 1) != 1:
        return []
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.2))
    for ax, arr, name in zip(axes, (y, f), ("bump y", "source f")):
        im = ax.imshow(arr.T, origin="lower", aspect="auto",
                       extent=payload["extent"], cmap="RdBu_r")
        ax.set_xlabel("t")
        ax.set_ylabel("x")
        ax.set_title(name)
        fig.colorbar(im, ax=ax, fraction=0.05)
    return [_save(fig, out_dir, "counterexample")]


RENDERERS = {
    "audit": render_audit,
    "forward": render_forward,
    "identity": render_identity,
    "carleman_ratio": render_ratio,
    "stability": render_stability,
    "reconstruct": render_reconstruct,
    "uniqueness_probe": render_uniqueness,
    "counterexample": render_counterexample,
}


def render_figures(kind: str, payload: dict, out_dir) -> list:
    renderer = RENDERERS.get(kind)
    if renderer is None or payload is None:
        return []
    return renderer(payload, out_dir)
