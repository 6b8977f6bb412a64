"""Declarative experiment configuration: JSON schema validation and
construction of the domain objects each experiment kind needs.

Coefficient and weight families are selected by string tag so that the audits
always have closed-form derivatives available; tabulated inputs come from
referenced ``.npy`` files which must exist at validation time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np

from .carleman import CarlemanParams
from .errors import ConfigurationError
from .fields import (PrincipalField, SpatialProfile, WeightFunction,
                     bump_profile, constant_field, constant_weight,
                     principal_constant, principal_identity, principal_sine_1d,
                     shifted_quadratic_weight, sine_mode_profile, zero_field,
                     zero_profile)
from .geometry import SpatialMesh, build_mesh
from .spde import CoefficientSet, SeparableForce, TabulatedForce

EXPERIMENT_KINDS = ("audit", "forward", "identity", "carleman_ratio", "stability",
                    "reconstruct", "uniqueness_probe", "counterexample")


@dataclass
class ExperimentConfig:
    """Validated configuration plus constructed domain objects."""

    raw: dict
    kind: str
    seed: int
    mesh: SpatialMesh
    weight: Optional[WeightFunction]
    params: Optional[CarlemanParams]
    principal: PrincipalField
    coeffs: CoefficientSet
    horizon: Optional[float]
    dt: Optional[float]
    paths: int
    lambda_grid: list
    options: dict = dc_field(default_factory=dict)


def _require(raw: dict, key: str, where: str = ""):
    if key not in raw:
        path = f"{where}.{key}" if where else key
        raise ConfigurationError(f"missing required field {path!r}", field=path)
    return raw[key]


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist", field="config")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}", field="config")
    return parse_config(raw, base_dir=path.parent)


def parse_config(raw: dict, base_dir: Optional[Path] = None) -> ExperimentConfig:
    kind = _require(raw, "kind")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigurationError(f"unknown experiment kind {kind!r}", field="kind")
    seed = _require(raw, "seed")
    if not isinstance(seed, int):
        raise ConfigurationError("seed must be an integer", field="seed")

    mesh = build_mesh(_require(raw, "domain"), _require(raw, "resolution"))
    principal = _build_principal(raw.get("principal", {"kind": "identity"}), mesh)

    weight = params = None
    if "weight" in raw:
        weight, params = _build_weight(raw["weight"], mesh.dim)

    coeffs = _build_coefficients(raw.get("coefficients", {}), raw.get("force"),
                                 principal, mesh, base_dir)

    horizon = raw.get("horizon")
    if horizon is None and params is not None:
        horizon = params.T
    dt = raw.get("dt")
    if dt is None and "cfl" in raw:
        from .numerics import DivergenceFormOperator
        bound = DivergenceFormOperator(mesh, principal.values).cfl_dt(float(raw["cfl"]))
        if horizon is not None:
            steps = int(np.ceil(horizon / bound))
            dt = horizon / steps
        else:
            dt = bound

    needs_weight = kind in ("audit", "carleman_ratio")
    if needs_weight and weight is None:
        raise ConfigurationError(f"kind {kind!r} requires a weight block", field="weight")
    needs_time = kind in ("forward", "identity", "carleman_ratio", "stability",
                          "reconstruct", "uniqueness_probe", "counterexample")
    if needs_time and (horizon is None or dt is None):
        raise ConfigurationError(f"kind {kind!r} requires horizon and dt (or cfl)",
                                 field="dt")

    return ExperimentConfig(
        raw=raw, kind=kind, seed=seed, mesh=mesh, weight=weight, params=params,
        principal=principal, coeffs=coeffs, horizon=horizon, dt=dt,
        paths=int(raw.get("paths", 1)),
        lambda_grid=[float(v) for v in raw.get("lambda_grid", [2.0 ** k for k in range(11)])],
        options=raw.get("options", {}))


def _build_weight(block: dict, dim: int):
    form = _require(block, "form", "weight")
    if form == "shifted_quadratic":
        weight = shifted_quadratic_weight(float(_require(block, "scale", "weight")),
                                          _require(block, "center", "weight"))
    elif form == "constant":
        weight = constant_weight(float(_require(block, "value", "weight")), dim)
    else:
        raise ConfigurationError(f"unknown weight form {form!r}", field="weight.form")
    params = None
    if all(k in block for k in ("c0", "c1", "T", "mu0")):
        params = CarlemanParams(lam=float(block.get("lam", 1.0)),
                                c0=float(block["c0"]), c1=float(block["c1"]),
                                mu0=float(block["mu0"]), T=float(block["T"]))
    return weight, params


def _build_principal(block: dict, mesh: SpatialMesh) -> PrincipalField:
    kind = block.get("kind", "identity")
    if kind == "identity":
        return principal_identity(mesh.nodes, s0=float(block.get("s0", 1.0)))
    if kind == "constant":
        return principal_constant(mesh.nodes, _require(block, "matrix", "principal"),
                                  s0=float(_require(block, "s0", "principal")))
    if kind == "sine_1d":
        return principal_sine_1d(mesh.nodes, base=float(_require(block, "base", "principal")),
                                 amp=float(_require(block, "amp", "principal")),
                                 freq=float(block.get("freq", 1.0)),
                                 s0=block.get("s0"))
    raise ConfigurationError(f"unknown principal kind {kind!r}", field="principal.kind")


def build_profile(block: dict, mesh: SpatialMesh) -> SpatialProfile:
    kind = block.get("kind", "zero")
    if kind == "zero":
        return zero_profile(mesh.dim)
    if kind == "sine_mode":
        k = block.get("k", 1)
        prof = sine_mode_profile(k if isinstance(k, (list, tuple)) else [k] * mesh.dim,
                                 mesh.lo, mesh.hi)
        amp = float(block.get("amplitude", 1.0))
        if amp != 1.0:
            base = prof
            return SpatialProfile(tag=base.tag,
                                  value_fn=lambda X: amp * base.value_fn(X),
                                  grad_fn=lambda X: amp * base.grad_fn(X),
                                  hess_fn=lambda X: amp * base.hess_fn(X),
                                  params={**base.params, "amplitude": amp})
        return prof
    if kind == "bump":
        return bump_profile(_require(block, "center", "profile"),
                            _require(block, "radius", "profile"),
                            float(block.get("amplitude", 1.0)))
    raise ConfigurationError(f"unknown profile kind {kind!r}", field="profile.kind")


def _load_array(block: dict, base_dir: Optional[Path], where: str) -> np.ndarray:
    rel = Path(_require(block, "path", where))
    path = rel if rel.is_absolute() or base_dir is None else base_dir / rel
    if not path.exists():
        raise ConfigurationError(f"referenced file {path} does not exist",
                                 field=f"{where}.path")
    return np.load(path)


def _build_scalar_field(block: Optional[dict], vector: bool = False):
    if block is None or block.get("kind", "zero") == "zero":
        return zero_field(vector=vector)
    kind = block["kind"]
    if kind == "constant":
        return constant_field(block.get("value", 0.0), vector=vector)
    raise ConfigurationError(f"unknown coefficient kind {kind!r}", field="coefficients")


def _build_g1(block: dict, base_dir: Optional[Path]):
    kind = block.get("kind", "constant")
    if kind == "constant":
        return float(block.get("value", 1.0))
    if kind == "sine":
        amp = float(block.get("amp", 1.0))
        freq = float(block.get("freq", 1.0))
        return lambda t: amp * np.sin(np.pi * freq * t)
    if kind == "file":
        return _load_array(block, base_dir, "force.g1")
    raise ConfigurationError(f"unknown g1 kind {kind!r}", field="force.g1")


def _build_coefficients(block: dict, force_block: Optional[dict],
                        principal: PrincipalField, mesh: SpatialMesh,
                        base_dir: Optional[Path]) -> CoefficientSet:
    force = None
    if force_block is not None:
        mode = _require(force_block, "mode", "force")
        if mode == "separable":
            g2_block = _require(force_block, "g2", "force")
            if g2_block.get("kind") == "file":
                g2 = _load_array(g2_block, base_dir, "force.g2")
            else:
                g2 = build_profile(g2_block, mesh)(mesh.nodes)
            force = SeparableForce(g1=_build_g1(_require(force_block, "g1", "force"),
                                                base_dir), g2=g2)
        elif mode == "tabulated":
            force = TabulatedForce(values=_load_array(force_block, base_dir, "force"))
        else:
            raise ConfigurationError(f"unknown force mode {mode!r}", field="force.mode")
    return CoefficientSet(
        principal=principal,
        b1=_build_scalar_field(block.get("b1")),
        b2=_build_scalar_field(block.get("b2"), vector=True),
        b3=_build_scalar_field(block.get("b3")),
        b4=_build_scalar_field(block.get("b4")),
        force=force)
