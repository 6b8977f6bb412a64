"""Numerical verification of the weighted multiplier identity on manufactured
processes, and Monte Carlo ratio studies for the weighted estimate and the
partial stability bound.

The identity is checked in integrated form over the space-time cylinder: the
multiplier pairing against du_t, the divergence terms reduced to boundary
integrals, and the endpoint terms from the exact differential, against the
quadratic-form side with the zeroth-order weight B and the quadratic-variation
correction.  The du_t pairing uses the time-symmetric sum plus the model Ito
correction; this keeps the Ito meaning of the pairing while converging at
second order on smooth deterministic inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import List, Optional, Sequence

import numpy as np

from .carleman import CarlemanParams, WeightMachinery
from .errors import DataError, EmptyStudyError, UndefinedRatioError
from .fields import PrincipalField, SpatialProfile, WeightFunction
from .geometry import BoundarySubset, SpatialMesh
from .numerics import (boundary_quad_weights, gradient_centered,
                       time_trapezoid_weights, trapezoid_weights)
from .spde import PathEnsemble, trace_sq_time_integral

BOUNDARY_PROFILE_TOL = 1e-12


# ---------------------------------------------------------------------------
# Manufactured adapted processes u(t, x) = phi(x) h(t)
# ---------------------------------------------------------------------------

@dataclass
class ManufacturedProcess:
    """Separable process with exact spatial derivatives and a discrete temporal
    path: h' accumulates drift and Brownian increments, h accumulates h' dt.

    ``h``/``hp`` have shape (paths, K+1); sigma holds the diffusion of u_t at
    the left endpoints (paths, K) and is zero for deterministic inputs.
    """

    phi: SpatialProfile
    h: np.ndarray
    hp: np.ndarray
    sigma: np.ndarray
    dt: float

    @property
    def paths(self) -> int:
        return self.h.shape[0]

    @property
    def num_steps(self) -> int:
        return self.h.shape[1] - 1


def deterministic_process(phi: SpatialProfile, h_fn, hp_fn, T: float,
                          num_steps: int) -> ManufacturedProcess:
    t = np.linspace(0.0, T, num_steps + 1)
    h = np.array([h_fn(tk) for tk in t])[None, :]
    hp = np.array([hp_fn(tk) for tk in t])[None, :]
    return ManufacturedProcess(phi=phi, h=h, hp=hp,
                               sigma=np.zeros((1, num_steps)), dt=T / num_steps)


def stochastic_process(phi: SpatialProfile, increments: np.ndarray, dt: float,
                       drift_fn=None, sigma_fn=None, h0: float = 0.0,
                       hp0: float = 0.0) -> ManufacturedProcess:
    """Discrete Ito path: hp_{k+1} = hp_k + mu(t_k) dt + sigma(t_k) dB_k and
    h_{k+1} = h_k + hp_k dt, driven by the supplied increments (paths, K)."""
    increments = np.atleast_2d(np.asarray(increments, dtype=float))
    P, K = increments.shape
    t = np.arange(K) * dt
    mu = np.zeros(K) if drift_fn is None else np.array([drift_fn(tk) for tk in t])
    sig = np.ones(K) if sigma_fn is None else np.array([sigma_fn(tk) for tk in t])
    h = np.empty((P, K + 1))
    hp = np.empty((P, K + 1))
    h[:, 0] = h0
    hp[:, 0] = hp0
    for k in range(K):
        h[:, k + 1] = h[:, k] + hp[:, k] * dt
        hp[:, k + 1] = hp[:, k] + mu[k] * dt + sig[k] * increments[:, k]
    return ManufacturedProcess(phi=phi, h=h, hp=hp,
                               sigma=np.broadcast_to(sig, (P, K)).copy(), dt=dt)


# ---------------------------------------------------------------------------
# Pointwise identity, integrated over the cylinder
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IdentityPathResult:
    left: np.ndarray
    right: np.ndarray
    residual: np.ndarray
    normalized: np.ndarray
    qv_model: np.ndarray
    qv_empirical: np.ndarray
    boundary_full: np.ndarray
    boundary_reduced: np.ndarray


def verify_pointwise_identity(process: ManufacturedProcess, params: CarlemanParams,
                              weight: WeightFunction, field: PrincipalField,
                              mesh: SpatialMesh,
                              machinery: Optional[WeightMachinery] = None) -> IdentityPathResult:
    """Integrate both sides of the multiplier identity for each path.

    The left side collects the multiplier pairing with du_t, minus the pairing
    with the elliptic term, plus the boundary flux and the endpoint difference.
    The right side collects the quadratic forms (velocity, gradient, zeroth
    order with B, squared multiplier) plus the model quadratic-variation term;
    the empirical squared-increment version is returned as a cross-check.
    """
    mach = machinery or WeightMachinery(weight, field, mesh)
    X = mesh.nodes
    phi = process.phi(X)
    if np.max(np.abs(phi[mesh.boundary_indices])) > BOUNDARY_PROFILE_TOL * max(
            1.0, float(np.max(np.abs(phi)))):
        raise DataError("manufactured profile must vanish at boundary nodes")
    grad_phi = process.phi.grad(X)
    hess_phi = process.phi.hess(X)

    K = process.num_steps
    dt = process.dt
    t = np.arange(K + 1) * dt
    wx = trapezoid_weights(mesh)
    wt = time_trapezoid_weights(K + 1, dt)

    lam = params.lam
    ell = mach.ell(params, t)                      # (K+1, N)
    theta = np.exp(ell)
    lt = mach.ell_t(params, t)[:, None]            # (K+1, 1)
    ltt = mach.ell_tt(params)
    gl = mach.grad_ell(params)                     # (N, n)
    psi = mach.psi(params)                         # (N,)
    A = mach.A(params, t)                          # (K+1, N)
    B = mach.B(params, t)                          # (K+1, N)
    cxx = mach.cxx_matrix(params)                  # (N, n, n)
    c_t = ltt + lam * mach.D - psi                 # (N,) velocity coefficient

    # div_p grad phi = sum_ij (b^ij phi_xi)_xj, analytic.
    div_p_grad_phi = (np.einsum("njij,ni->n", mach.grad_b, grad_phi)
                      + np.einsum("nij,nij->n", mach.b, hess_phi))

    h = process.h[:, :, None]                      # (P, K+1, 1)
    hp = process.hp[:, :, None]

    u = h * phi                                    # (P, K+1, N)
    ut = hp * phi
    v = theta[None] * u
    vt = theta[None] * (lt[None] * u + ut)
    # v_x = theta (grad_ell u + grad u)
    vx = theta[None, :, :, None] * (gl[None, None] * u[..., None]
                                    + grad_phi[None, None] * h[..., None])

    conormal_vx = np.einsum("nij,pkni->pknj", mach.b, vx)
    mult = (-2.0 * lt[None] * vt
            + 2.0 * np.einsum("pknj,nj->pkn", conormal_vx, gl)
            + psi[None, None] * v)
    theta_mult = theta[None] * mult

    # Pairing with du_t: time-symmetric sum plus the model Ito correction.
    d_ut = ut[:, 1:] - ut[:, :-1]
    pair_sym = 0.5 * (theta_mult[:, 1:] + theta_mult[:, :-1])
    pairing = np.einsum("pkn,n->p", pair_sym * d_ut, wx)

    sigma2 = process.sigma ** 2                    # (P, K)
    theta2_lt = (theta ** 2) * lt                  # (K+1, N)
    qv_weight = np.einsum("kn,n->k", theta2_lt[:-1] * phi[None] ** 2, wx)
    qv_model = np.einsum("pk,k->p", sigma2, qv_weight) * dt
    d_hp = process.hp[:, 1:] - process.hp[:, :-1]
    qv_empirical = np.einsum("pk,k->p", d_hp ** 2, qv_weight)

    # Elliptic pairing: int theta M sum(b u_xi)_xj dx dt (trapezoid in t).
    elliptic = np.einsum("pkn,n,k->p", theta_mult * (h * div_p_grad_phi[None, None]),
                         wx, wt)

    # Boundary flux: full divergence flux and its Dirichlet reduction.
    b_idx = mesh.boundary_indices
    nu = mesh.boundary_normals
    wb = boundary_quad_weights(mesh)
    vx_b = vx[:, :, b_idx, :]
    b_b = mach.b[b_idx]
    gl_b = gl[b_idx]
    # full flux: sum_j nu_j of [sum_ii'jj' 2 b^ij b^i'j' l_xi' vx_i vx_j'
    #                            - b^ij b^i'j' l_xi vx_i' vx_j']
    bv = np.einsum("mij,pkmi->pkmj", b_b, vx_b)
    bl = np.einsum("mij,mi->mj", b_b, gl_b)
    flux_full = (2.0 * np.einsum("pkmj,mj,pkmi,mi->pkm", bv, nu, vx_b, bl)
                 - np.einsum("mi,mi,pkmj,pkmj->pkm", bl, nu, vx_b, bv)
                 )
    # reduced form: (nu^T b nu)((b grad ell) . nu) |dv/dnu|^2
    nbn = np.einsum("mi,mij,mj->m", nu, b_b, nu)
    bln = np.einsum("mj,mj->m", bl, nu)
    dvdnu = np.einsum("pkmi,mi->pkm", vx_b, nu)
    flux_reduced = nbn[None, None] * bln[None, None] * dvdnu ** 2
    boundary_full = np.einsum("pkm,m,k->p", flux_full, wb, wt)
    boundary_reduced = np.einsum("pkm,m,k->p", flux_reduced, wb, wt)

    # Endpoint difference of the exact differential's bracket.
    def endpoint(k):
        vk, vtk, vxk = v[:, k], vt[:, k], vx[:, k]
        cono = np.einsum("nij,pni->pnj", mach.b, vxk)
        term = (np.einsum("pnj,pnj->pn", cono, vxk) * float(lt[k, 0])
                - 2.0 * np.einsum("pnj,nj->pn", cono, gl) * vtk
                + float(lt[k, 0]) * vtk ** 2
                - psi[None] * vtk * vk
                + (A[k] * float(lt[k, 0]))[None] * vk ** 2)
        return np.einsum("pn,n->p", term, wx)

    endpoint_diff = endpoint(K) - endpoint(0)

    left = pairing + qv_model - elliptic + boundary_full + endpoint_diff

    # The v_x v_t cross coefficient vanishes identically here: the conormal
    # field is time-free and ell has no mixed t-x derivative (audited
    # separately), so it is omitted from the quadratic form.
    quad = (c_t[None, None] * vt ** 2
            + np.einsum("nij,pkni,pknj->pkn", cxx, vx, vx)
            + B[None] * v ** 2
            + mult ** 2)
    right_int = np.einsum("pkn,n,k->p", quad, wx, wt)
    right = right_int + qv_model

    residual = left - right
    normalized = np.abs(residual) / np.maximum(np.maximum(np.abs(left), np.abs(right)), 1.0)
    return IdentityPathResult(left=left, right=right, residual=residual,
                              normalized=normalized, qv_model=qv_model,
                              qv_empirical=qv_empirical,
                              boundary_full=boundary_full,
                              boundary_reduced=boundary_reduced)


@dataclass(frozen=True)
class IdentityReport:
    levels: List[dict]

    def csv_rows(self):
        header = ["refinement_level", "dt", "dx", "residual", "normalized_residual"]
        rows = [[lv["level"], lv["dt"], lv["dx"], lv["residual"], lv["normalized"]]
                for lv in self.levels]
        return header, rows

    def observed_orders(self) -> np.ndarray:
        res = np.array([lv["residual"] for lv in self.levels])
        return np.log2(res[:-1] / res[1:])


def identity_refinement_study(build_case, num_levels: int) -> IdentityReport:
    """Run ``build_case(level) -> IdentityPathResult`` on a halving ladder.

    The caller halves dt and dx per level and keeps increments common across
    levels for stochastic inputs; residuals are path-mean absolute values of
    the signed path means.
    """
    levels = []
    for level in range(num_levels):
        result, dt, dx = build_case(level)
        res = float(np.abs(np.mean(result.residual)))
        norm = float(np.abs(np.mean(result.normalized)))
        levels.append({"level": level, "dt": dt, "dx": dx,
                       "residual": res, "normalized": norm})
    return IdentityReport(levels=levels)


# ---------------------------------------------------------------------------
# Weighted ratio study
# ---------------------------------------------------------------------------

@dataclass
class RatioStudy:
    rows: List[dict] = dc_field(default_factory=list)
    sample_rows: List[dict] = dc_field(default_factory=list)
    weight_mode: str = "coupled"
    violation: bool = False

    def csv_rows(self):
        header = ["lambda", "lhs_init", "lhs_force", "rhs_boundary", "ratio",
                  "stderr", "samples"]
        rows = [[r["lambda"], r["lhs_init"], r["lhs_force"], r["rhs_boundary"],
                 r["ratio"], r["stderr"], r["samples"]] for r in self.rows]
        return header, rows

    def max_ratios(self) -> np.ndarray:
        return np.array([r["max_ratio"] for r in self.rows])

    def z0_term_slope(self) -> float:
        lams = np.array([r["lambda"] for r in self.rows])
        vals = np.array([r["log_lhs_z0_term"] for r in self.rows])
        coef = np.polyfit(np.log(lams), vals, 1)
        return float(coef[0])


def _log_weighted_integral(log_w2: np.ndarray, dens: np.ndarray,
                           quad: np.ndarray) -> float:
    """log of int e^{log_w2} dens dquad, stable against weight overflow."""
    mask = dens > 0
    if not np.any(mask):
        return -np.inf
    shift = float(np.max(log_w2[mask]))
    total = float(np.sum(np.exp(log_w2[mask] - shift) * dens[mask] * quad[mask]))
    return shift + np.log(total) if total > 0 else -np.inf


def carleman_ratio(trajectories: PathEnsemble, params: CarlemanParams,
                   weight: WeightFunction, field: PrincipalField,
                   mesh: SpatialMesh, subset: BoundarySubset,
                   lambda_grid: Sequence[float], weight_mode: str = "coupled",
                   frozen_lambda: Optional[float] = None,
                   force_sq: Optional[np.ndarray] = None) -> RatioStudy:
    """Tabulate weighted left/right sides per lambda and per sample.

    ``weight_mode='coupled'`` evaluates the exponential weight at the swept
    lambda (the literal estimate; ratios then decay exponentially in lambda
    because the weight concentrates at t = T while the left side lives at
    t = 0).  ``weight_mode='frozen'`` pins the weight at ``frozen_lambda`` and
    sweeps only the polynomial prefactors, which isolates the cubic growth of
    the displacement term; both are reported by the experiment driver.

    ``force_sq`` optionally supplies per-sample g^2 values of shape
    (samples, K+1, N) for the forced term; reversed deterministic supplies
    use zero force.
    """
    if trajectories.paths == 0:
        raise EmptyStudyError("ratio study needs at least one trajectory")
    mach = WeightMachinery(weight, field, mesh)
    K = trajectories.num_steps
    dt = trajectories.dt
    t = np.arange(K + 1) * dt
    wx = trapezoid_weights(mesh)
    wt = time_trapezoid_weights(K + 1, dt)
    wb = boundary_quad_weights(mesh)
    positions = subset.member_positions()
    if positions.size == 0:
        raise EmptyStudyError("ratio study needs a nonempty observed boundary")
    S = trajectories.paths

    z0 = trajectories.z0
    z1 = trajectories.z1
    grad_z0 = gradient_centered(mesh, z0)
    z0_sq = z0 ** 2
    init_grad_sq = z1 ** 2 + np.sum(grad_z0 ** 2, axis=-1)
    trace_sq = trajectories.trace[:, :, positions] ** 2

    study = RatioStudy(weight_mode=weight_mode)
    for lam in lambda_grid:
        p_w = params.with_lambda(frozen_lambda if weight_mode == "frozen" and
                                 frozen_lambda is not None else lam)
        log_w2_t0 = 2.0 * mach.ell(p_w, 0.0)                     # (N,)
        log_w2 = 2.0 * mach.ell(p_w, t)                          # (K+1, N)
        log_w2_b = log_w2[:, mesh.boundary_indices[positions]]   # (K+1, |G0|)
        quad_b = wt[:, None] * wb[positions][None, :]
        ratios = np.empty(S)
        log_ratios = np.empty(S)
        lhs_inits = np.empty(S)
        lhs_forces = np.empty(S)
        rhs_vals = np.empty(S)
        log_z0_terms = np.empty(S)
        for s in range(S):
            log_grad_part = _log_weighted_integral(log_w2_t0, lam * init_grad_sq[s], wx)
            log_z0_part = _log_weighted_integral(log_w2_t0, lam ** 3 * z0_sq[s], wx)
            log_lhs_init = np.logaddexp(log_grad_part, log_z0_part)
            if force_sq is not None:
                dens = (params.T - t)[:, None] * force_sq[s]
                log_force = np.log(lam) + _log_weighted_integral(
                    log_w2, dens, wt[:, None] * wx[None, :])
            else:
                log_force = -np.inf
            log_lhs = np.logaddexp(log_lhs_init, log_force)
            log_rhs = np.log(lam) + _log_weighted_integral(log_w2_b, trace_sq[s], quad_b)
            lhs_inits[s] = np.exp(log_lhs_init)
            lhs_forces[s] = np.exp(log_force)
            rhs_vals[s] = np.exp(log_rhs)
            log_z0_terms[s] = log_z0_part
            if log_rhs == -np.inf:
                if log_lhs == -np.inf:
                    ratios[s] = 0.0   # 0/0: trivially consistent
                    log_ratios[s] = -np.inf
                else:
                    ratios[s] = np.inf
                    log_ratios[s] = np.inf
                    study.violation = True
            else:
                log_ratios[s] = log_lhs - log_rhs
                ratios[s] = np.exp(log_ratios[s])
            study.sample_rows.append({
                "lambda": float(lam), "sample": s,
                "log_lhs_init": float(log_lhs_init),
                "log_lhs_force": float(log_force),
                "log_rhs": float(log_rhs),
                "log_ratio": float(log_ratios[s]),
            })
        finite = np.isfinite(ratios)
        mean_ratio = float(np.mean(ratios[finite])) if np.any(finite) else np.inf
        stderr = (float(np.std(ratios[finite], ddof=1) / np.sqrt(np.sum(finite)))
                  if np.sum(finite) > 1 else 0.0)
        # log-sum-exp mean over samples for the z0 term's scaling diagnostic
        shift = np.max(log_z0_terms)
        log_z0_mean = (shift + np.log(np.mean(np.exp(log_z0_terms - shift)))
                       if np.isfinite(shift) else -np.inf)
        study.rows.append({
            "lambda": float(lam),
            "lhs_init": float(np.mean(lhs_inits)),
            "lhs_force": float(np.mean(lhs_forces)),
            "rhs_boundary": float(np.mean(rhs_vals)),
            "ratio": mean_ratio,
            "stderr": stderr,
            "samples": S,
            "max_ratio": float(np.max(ratios)),
            "max_log_ratio": float(np.max(log_ratios)),
            "log_lhs_z0_term": float(log_z0_mean),
        })
    return study


# ---------------------------------------------------------------------------
# Partial stability ratios
# ---------------------------------------------------------------------------

@dataclass
class StabilityStudy:
    rows: List[dict]

    def values(self) -> np.ndarray:
        return np.array([r["s"] for r in self.rows])

    def csv_rows(self):
        header = ["sample", "data_norm", "force_norm", "trace_norm", "s"]
        rows = [[r["sample"], r["data_norm"], r["force_norm"], r["trace_norm"], r["s"]]
                for r in self.rows]
        return header, rows


def stability_ratio(trajectories: PathEnsemble, mesh: SpatialMesh,
                    subset: BoundarySubset,
                    force_sq: Optional[np.ndarray] = None,
                    terminal_tol: Optional[float] = None) -> StabilityStudy:
    """s = (|(z0, z1)|_{H1_0 x L2} + |sqrt(T-t) g|) / trace norm on Gamma_0 for
    trajectories vanishing at T (reversed supplies, or post-selected forward
    paths when ``terminal_tol`` is given as a fraction of the max path norm)."""
    positions = subset.member_positions()
    wx = trapezoid_weights(mesh)
    wt = time_trapezoid_weights(trajectories.num_steps + 1, trajectories.dt)
    t = trajectories.times

    keep = np.arange(trajectories.paths)
    if terminal_tol is not None:
        term = trajectories.terminal_displacement()
        term_norm = np.sqrt(np.einsum("pn,n->p", term ** 2, wx))
        scale = np.max(np.abs(trajectories.z), axis=(1, 2))
        keep = np.flatnonzero(term_norm <= terminal_tol * np.maximum(scale, 1e-300))
        if keep.size == 0:
            raise EmptyStudyError("no trajectory satisfies the terminal tolerance")

    trace_sq = trace_sq_time_integral(trajectories, positions)
    grad_z0 = gradient_centered(mesh, trajectories.z0)
    data_norm = np.sqrt(np.einsum("pn,n->p", trajectories.z1 ** 2
                                  + np.sum(grad_z0 ** 2, axis=-1), wx))
    rows = []
    for s_idx in keep:
        if force_sq is not None:
            dens = (trajectories.T - t)[:, None] * force_sq[s_idx]
            force_norm = float(np.sqrt(np.einsum("kn,k,n->", dens, wt, wx)))
        else:
            force_norm = 0.0
        num = float(data_norm[s_idx]) + force_norm
        den = float(np.sqrt(trace_sq[s_idx]))
        if num == 0.0 and den == 0.0:
            continue
        if den == 0.0:
            raise UndefinedRatioError("stability ratio undefined: zero trace norm "
                                      "with nonzero data")
        rows.append({"sample": int(s_idx), "data_norm": float(data_norm[s_idx]),
                     "force_norm": force_norm, "trace_norm": den, "s": num / den})
    if not rows:
        raise EmptyStudyError("stability study has no admissible samples")
    return StabilityStudy(rows=rows)


def weighted_trace_sq_integral(trajectories: PathEnsemble, mesh: SpatialMesh,
                               subset: BoundarySubset, params: CarlemanParams,
                               lam: Optional[float] = None,
                               machinery: Optional[WeightMachinery] = None,
                               weight: Optional[WeightFunction] = None,
                               field: Optional[PrincipalField] = None) -> np.ndarray:
    """Per-path int theta^2 |dz/dnu|^2 over the observed boundary.

    ``lam`` overrides the weight strength; at lam = 0 the weight is one and the
    result reduces to the solver's unweighted trace integral (same quadrature).
    """
    mach = machinery or WeightMachinery(weight, field, mesh)
    positions = subset.member_positions()
    t = trajectories.times
    wt = time_trapezoid_weights(trajectories.num_steps + 1, trajectories.dt)
    wb = boundary_quad_weights(mesh)[positions]
    strength = params.lam if lam is None else float(lam)
    quad = params.c1 * (t - params.T) ** 2
    ell = strength * (mach.d[None, :] - quad[:, None])
    theta2 = np.exp(2.0 * ell)[:, mesh.boundary_indices[positions]]
    trace_sq = trajectories.trace[:, :, positions] ** 2
    return np.einsum("pkb,kb,k,b->p", trace_sq, theta2, wt, wb)
