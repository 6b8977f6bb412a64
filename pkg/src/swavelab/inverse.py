"""Recovery of (z0, z1, g2) from boundary slope and terminal displacement
observations, uniqueness probes, and the deterministic counterexample.

The observation map is the forward simulation with frozen Brownian increments;
for fixed increments it is linear in the unknowns.  The least-squares normal
equations are solved by conjugate gradients with the adjoint realized as the
exact discrete transpose of the time-stepping recursion (reverse sweep over
the stored noise), so the inner-product identity holds to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ConstructionError, DataError
from .fields import bump_profile
from .geometry import BoundarySubset, SpatialMesh
from .numerics import (DivergenceFormOperator, boundary_normal_derivative,
                       boundary_quad_weights, interior_gradient,
                       interior_gradient_transpose, time_trapezoid_weights,
                       trapezoid_weights)
from .spde import (CoefficientSet, SeparableForce, WaveStepper,
                   path_increments, simulate_forward, solve_deterministic)


# ---------------------------------------------------------------------------
# Observation record
# ---------------------------------------------------------------------------

@dataclass
class ObservationRecord:
    """Per-path boundary slope series on the observed portion plus the
    terminal displacement field."""

    traces: np.ndarray          # (P, K+1, nb)
    terminal: np.ndarray        # (P, N)
    positions: np.ndarray       # boundary positions (into mesh.boundary_indices)
    seed: Optional[int]
    dt: float
    T: float

    @property
    def paths(self) -> int:
        return self.traces.shape[0]

    def scaled(self, factor: float) -> "ObservationRecord":
        return ObservationRecord(traces=self.traces * factor,
                                 terminal=self.terminal * factor,
                                 positions=self.positions, seed=self.seed,
                                 dt=self.dt, T=self.T)


def forward_observation_map(z0, z1, g2, g1, coeffs: CoefficientSet,
                            mesh: SpatialMesh, subset: BoundarySubset,
                            T: float, dt: float, paths: int,
                            seed: int) -> ObservationRecord:
    """Simulate with the separable force (g1 known, g2 unknown-candidate) and
    extract the observation pair."""
    forced = CoefficientSet(principal=coeffs.principal, b1=coeffs.b1, b2=coeffs.b2,
                            b3=coeffs.b3, b4=coeffs.b4,
                            force=SeparableForce(g1=g1, g2=np.asarray(g2, dtype=float)))
    ens = simulate_forward(forced, z0, z1, mesh, T, dt, paths, seed)
    positions = subset.member_positions()
    return ObservationRecord(traces=ens.trace[:, :, positions].copy(),
                             terminal=ens.terminal_displacement().copy(),
                             positions=positions, seed=seed, dt=dt, T=T)


# ---------------------------------------------------------------------------
# Linear observation operator with exact transpose
# ---------------------------------------------------------------------------

def _trace_stencil(mesh: SpatialMesh, positions: np.ndarray):
    """(nb, 3) node indices marching inward and the shared one-sided weights."""
    idx = np.empty((positions.size, 3), dtype=int)
    coef = np.empty((positions.size, 3))
    for row, pos in enumerate(positions):
        axis = int(mesh.boundary_axis[pos])
        sign = mesh.boundary_normals[pos, axis]
        h = mesh.spacing[axis]
        multi = list(np.unravel_index(int(mesh.boundary_indices[pos]), mesh.shape))
        step = 1 if sign < 0 else -1
        for j in range(3):
            m = list(multi)
            m[axis] += step * j
            idx[row, j] = np.ravel_multi_index(m, mesh.shape)
        coef[row] = np.array([3.0, -4.0, 1.0]) / (2.0 * h)
    return idx, coef


class ObservationOperator:
    """Matrix-free linear map (z0, z1, g2) -> (traces, terminal) for frozen
    increments, with its exact discrete transpose.

    Unknowns live on interior nodes (boundary values of the data vanish and
    boundary values of g2 never enter the dynamics).
    """

    def __init__(self, coeffs: CoefficientSet, mesh: SpatialMesh,
                 subset: BoundarySubset, g1, T: float, dt: float,
                 paths: int, seed: int):
        if coeffs.force is not None:
            raise ConfigurationError("pass base coefficients without a force",
                                     field="coefficients.force")
        self.mesh = mesh
        self.T = float(T)
        self.dt = float(dt)
        self.stepper = WaveStepper(mesh, coeffs, dt, int(round(T / dt)))
        self.K = self.stepper.num_steps
        self.paths = paths
        self.seed = seed
        self.increments = np.stack([path_increments(seed, p, self.K, dt)
                                    for p in range(paths)])
        self.g1 = SeparableForce(g1=g1, g2=np.zeros(1)).g1_values(paths, self.K, dt)
        self.positions = subset.member_positions()
        self.trace_idx, self.trace_coef = _trace_stencil(mesh, self.positions)
        self.interior = np.flatnonzero(mesh.interior_mask)
        self.m = self.interior.size
        self.boundary = mesh.boundary_indices
        self.wt = time_trapezoid_weights(self.K + 1, dt)
        self.wb = boundary_quad_weights(mesh)[self.positions]
        self.wx = trapezoid_weights(mesh)
        cell = float(np.prod(mesh.spacing))
        self.cell = cell
        self._w_operator = DivergenceFormOperator(
            mesh, np.broadcast_to(np.eye(mesh.dim),
                                  (mesh.num_nodes, mesh.dim, mesh.dim)).copy())

    # -- packing ---------------------------------------------------------------

    def pack(self, z0, z1, g2) -> np.ndarray:
        return np.concatenate([np.asarray(z0)[self.interior],
                               np.asarray(z1)[self.interior],
                               np.asarray(g2)[self.interior]])

    def unpack(self, u_vec: np.ndarray):
        m = self.m
        out = []
        for j in range(3):
            full = np.zeros(self.mesh.num_nodes)
            full[self.interior] = u_vec[j * m:(j + 1) * m]
            out.append(full)
        return out

    # -- forward / transpose -----------------------------------------------------

    def _project(self, arr: np.ndarray) -> np.ndarray:
        arr[..., self.boundary] = 0.0
        return arr

    def _trace(self, u: np.ndarray) -> np.ndarray:
        return np.einsum("pbs,bs->pb", u[:, self.trace_idx], self.trace_coef)

    def _trace_scatter(self, lam_u: np.ndarray, w: np.ndarray) -> None:
        np.add.at(lam_u, (slice(None),) + (self.trace_idx,),
                  w[:, :, None] * self.trace_coef[None])

    def forward(self, u_vec: np.ndarray):
        z0, z1, g2 = self.unpack(u_vec)
        st = self.stepper
        P, K = self.paths, self.K
        u = np.broadcast_to(z0, (P, self.mesh.num_nodes)).copy()
        v = np.broadcast_to(z1, (P, self.mesh.num_nodes)).copy()
        traces = np.empty((P, K + 1, self.positions.size))
        traces[:, 0] = self._trace(u)
        for k in range(K):
            amp = self.g1[:, k][:, None] * g2[None, :]
            if st.b4 is not None:
                amp = amp + st.b4[k] * u
            self._project(amp)
            stoch = self.increments[:, k][:, None] * amp
            u, v = st.step(k, u, v, stoch)
            traces[:, k + 1] = self._trace(u)
        return traces, u.copy()

    def transpose(self, w_traces: np.ndarray, w_terminal: np.ndarray) -> np.ndarray:
        """Exact transpose of ``forward``: reverse sweep over the recursion."""
        st = self.stepper
        P, K, dt = self.paths, self.K, self.dt
        e = 0.5 * dt
        c = 0.5 * dt * dt
        lam_u = w_terminal.copy()
        self._project(lam_u)
        lam_v = np.zeros_like(lam_u)
        self._trace_scatter(lam_u, w_traces[:, K])
        self._project(lam_u)
        g2_bar = np.zeros(self.mesh.num_nodes)

        def accel_T(k, xi):
            out = st.L(xi)
            if st.b3 is not None:
                out = out + st.b3[k] * xi
            if st.b2 is not None:
                out = out + interior_gradient_transpose(
                    self.mesh, st.b2[k][None] * xi[..., None])
            return self._project(out)

        for k in range(K - 1, -1, -1):
            lam_u1, lam_v1 = lam_u, lam_v
            # a1 consumed (u1, v*)
            lam_a1 = e * lam_v1
            lam_u1 = lam_u1 + accel_T(k + 1, lam_a1)
            lam_vst = (st.b1[k + 1] * lam_a1) if st.b1 is not None else None
            # v1 = v + e a0 + e a1 + dB (g1 g2 + b4 u)
            lam_v = lam_v1.copy()
            lam_a0 = e * lam_v1.copy()
            noise_w = self.increments[:, k][:, None] * lam_v1
            g2_bar[self.interior] += np.einsum(
                "p,pn->n", self.g1[:, k], noise_w[:, self.interior])
            lam_u_noise = (st.b4[k] * noise_w) if st.b4 is not None else None
            # v* = v + dt a0
            if lam_vst is not None:
                lam_v += lam_vst
                lam_a0 += dt * lam_vst
            # u1 = u + dt v + c a0
            lam_u = lam_u1.copy()
            if lam_u_noise is not None:
                lam_u += lam_u_noise
                self._project(lam_u)
            lam_v += dt * lam_u1
            lam_a0 += c * lam_u1
            # a0 = A_k u + diag(b1_k) v
            lam_u += accel_T(k, lam_a0)
            if st.b1 is not None:
                lam_v += st.b1[k] * lam_a0
            self._trace_scatter(lam_u, w_traces[:, k])
            self._project(lam_u)
            self._project(lam_v)

        z0_bar = np.sum(lam_u, axis=0)
        z1_bar = np.sum(lam_v, axis=0)
        return self.pack(z0_bar, z1_bar, g2_bar)

    # -- inner products ----------------------------------------------------------

    def weight_observation(self, traces: np.ndarray, terminal: np.ndarray):
        wt_tr = traces * self.wt[None, :, None] * self.wb[None, None, :]
        wt_term = terminal * self.wx[None, :]
        return wt_tr, wt_term

    def obs_inner(self, a_traces, a_term, b_traces, b_term) -> float:
        wt_tr, wt_term = self.weight_observation(b_traces, b_term)
        return float(np.sum(a_traces * wt_tr) + np.sum(a_term * wt_term))

    def apply_W(self, u_vec: np.ndarray) -> np.ndarray:
        """Tikhonov operator for the H1_0 x L2 x L2 product norm."""
        z0, z1, g2 = self.unpack(u_vec)
        stiff = -self.cell * self._w_operator(z0)
        return self.pack(stiff, self.cell * z1, self.cell * g2)

    def tikhonov_norm(self, u_vec: np.ndarray) -> float:
        return float(np.sqrt(np.dot(u_vec, self.apply_W(u_vec))))

    def adjoint_discrepancy(self, rng: np.random.Generator) -> float:
        """Relative error of <F u, w>_Y vs <u, F^T Y w> on one random pair."""
        u = rng.standard_normal(3 * self.m)
        w_tr = rng.standard_normal((self.paths, self.K + 1, self.positions.size))
        w_term = rng.standard_normal((self.paths, self.mesh.num_nodes))
        f_tr, f_term = self.forward(u)
        lhs = self.obs_inner(f_tr, f_term, w_tr, w_term)
        yw_tr, yw_term = self.weight_observation(w_tr, w_term)
        rhs = float(np.dot(u, self.transpose(yw_tr, yw_term)))
        scale = max(abs(lhs), abs(rhs), 1e-300)
        return abs(lhs - rhs) / scale


# ---------------------------------------------------------------------------
# Reconstruction
# ---------------------------------------------------------------------------

@dataclass
class ReconstructionResult:
    z0_hat: np.ndarray
    z1_hat: np.ndarray
    g2_hat: np.ndarray
    eps: float
    misfit: float
    normal_residual: float
    initial_residual: float
    iterations: int
    converged: bool
    estimate_norm: float
    relative_errors: Optional[dict] = None

    def summary(self) -> dict:
        out = {"eps": self.eps, "misfit": self.misfit,
               "normal_residual": self.normal_residual,
               "initial_residual": self.initial_residual,
               "iterations": self.iterations, "converged": self.converged,
               "estimate_norm": self.estimate_norm}
        if self.relative_errors is not None:
            out["relative_errors"] = self.relative_errors
        return out


def reconstruct(obs: ObservationRecord, g1, coeffs: CoefficientSet,
                mesh: SpatialMesh, subset: BoundarySubset, eps: float,
                tol: float = 1e-9, max_iter: int = 500,
                ground_truth: Optional[tuple] = None,
                seed: Optional[int] = None,
                operator: Optional[ObservationOperator] = None) -> ReconstructionResult:
    """Conjugate-gradient solve of the regularized normal equations.

    By default the frozen-noise increments of the observation record are
    reused (the acknowledged inverse crime); passing a different ``seed``
    re-draws the noise for the blind mode.
    """
    if eps <= 0:
        raise ConfigurationError("regularization eps must be positive", field="eps")
    op = operator or ObservationOperator(
        coeffs, mesh, subset, g1, obs.T, obs.dt, obs.paths,
        obs.seed if seed is None else seed)

    def normal_apply(u_vec):
        f_tr, f_term = op.forward(u_vec)
        yw_tr, yw_term = op.weight_observation(f_tr, f_term)
        return op.transpose(yw_tr, yw_term) + eps * op.apply_W(u_vec)

    yw_tr, yw_term = op.weight_observation(obs.traces, obs.terminal)
    rhs = op.transpose(yw_tr, yw_term)
    rhs_norm = float(np.linalg.norm(rhs))

    x = np.zeros_like(rhs)
    iterations = 0
    converged = True
    if rhs_norm > 0.0:
        r = rhs.copy()
        p = r.copy()
        rs = float(np.dot(r, r))
        converged = False
        for iterations in range(1, max_iter + 1):
            Ap = normal_apply(p)
            alpha = rs / float(np.dot(p, Ap))
            x += alpha * p
            r -= alpha * Ap
            rs_new = float(np.dot(r, r))
            if np.sqrt(rs_new) <= tol * rhs_norm:
                converged = True
                break
            p = r + (rs_new / rs) * p
            rs = rs_new
        normal_residual = float(np.linalg.norm(rhs - normal_apply(x)))
    else:
        normal_residual = 0.0

    z0_hat, z1_hat, g2_hat = op.unpack(x)
    f_tr, f_term = op.forward(x)
    misfit = 0.5 * op.obs_inner(f_tr - obs.traces, f_term - obs.terminal,
                                f_tr - obs.traces, f_term - obs.terminal)
    result = ReconstructionResult(
        z0_hat=z0_hat, z1_hat=z1_hat, g2_hat=g2_hat, eps=eps, misfit=misfit,
        normal_residual=normal_residual, initial_residual=rhs_norm,
        iterations=iterations, converged=converged,
        estimate_norm=op.tikhonov_norm(x))
    if ground_truth is not None:
        result.relative_errors = _relative_errors(mesh, op,
                                                  (z0_hat, z1_hat, g2_hat),
                                                  ground_truth)
    return result


def _relative_errors(mesh, op, estimates, truth) -> dict:
    wx = trapezoid_weights(mesh)

    def l2(f):
        return float(np.sqrt(np.sum(wx * np.asarray(f) ** 2)))

    names = ["z0", "z1", "g2"]
    truth_full = []
    for t in truth:
        full = np.asarray(t, dtype=float).copy()
        full[mesh.boundary_indices] = 0.0
        truth_full.append(full)
    norms = [l2(t) for t in truth_full]
    fallback = max(norms) if max(norms) > 0 else 1.0
    out = {}
    for name, est, tru, nrm in zip(names, estimates, truth_full, norms):
        denom = nrm if nrm > 0 else fallback
        out[name] = l2(est - tru) / denom
    return out


# ---------------------------------------------------------------------------
# Uniqueness probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UniquenessReport:
    deltas: list
    estimate_norms: list
    slope: Optional[float]
    zero_case_exact: bool

    def as_dict(self) -> dict:
        return {"deltas": self.deltas, "estimate_norms": self.estimate_norms,
                "slope": self.slope, "zero_case_exact": self.zero_case_exact}


def uniqueness_probe(base_obs: ObservationRecord, g1, coeffs: CoefficientSet,
                     mesh: SpatialMesh, subset: BoundarySubset,
                     deltas, eps: float, tol: float = 1e-10,
                     max_iter: int = 400) -> UniquenessReport:
    """Scale a reference observation to magnitude delta and reconstruct.

    The estimate norm must scale linearly with delta at fixed eps (the map is
    linear), and exactly zero observations return exactly zero estimates.
    """
    op = ObservationOperator(coeffs, mesh, subset, g1, base_obs.T, base_obs.dt,
                             base_obs.paths, base_obs.seed)
    base_norm = np.sqrt(op.obs_inner(base_obs.traces, base_obs.terminal,
                                     base_obs.traces, base_obs.terminal))
    if base_norm == 0:
        raise DataError("uniqueness probe needs a nonzero reference observation")

    norms = []
    for delta in deltas:
        scaled = base_obs.scaled(float(delta) / base_norm)
        res = reconstruct(scaled, g1, coeffs, mesh, subset, eps, tol=tol,
                          max_iter=max_iter, operator=op)
        norms.append(res.estimate_norm)

    zero_obs = base_obs.scaled(0.0)
    zero_res = reconstruct(zero_obs, g1, coeffs, mesh, subset, eps, tol=tol,
                           max_iter=max_iter, operator=op)
    zero_exact = (float(np.max(np.abs(zero_res.z0_hat))) == 0.0
                  and float(np.max(np.abs(zero_res.z1_hat))) == 0.0
                  and float(np.max(np.abs(zero_res.g2_hat))) == 0.0)

    slope = None
    deltas_arr = np.asarray(list(deltas), dtype=float)
    norms_arr = np.asarray(norms)
    if np.all(norms_arr > 0) and deltas_arr.size >= 2:
        slope = float(np.polyfit(np.log(deltas_arr), np.log(norms_arr), 1)[0])
    return UniquenessReport(deltas=[float(d) for d in deltas],
                            estimate_norms=[float(v) for v in norms],
                            slope=slope, zero_case_exact=zero_exact)


# ---------------------------------------------------------------------------
# Deterministic counterexample
# ---------------------------------------------------------------------------

@dataclass
class CounterexampleResult:
    y: np.ndarray
    f: np.ndarray
    dt: float
    T: float
    trace_norm: float
    terminal_norm: float
    initial_norm: float
    initial_velocity_norm: float
    f_norm: float
    y_scale: float

    def as_dict(self) -> dict:
        return {"trace_norm": self.trace_norm, "terminal_norm": self.terminal_norm,
                "initial_norm": self.initial_norm,
                "initial_velocity_norm": self.initial_velocity_norm,
                "f_norm": self.f_norm, "y_scale": self.y_scale,
                "dt": self.dt, "T": self.T}


def deterministic_counterexample(mesh: SpatialMesh, coeffs: CoefficientSet,
                                 T: float, dt: float,
                                 t_center: Optional[float] = None,
                                 t_radius: Optional[float] = None,
                                 x_center=None, x_radius=None,
                                 amplitude: float = 1.0) -> CounterexampleResult:
    """Compactly supported bump y and the drift source f it solves with zero
    data: the boundary slope and all endpoint norms vanish exactly while f
    does not, so drift sources are not determined by this data.

    Defaults put the support in (T/4, 3T/4) times the domain shrunk by 25%.
    ``f`` is assembled with the same discrete operator the solver uses, so a
    forward solve forced by f reproduces y.
    """
    K = int(round(T / dt))
    if abs(K * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigurationError("dt must divide T", field="dt")
    if t_center is None:
        t_center = 0.5 * T
    if t_radius is None:
        t_radius = 0.25 * T
    extent = mesh.hi - mesh.lo
    if x_center is None:
        x_center = 0.5 * (mesh.lo + mesh.hi)
    if x_radius is None:
        x_radius = 0.375 * extent

    x_center = np.atleast_1d(np.asarray(x_center, dtype=float))
    x_radius = np.atleast_1d(np.asarray(x_radius, dtype=float))
    if t_center - t_radius < 2 * dt or t_center + t_radius > T - 2 * dt:
        raise ConstructionError("bump support too close to the time endpoints")
    for a in range(mesh.dim):
        if (x_center[a] - x_radius[a] < mesh.lo[a] + 2 * mesh.spacing[a]
                or x_center[a] + x_radius[a] > mesh.hi[a] - 2 * mesh.spacing[a]):
            raise ConstructionError("bump support too close to the boundary")

    space = bump_profile(x_center, x_radius, amplitude)
    time_bump = bump_profile([t_center], [t_radius])
    t = np.arange(K + 1) * dt
    ht = time_bump(t[:, None])
    phi = space(mesh.nodes)
    y = ht[:, None] * phi[None, :]

    L = DivergenceFormOperator(mesh, coeffs.principal.values)
    f = np.zeros_like(y)
    f[1:-1] = (y[2:] - 2 * y[1:-1] + y[:-2]) / dt ** 2 - L(y[1:-1])

    wx = trapezoid_weights(mesh)
    wt = time_trapezoid_weights(K + 1, dt)
    wb = boundary_quad_weights(mesh)
    trace = boundary_normal_derivative(mesh, y)
    trace_norm = float(np.sqrt(np.einsum("kb,k,b->", trace ** 2, wt, wb)))
    l2 = lambda fvals: float(np.sqrt(np.sum(wx * fvals ** 2)))
    f_norm = float(np.sqrt(np.einsum("kn,k,n->", f ** 2, wt, wx)))
    y_scale = float(np.sqrt(np.einsum("kn,k,n->", y ** 2, wt, wx)))
    return CounterexampleResult(
        y=y, f=f, dt=dt, T=T, trace_norm=trace_norm,
        terminal_norm=l2(y[-1]), initial_norm=l2(y[0]),
        initial_velocity_norm=l2((y[1] - y[0]) / dt),
        f_norm=f_norm, y_scale=y_scale)


def counterexample_forward_check(result: CounterexampleResult, mesh: SpatialMesh,
                                 coeffs: CoefficientSet) -> float:
    """Relative L2(Q) error of the forward solve driven by f against y."""
    ens = solve_deterministic(coeffs, np.zeros(mesh.num_nodes),
                              np.zeros(mesh.num_nodes), mesh, result.T, result.dt,
                              drift_force=result.f)
    wt = time_trapezoid_weights(result.y.shape[0], result.dt)
    wx = trapezoid_weights(mesh)
    diff = ens.z[0] - result.y
    err = float(np.sqrt(np.einsum("kn,k,n->", diff ** 2, wt, wx)))
    return err / max(result.y_scale, 1e-300)
