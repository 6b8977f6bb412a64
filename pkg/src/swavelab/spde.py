"""Forward simulation of the stochastic wave system over path ensembles,
deterministic time-reversed solves, boundary traces, and the hidden-regularity
check.

Time stepping: explicit velocity-form leapfrog for the wave part with the
stochastic increment injected into z_t at the left endpoint of each step
(Ito convention).  The spatial operator is the symmetric flux-form divergence
discretization with Dirichlet rows pinned to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional, Union

import numpy as np

from .errors import (ConfigurationError, DataError, UndefinedRatioError,
                     UnsupportedModeError)
from .fields import PrincipalField, SpatialProfile, TimeSpaceField, zero_field
from .geometry import BoundarySubset, SpatialMesh
from .numerics import (DivergenceFormOperator, boundary_normal_derivative,
                       boundary_quad_weights, h10_l2_norm, interior_gradient,
                       l2_norm, time_trapezoid_weights, trapezoid_weights,
                       wave_energy)

BOUNDARY_DATA_TOL = 1e-12


# ---------------------------------------------------------------------------
# Force specifications
# ---------------------------------------------------------------------------

@dataclass
class SeparableForce:
    """g(t, x, path) = g1(t, path) * g2(x): known temporal factor, spatial field."""

    g1: Union[float, callable, np.ndarray]
    g2: Union[np.ndarray, SpatialProfile]

    def g2_values(self, mesh: SpatialMesh) -> np.ndarray:
        if isinstance(self.g2, SpatialProfile):
            return self.g2(mesh.nodes)
        return np.asarray(self.g2, dtype=float)

    def g1_values(self, paths: int, steps: int, dt: float) -> np.ndarray:
        """Resolve g1 at left endpoints t_k, k = 0..steps-1, shape (paths, steps)."""
        g1 = self.g1
        if callable(g1):
            t = np.arange(steps) * dt
            row = np.array([float(g1(tk)) for tk in t])
            return np.broadcast_to(row, (paths, steps)).copy()
        arr = np.atleast_1d(np.asarray(g1, dtype=float))
        if arr.ndim == 1 and arr.size == 1:
            return np.full((paths, steps), arr[0])
        if arr.ndim == 1:
            if arr.size != steps:
                raise ConfigurationError("g1 series length does not match step count",
                                         field="force.g1")
            return np.broadcast_to(arr, (paths, steps)).copy()
        if arr.shape != (paths, steps):
            raise ConfigurationError("per-path g1 must have shape (paths, steps)",
                                     field="force.g1")
        return arr.copy()


@dataclass
class TabulatedForce:
    """Deterministic g(t, x); still multiplies the Brownian increment."""

    values: Union[callable, np.ndarray]

    def at_steps(self, mesh: SpatialMesh, steps: int, dt: float) -> np.ndarray:
        if callable(self.values):
            return np.stack([np.asarray(self.values(k * dt, mesh.nodes), dtype=float)
                             for k in range(steps)])
        arr = np.asarray(self.values, dtype=float)
        if arr.shape[0] < steps:
            raise ConfigurationError("tabulated force has too few time levels",
                                     field="force.values")
        return arr[:steps]


# ---------------------------------------------------------------------------
# Coefficient set
# ---------------------------------------------------------------------------

@dataclass
class CoefficientSet:
    """Principal matrix plus lower-order couplings and the noise force."""

    principal: PrincipalField
    b1: TimeSpaceField = dc_field(default_factory=zero_field)
    b2: TimeSpaceField = dc_field(default_factory=lambda: zero_field(vector=True))
    b3: TimeSpaceField = dc_field(default_factory=zero_field)
    b4: TimeSpaceField = dc_field(default_factory=zero_field)
    force: Optional[Union[SeparableForce, TabulatedForce]] = None

    def __post_init__(self):
        if not self.b2.vector:
            raise ConfigurationError("b2 must be a vector field", field="coefficients.b2")

    def is_deterministic(self) -> bool:
        return self.b4.is_zero() and self.force is None

    def has_velocity_coupling(self) -> bool:
        return not self.b1.is_zero()


def compute_A_norm(coeffs: CoefficientSet, mesh: SpatialMesh,
                   times: np.ndarray) -> float:
    """Squared sup norms of the lower-order coefficients plus one.

    The b3 entry uses the spatial L^n norm with n the mesh dimension (L^1 in
    1D), supremized over the sampled times.
    """
    w = trapezoid_weights(mesh)
    n = mesh.dim

    def sup_scalar(field: TimeSpaceField) -> float:
        if field.sup_norm is not None:
            return field.sup_norm
        return max(float(np.max(np.abs(field(t, mesh.nodes)))) for t in times)

    def sup_vector(field: TimeSpaceField) -> float:
        if field.sup_norm is not None:
            return field.sup_norm
        return max(float(np.max(np.linalg.norm(field(t, mesh.nodes), axis=1)))
                   for t in times)

    def sup_ln(field: TimeSpaceField) -> float:
        if field.is_zero():
            return 0.0
        vals = [float(np.sum(w * np.abs(field(t, mesh.nodes)) ** n) ** (1.0 / n))
                for t in times]
        return max(vals)

    return (sup_scalar(coeffs.b1) ** 2 + sup_vector(coeffs.b2) ** 2
            + sup_ln(coeffs.b3) ** 2 + sup_scalar(coeffs.b4) ** 2 + 1.0)


# ---------------------------------------------------------------------------
# Stepper
# ---------------------------------------------------------------------------

class WaveStepper:
    """Precomputed per-level coefficients and the leapfrog step.

    All state arrays are full-grid with boundary entries identically zero;
    every operator output is projected back onto that subspace.
    """

    def __init__(self, mesh: SpatialMesh, coeffs: CoefficientSet, dt: float,
                 num_steps: int, drift_force: Optional[np.ndarray] = None,
                 cfl_factor: float = 0.5):
        self.mesh = mesh
        self.coeffs = coeffs
        self.dt = float(dt)
        self.num_steps = int(num_steps)
        self.L = DivergenceFormOperator(mesh, coeffs.principal.values)
        bound = self.L.cfl_dt(cfl_factor)
        if self.dt > bound * (1 + 1e-12):
            raise ConfigurationError(
                f"time step {dt:.6g} violates the CFL bound {bound:.6g}", field="dt")
        times = np.arange(num_steps + 1) * self.dt
        self.times = times
        X = mesh.nodes
        self.b1 = None if coeffs.b1.is_zero() else np.stack([coeffs.b1(t, X) for t in times])
        self.b2 = None if coeffs.b2.is_zero() else np.stack([coeffs.b2(t, X) for t in times])
        self.b3 = None if coeffs.b3.is_zero() else np.stack([coeffs.b3(t, X) for t in times])
        self.b4 = None if coeffs.b4.is_zero() else np.stack([coeffs.b4(t, X) for t in times])
        if drift_force is not None:
            drift_force = np.asarray(drift_force, dtype=float).copy()
            drift_force[..., mesh.boundary_indices] = 0.0
        self.drift_force = drift_force

    def accel(self, k: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        a = self.L(u)
        if self.b1 is not None:
            a = a + self.b1[k] * v
        if self.b2 is not None:
            grad = interior_gradient(self.mesh, u)
            a = a + np.einsum("...ni,ni->...n", grad, self.b2[k])
        if self.b3 is not None:
            a = a + self.b3[k] * u
        if self.drift_force is not None:
            a = a + self.drift_force[k]
        return a

    def step(self, k: int, u: np.ndarray, v: np.ndarray,
             stochastic: Optional[np.ndarray] = None):
        dt = self.dt
        a0 = self.accel(k, u, v)
        u1 = u + dt * v + 0.5 * dt * dt * a0
        vstar = v + dt * a0
        a1 = self.accel(k + 1, u1, vstar)
        v1 = v + 0.5 * dt * (a0 + a1)
        if stochastic is not None:
            v1 = v1 + stochastic
        return u1, v1


# ---------------------------------------------------------------------------
# Path ensemble container
# ---------------------------------------------------------------------------

@dataclass
class PathEnsemble:
    """Trajectories, boundary traces, and increments for a batch of paths.

    Deterministic batches (reversed solves, manufactured checks) reuse the
    container with ``increments=None``.
    """

    mesh: SpatialMesh
    dt: float
    T: float
    num_steps: int
    seed: Optional[int]
    z: np.ndarray
    z_t: np.ndarray
    trace: np.ndarray
    increments: Optional[np.ndarray]
    z0: np.ndarray
    z1: np.ndarray

    @property
    def paths(self) -> int:
        return self.z.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.num_steps + 1) * self.dt

    def terminal_displacement(self) -> np.ndarray:
        return self.z[:, -1, :]

    def terminal_velocity(self) -> np.ndarray:
        return self.z_t[:, -1, :]


def _validate_initial(mesh: SpatialMesh, data: np.ndarray, name: str) -> np.ndarray:
    data = np.asarray(data, dtype=float)
    scale = max(1.0, float(np.max(np.abs(data))) if data.size else 1.0)
    bvals = data[..., mesh.boundary_indices]
    if np.max(np.abs(bvals)) > BOUNDARY_DATA_TOL * scale:
        raise DataError(f"{name} does not vanish at boundary nodes")
    data = data.copy()
    data[..., mesh.boundary_indices] = 0.0
    return data


def _resolve_steps(T: float, dt: float) -> int:
    K = int(round(T / dt))
    if K < 1 or abs(K * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigurationError("dt must divide the horizon T", field="dt")
    return K


def path_increments(seed: int, path_index: int, num_steps: int, dt: float) -> np.ndarray:
    """Brownian increments for one path; fully determined by (seed, path)."""
    rng = np.random.default_rng([int(seed), int(path_index)])
    return rng.normal(0.0, np.sqrt(dt), size=num_steps)


def simulate_forward(coeffs: CoefficientSet, z0, z1, mesh: SpatialMesh,
                     T: float, dt: float, paths: int, seed: int,
                     threads: int = 1) -> PathEnsemble:
    """Advance the stochastic system for a Monte Carlo batch of paths."""
    K = _resolve_steps(T, dt)
    z0 = _validate_initial(mesh, np.broadcast_to(z0, (mesh.num_nodes,)), "z0")
    z1 = _validate_initial(mesh, np.broadcast_to(z1, (mesh.num_nodes,)), "z1")
    increments = np.stack([path_increments(seed, p, K, dt) for p in range(paths)])

    stepper = WaveStepper(mesh, coeffs, dt, K)
    g1 = g2 = gdet = None
    if isinstance(coeffs.force, SeparableForce):
        g1 = coeffs.force.g1_values(paths, K, dt)
        g2 = coeffs.force.g2_values(mesh)
    elif isinstance(coeffs.force, TabulatedForce):
        gdet = coeffs.force.at_steps(mesh, K, dt)

    def run_block(p_slice):
        P = p_slice.stop - p_slice.start
        u = np.broadcast_to(z0, (P, mesh.num_nodes)).copy()
        v = np.broadcast_to(z1, (P, mesh.num_nodes)).copy()
        zs = np.empty((P, K + 1, mesh.num_nodes))
        vs = np.empty_like(zs)
        zs[:, 0] = u
        vs[:, 0] = v
        dB = increments[p_slice]
        for k in range(K):
            stoch = None
            if g2 is not None or gdet is not None or stepper.b4 is not None:
                amp = np.zeros((P, mesh.num_nodes))
                if stepper.b4 is not None:
                    amp += stepper.b4[k] * u
                if g2 is not None:
                    amp += g1[p_slice, k][:, None] * g2
                if gdet is not None:
                    amp += gdet[k]
                amp[:, mesh.boundary_indices] = 0.0
                stoch = dB[:, k][:, None] * amp
            u, v = stepper.step(k, u, v, stoch)
            zs[:, k + 1] = u
            vs[:, k + 1] = v
        return zs, vs

    if threads > 1 and paths > 1:
        from concurrent.futures import ThreadPoolExecutor
        bounds = np.linspace(0, paths, min(threads, paths) + 1).astype(int)
        slices = [slice(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)
                  if bounds[i + 1] > bounds[i]]
        with ThreadPoolExecutor(max_workers=len(slices)) as pool:
            blocks = list(pool.map(run_block, slices))
        z = np.concatenate([b[0] for b in blocks])
        z_t = np.concatenate([b[1] for b in blocks])
    else:
        z, z_t = run_block(slice(0, paths))

    trace = boundary_normal_derivative(mesh, z)
    return PathEnsemble(mesh=mesh, dt=dt, T=T, num_steps=K, seed=seed, z=z, z_t=z_t,
                        trace=trace, increments=increments, z0=z0, z1=z1)


def solve_deterministic(coeffs: CoefficientSet, z0, z1, mesh: SpatialMesh,
                        T: float, dt: float,
                        drift_force: Optional[np.ndarray] = None) -> PathEnsemble:
    """Deterministic solve; initial data may be batched with shape (S, N)."""
    if not coeffs.is_deterministic():
        raise UnsupportedModeError("deterministic solve requires b4 = 0 and no force")
    K = _resolve_steps(T, dt)
    z0 = np.atleast_2d(np.asarray(z0, dtype=float))
    z1 = np.atleast_2d(np.asarray(z1, dtype=float))
    z0 = _validate_initial(mesh, z0, "z0")
    z1 = _validate_initial(mesh, z1, "z1")
    S = z0.shape[0]
    stepper = WaveStepper(mesh, coeffs, dt, K, drift_force=drift_force)
    u, v = z0.copy(), z1.copy()
    zs = np.empty((S, K + 1, mesh.num_nodes))
    vs = np.empty_like(zs)
    zs[:, 0] = u
    vs[:, 0] = v
    for k in range(K):
        u, v = stepper.step(k, u, v)
        zs[:, k + 1] = u
        vs[:, k + 1] = v
    trace = boundary_normal_derivative(mesh, zs)
    return PathEnsemble(mesh=mesh, dt=dt, T=T, num_steps=K, seed=None, z=zs, z_t=vs,
                        trace=trace, increments=None, z0=z0, z1=z1)


def _reflect_field(field: TimeSpaceField, T: float, negate: bool = False) -> TimeSpaceField:
    if field.is_zero():
        return field
    sign = -1.0 if negate else 1.0

    def eval_fn(t, X):
        return sign * field(T - t, X)

    return TimeSpaceField(tag=f"reflected_{field.tag}", eval_fn=eval_fn,
                          vector=field.vector, sup_norm=field.sup_norm)


def solve_deterministic_reversed(coeffs: CoefficientSet, terminal_velocity,
                                 mesh: SpatialMesh, T: float, dt: float,
                                 terminal_displacement=None) -> PathEnsemble:
    """Integrate the deterministic system backward from t = T.

    Default terminal displacement is zero, so the returned forward-time
    trajectory vanishes at T by construction.  The reversed equation flips the
    sign of the velocity coupling and reflects the time dependence of the
    lower-order coefficients.
    """
    if not coeffs.is_deterministic():
        raise UnsupportedModeError("reversed solve requires b4 = 0 and no force")
    w = np.atleast_2d(np.asarray(terminal_velocity, dtype=float))
    if terminal_displacement is None:
        zT = np.zeros_like(w)
    else:
        zT = np.atleast_2d(np.asarray(terminal_displacement, dtype=float))
    reflected = CoefficientSet(
        principal=coeffs.principal,
        b1=_reflect_field(coeffs.b1, T, negate=True),
        b2=_reflect_field(coeffs.b2, T),
        b3=_reflect_field(coeffs.b3, T),
    )
    backward = solve_deterministic(reflected, zT, -w, mesh, T, dt)
    z = backward.z[:, ::-1, :].copy()
    z_t = -backward.z_t[:, ::-1, :].copy()
    trace = boundary_normal_derivative(mesh, z)
    K = backward.num_steps
    return PathEnsemble(mesh=mesh, dt=dt, T=T, num_steps=K, seed=None, z=z, z_t=z_t,
                        trace=trace, increments=None, z0=z[:, 0, :], z1=z_t[:, 0, :])


# ---------------------------------------------------------------------------
# Traces, norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRestriction:
    series: np.ndarray
    norm: float
    empty: bool


def trace_sq_time_integral(ensemble: PathEnsemble, positions: np.ndarray) -> np.ndarray:
    """Per-path int_0^T sum_bnodes w_b |dz/dnu|^2 dt restricted to bnode positions."""
    wt = time_trapezoid_weights(ensemble.num_steps + 1, ensemble.dt)
    wb = boundary_quad_weights(ensemble.mesh)[positions]
    restricted = ensemble.trace[:, :, positions]
    return np.einsum("pkb,k,b->p", restricted ** 2, wt, wb)


def boundary_normal_trace(ensemble: PathEnsemble,
                          subset: BoundarySubset) -> TraceRestriction:
    """Trace restricted to the observed boundary portion plus its Monte Carlo
    mean-square norm (mean of path-wise squared norms, then square root)."""
    positions = subset.member_positions()
    if positions.size == 0:
        return TraceRestriction(series=np.zeros(ensemble.trace.shape[:2] + (0,)),
                                norm=0.0, empty=True)
    per_path = trace_sq_time_integral(ensemble, positions)
    return TraceRestriction(series=ensemble.trace[:, :, positions],
                            norm=float(np.sqrt(np.mean(per_path))), empty=False)


def force_l2_norm(coeffs: CoefficientSet, mesh: SpatialMesh, ensemble: PathEnsemble) -> float:
    """Root mean over paths of |g|_{L^2((0,T) x G)}; separable mode factorizes."""
    if coeffs.force is None:
        return 0.0
    K, dt = ensemble.num_steps, ensemble.dt
    if isinstance(coeffs.force, SeparableForce):
        g1 = coeffs.force.g1_values(ensemble.paths, K, dt)
        g2 = coeffs.force.g2_values(mesh)
        g2_l2 = l2_norm(mesh, g2)
        per_path = np.sum(g1 ** 2 * dt, axis=1) * g2_l2 ** 2
        return float(np.sqrt(np.mean(per_path)))
    g = coeffs.force.at_steps(mesh, K, dt)
    w = trapezoid_weights(mesh)
    return float(np.sqrt(np.sum(g ** 2 * w) * dt))


@dataclass(frozen=True)
class HiddenRegularityResult:
    ratio: float
    trace_norm: float
    data_norm: float
    force_norm: float


def hidden_regularity_ratio(ensemble: PathEnsemble,
                            coeffs: CoefficientSet) -> HiddenRegularityResult:
    """Trace norm over the whole boundary divided by data plus force norms."""
    mesh = ensemble.mesh
    all_positions = np.arange(mesh.num_boundary)
    per_path = trace_sq_time_integral(ensemble, all_positions)
    trace_norm = float(np.sqrt(np.mean(per_path)))
    data_norm = h10_l2_norm(mesh, ensemble.z0[0] if ensemble.z0.ndim > 1 else ensemble.z0,
                            ensemble.z1[0] if ensemble.z1.ndim > 1 else ensemble.z1)
    force_norm = force_l2_norm(coeffs, mesh, ensemble)
    denom = data_norm + force_norm
    if denom == 0.0:
        raise UndefinedRatioError("hidden-regularity ratio undefined for zero data")
    return HiddenRegularityResult(ratio=trace_norm / denom, trace_norm=trace_norm,
                                  data_norm=data_norm, force_norm=force_norm)


def energy_series(mesh: SpatialMesh, field: PrincipalField,
                  z: np.ndarray, z_t: np.ndarray) -> np.ndarray:
    """Discrete wave energy at every stored time level of one trajectory."""
    return np.array([wave_energy(mesh, field.values, z[k], z_t[k])
                     for k in range(z.shape[0])])


# ---------------------------------------------------------------------------
# Ito isometry check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IsometryReport:
    mc_second_moment: float
    exact_second_moment: float
    stderr: float
    z_score: float
    passed: bool


def ito_isometry_check(g1_values: np.ndarray, dt: float, paths: int,
                       seed: int) -> IsometryReport:
    """Monte Carlo second moment of sum g1(t_k) dB_k against sum g1^2 dt."""
    g1_values = np.asarray(g1_values, dtype=float)
    K = g1_values.size
    sums = np.empty(paths)
    for p in range(paths):
        dB = path_increments(seed, p, K, dt)
        sums[p] = np.dot(g1_values, dB)
    sq = sums ** 2
    mc = float(np.mean(sq))
    exact = float(np.sum(g1_values ** 2) * dt)
    stderr = float(np.std(sq, ddof=1) / np.sqrt(paths))
    z = (mc - exact) / stderr if stderr > 0 else 0.0
    return IsometryReport(mc_second_moment=mc, exact_second_moment=exact,
                          stderr=stderr, z_score=float(z), passed=abs(z) <= 3.0)


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

def ensemble_summary(ensemble: PathEnsemble):
    """Per-path norm rows and aggregate statistics for the report writers."""
    mesh = ensemble.mesh
    w = trapezoid_weights(mesh)
    all_positions = np.arange(mesh.num_boundary)
    trace_sq = trace_sq_time_integral(ensemble, all_positions)
    term = ensemble.terminal_displacement()
    term_l2 = np.sqrt(np.einsum("pn,n->p", term ** 2, w))
    max_abs = np.max(np.abs(ensemble.z), axis=(1, 2))
    header = ["path", "trace_sq_integral", "terminal_l2", "max_abs_z"]
    rows = [[p, float(trace_sq[p]), float(term_l2[p]), float(max_abs[p])]
            for p in range(ensemble.paths)]
    aggregate = {
        "paths": ensemble.paths,
        "dt": ensemble.dt,
        "T": ensemble.T,
        "seed": ensemble.seed,
        "trace_norm": float(np.sqrt(np.mean(trace_sq))),
        "terminal_l2_mean": float(np.mean(term_l2)),
        "terminal_l2_max": float(np.max(term_l2)),
        "max_abs_z": float(np.max(max_abs)),
    }
    return header, rows, aggregate
