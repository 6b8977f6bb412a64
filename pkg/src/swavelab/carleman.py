"""Weight-function machinery: admissibility conditions for the spatial weight,
parameter feasibility, pointwise evaluation of the exponential weight and its
derived coefficients, and the positivity audit of the large-parameter terms.

Notation used throughout: ell(t, x) = lam * [d(x) - c1 (t - T)^2], theta = e^ell,
psi = ell_tt + sum_ij (b^ij ell_xi)_xj - lam * c0, and the zeroth-order weights
A, B are the standard quadratic-multiplier companions of that choice.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, EllipticityError
from .fields import PrincipalField, WeightFunction
from .geometry import SpatialMesh, require_elliptic
from .numerics import divergence_fourth_order, gradient_fourth_order

# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CarlemanParams:
    lam: float
    c0: float
    c1: float
    mu0: float
    T: float

    def __post_init__(self):
        if not (0.0 < self.c0 < self.c1 < 1.0):
            raise ConfigurationError("need 0 < c0 < c1 < 1", field="weight.c0/c1")
        if self.mu0 <= 0.0:
            # mu0 > 4 is a feasibility requirement, reported by the checkers so
            # that infeasible candidates can be audited rather than rejected.
            raise ConfigurationError("need mu0 > 0", field="weight.mu0")
        if self.lam <= 0.0:
            raise ConfigurationError("need lam > 0", field="weight.lam")
        if self.T <= 0.0:
            raise ConfigurationError("need T > 0", field="weight.T")

    @property
    def feasible_mu0(self) -> bool:
        return self.mu0 > 4.0

    def with_lambda(self, lam: float) -> "CarlemanParams":
        return dataclasses.replace(self, lam=float(lam))


# ---------------------------------------------------------------------------
# Spatial bookkeeping shared by every evaluation
# ---------------------------------------------------------------------------

def _field_gradient(field: PrincipalField, mesh: SpatialMesh) -> np.ndarray:
    """d b^ij / d x_k as (N, k, i, j); analytic when available, else 4th order FD."""
    if field.grad is not None:
        return field.grad
    n = mesh.dim
    out = np.empty((mesh.num_nodes, n, n, n))
    for i in range(n):
        for j in range(n):
            out[:, :, i, j] = gradient_fourth_order(mesh, field.values[:, i, j])
    return out


class WeightMachinery:
    """Lambda-independent spatial contractions for one (weight, field, mesh).

    Everything here depends only on d and b; the exponential parameters enter
    through the evaluation methods.
    """

    def __init__(self, weight: WeightFunction, field: PrincipalField, mesh: SpatialMesh):
        require_elliptic(field, mesh)
        self.weight = weight
        self.field = field
        self.mesh = mesh
        X = mesh.nodes
        self.d = weight.d(X)
        # Positivity of d is part of the admissibility hypothesis; it is
        # reported by the condition checker rather than enforced here so that
        # failing candidates (e.g. interior critical points) can be audited.
        self.d_min = float(np.min(self.d))
        self.grad_d = weight.grad(X)
        self.hess_d = weight.hess(X)
        self.third_d = weight.third(X)
        self.b = field.values
        self.grad_b = _field_gradient(field, mesh)

        # conormal w_j = sum_i b^ij d_xi
        self.w = np.einsum("nij,ni->nj", self.b, self.grad_d)
        self.q = np.einsum("nj,nj->n", self.w, self.grad_d)
        # K[j, j'] = d/dx_j' of w_j
        self.K = (np.einsum("nkij,ni->njk", self.grad_b, self.grad_d)
                  + np.einsum("nij,nik->njk", self.b, self.hess_d))
        self.r = np.einsum("njij,ni->n", self.grad_b, self.grad_d)
        self.s = np.einsum("nij,nij->n", self.b, self.hess_d)
        self.D = self.r + self.s
        self.grad_q = (np.einsum("nkij,ni,nj->nk", self.grad_b, self.grad_d, self.grad_d)
                       + 2.0 * np.einsum("nij,nik,nj->nk", self.b, self.hess_d, self.grad_d))
        self.min_grad_d = float(np.min(np.linalg.norm(self.grad_d, axis=1)))
        self._div_b_gradD: Optional[np.ndarray] = None
        self._div_b_gradD_fd: Optional[np.ndarray] = None

    # -- condition (d1) matrix -------------------------------------------------

    def condition_matrix(self) -> np.ndarray:
        """M^ij = sum_j' [2 b^ij' dw_j/dx_j' - (db^ij/dx_j') w_j'], symmetrized."""
        M = (2.0 * np.einsum("nik,njk->nij", self.b, self.K)
             - np.einsum("nkij,nk->nij", self.grad_b, self.w))
        return 0.5 * (M + np.swapaxes(M, -1, -2))

    def cxx_matrix(self, params: CarlemanParams) -> np.ndarray:
        """Gradient-quadratic coefficient of the identity's right side.

        (b^ij ell_t)_t + sum [2 b^ij' (b^i'j ell_xi')_xj' - (b^ij b^i'j' ell_xi')_xj']
        + psi b^ij, which is time-independent for this weight family.
        """
        lam = params.lam
        term = 2.0 * np.einsum("nik,njk->nij", self.b, self.K)
        # (b^ij * w_j')_xj' summed over j': grad_b . w + b * div w
        term -= (np.einsum("nkij,nk->nij", self.grad_b, self.w)
                 + self.b * self.D[:, None, None])
        psi = self.psi(params)
        ell_tt = -2.0 * lam * params.c1
        return self.b * ell_tt + lam * term + psi[:, None, None] * self.b

    # -- divergence of b grad D (analytic when derivatives exist, else FD) -----

    def div_b_gradD(self, use_fd: bool = False) -> np.ndarray:
        if use_fd:
            if self._div_b_gradD_fd is None:
                gD = gradient_fourth_order(self.mesh, self.D)
                vec = np.einsum("nij,ni->nj", self.b, gD)
                self._div_b_gradD_fd = divergence_fourth_order(self.mesh, vec)
            return self._div_b_gradD_fd
        if self._div_b_gradD is None:
            self._div_b_gradD = self._div_b_gradD_analytic()
        return self._div_b_gradD

    def _div_b_gradD_analytic(self) -> np.ndarray:
        field = self.field
        if field.grad2 is None or field.grad3 is None:
            # Tabulated field: no closed-form second derivatives; fall back.
            return self.div_b_gradD(use_fd=True)
        g, H, Td = self.grad_d, self.hess_d, self.third_d
        gb, gb2, gb3 = self.grad_b, field.grad2, field.grad3
        # D_k = sum_ij [d2b/dx_k dx_j d_i + db/dx_j H_ik + db/dx_k H_ij + b T_kij]
        Dk = (np.einsum("nkjij,ni->nk", gb2, g)
              + np.einsum("njij,nik->nk", gb, H)
              + np.einsum("nkij,nij->nk", gb, H)
              + np.einsum("nij,nkij->nk", self.b, Td))
        # D_kl (fourth derivative of d vanishes for the supported families)
        Dkl = (np.einsum("nlkjij,ni->nkl", gb3, g)
               + np.einsum("nkjij,nil->nkl", gb2, H)
               + np.einsum("nljij,nik->nkl", gb2, H)
               + np.einsum("njij,nlik->nkl", gb, Td)
               + np.einsum("nlkij,nij->nkl", gb2, H)
               + np.einsum("nkij,nlij->nkl", gb, Td)
               + np.einsum("nlij,nkij->nkl", gb, Td))
        return (np.einsum("njij,ni->n", gb, Dk)
                + np.einsum("nij,nij->n", self.b, Dkl))

    # -- lambda-dependent evaluations ------------------------------------------

    def ell(self, params: CarlemanParams, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        quad = params.c1 * (t - params.T) ** 2
        if t.ndim == 0:
            return params.lam * (self.d - float(quad))
        return params.lam * (self.d[None, :] - quad[:, None])

    def ell_t(self, params: CarlemanParams, t) -> np.ndarray:
        return -2.0 * params.lam * params.c1 * (np.asarray(t, dtype=float) - params.T)

    def ell_tt(self, params: CarlemanParams) -> float:
        return -2.0 * params.lam * params.c1

    def grad_ell(self, params: CarlemanParams) -> np.ndarray:
        return params.lam * self.grad_d

    def psi(self, params: CarlemanParams) -> np.ndarray:
        lam = params.lam
        return self.ell_tt(params) + lam * self.D - lam * params.c0

    def A(self, params: CarlemanParams, t) -> np.ndarray:
        """(ell_t^2 - ell_tt) - sum(b ell_x ell_x - b_x ell_x - b ell_xx) - psi.

        Broadcasts over a time array: result (len(t), N).
        """
        lam = params.lam
        scalar = np.asarray(t).ndim == 0
        lt = np.atleast_1d(self.ell_t(params, t))
        spatial = -lam ** 2 * self.q + lam * self.r + lam * self.s
        out = lt[:, None] ** 2 - self.ell_tt(params) + spatial - self.psi(params)
        return out[0] if scalar else out

    def B(self, params: CarlemanParams, t, use_fd: bool = False) -> np.ndarray:
        """Zeroth-order weight: A psi + (A ell_t)_t - sum (A b^ij ell_xi)_xj
        + 0.5 [psi_tt - sum (b^ij psi_xi)_xj]."""
        lam = params.lam
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        A = np.atleast_2d(self.A(params, t_arr))
        psi = self.psi(params)
        lt = self.ell_t(params, t_arr)[:, None]
        ltt = self.ell_tt(params)
        A_t = 2.0 * lt * ltt  # d/dt of ell_t^2; the remaining terms are t-free
        if use_fd:
            div_A = np.empty_like(A)
            for i in range(t_arr.size):
                vec = A[i][:, None] * lam * self.w
                div_A[i] = divergence_fourth_order(self.mesh, vec)
            psi_x = gradient_fourth_order(self.mesh, psi)
            div_psi = divergence_fourth_order(
                self.mesh, np.einsum("nij,ni->nj", self.b, psi_x))
        else:
            # grad A = -lam^2 grad q exactly (the psi terms cancel by construction)
            grad_A = -lam ** 2 * self.grad_q
            div_A = lam * (np.einsum("nk,nk->n", grad_A, self.w) + A * self.D)
            div_psi = lam * self.div_b_gradD()
        B = A * psi + A_t * lt + A * ltt - div_A + 0.5 * (0.0 - div_psi)
        return B if np.asarray(t).ndim else B[0]


# ---------------------------------------------------------------------------
# Condition reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionDReport:
    mu0_max: float
    min_grad_d: float
    passed: bool
    argmin_node: int
    grad_d_vanishes: bool

    def as_dict(self) -> dict:
        return {"mu0_max": self.mu0_max, "min_grad_d": self.min_grad_d,
                "pass": self.passed}


def verify_condition_d(weight: WeightFunction, field: PrincipalField,
                       mesh: SpatialMesh) -> ConditionDReport:
    """Largest feasible mu0 (min over nodes of the smallest generalized
    eigenvalue of (M, b)) and the no-critical-point check on |grad d|."""
    mach = WeightMachinery(weight, field, mesh)
    M = mach.condition_matrix()
    b = mach.b
    if mesh.dim == 1:
        ratios = M[:, 0, 0] / b[:, 0, 0]
    else:
        from scipy.linalg import eigh
        ratios = np.empty(mesh.num_nodes)
        for node in range(mesh.num_nodes):
            try:
                ratios[node] = eigh(M[node], b[node], eigvals_only=True)[0]
            except np.linalg.LinAlgError as exc:  # pragma: no cover
                raise EllipticityError(f"generalized eigensolve failed at node {node}") from exc
    argmin = int(np.argmin(ratios))
    mu0_max = float(ratios[argmin])
    vanishes = mach.min_grad_d <= 0.0
    passed = (mu0_max > 4.0) and not vanishes and mach.d_min > 0.0
    return ConditionDReport(mu0_max=mu0_max, min_grad_d=mach.min_grad_d,
                            passed=passed, argmin_node=argmin,
                            grad_d_vanishes=vanishes)


@dataclass(frozen=True)
class ConditionParamsReport:
    part1_margin: float
    part2_upper_value: float
    part2_mid_value: float
    part2_lower_value: float
    part2_upper_margin: float
    part2_lower_margin: float
    passed: bool

    def as_dict(self) -> dict:
        return {"part1_margin": self.part1_margin,
                "part2_lower_margin": self.part2_lower_margin,
                "part2_upper_margin": self.part2_upper_margin,
                "pass": self.passed}


def verify_condition_params(params: CarlemanParams, weight: WeightFunction,
                            field: PrincipalField, mesh: SpatialMesh) -> ConditionParamsReport:
    """Feasibility of (c0, c1, mu0, T): part 1 is mu0 - 4 c1 - c0 > 0; part 2
    reads (mu0/(8c1+c0)) inf_x q > 4 c1^2 T^2 > sup_x q with q the conormal
    square sum q = sum b^ij d_xi d_xj (inf/sup reading of the unquantified
    chain; the audit needs the lower bound pointwise and the upper bound
    uniformly)."""
    mach = WeightMachinery(weight, field, mesh)
    q_inf = float(np.min(mach.q))
    q_sup = float(np.max(mach.q))
    part1 = params.mu0 - 4.0 * params.c1 - params.c0
    upper = params.mu0 / (8.0 * params.c1 + params.c0) * q_inf
    mid = 4.0 * params.c1 ** 2 * params.T ** 2
    upper_margin = upper - mid
    lower_margin = mid - q_sup
    passed = (part1 > 0.0) and (upper_margin > 0.0) and (lower_margin > 0.0)
    return ConditionParamsReport(part1_margin=float(part1),
                                 part2_upper_value=float(upper),
                                 part2_mid_value=float(mid),
                                 part2_lower_value=float(q_sup),
                                 part2_upper_margin=float(upper_margin),
                                 part2_lower_margin=float(lower_margin),
                                 passed=passed)


# ---------------------------------------------------------------------------
# Pointwise evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightEvaluation:
    ell: float
    theta: float
    ell_t: float
    ell_tt: float
    grad_ell: np.ndarray
    psi: float
    A: float
    B: float


def weight_eval(params: CarlemanParams, weight: WeightFunction,
                field: PrincipalField, mesh: SpatialMesh, t: float,
                node: int, machinery: Optional[WeightMachinery] = None) -> WeightEvaluation:
    """Evaluate every weight quantity at one (t, node)."""
    if not (0.0 <= t <= params.T):
        raise ConfigurationError("evaluation time outside [0, T]", field="t")
    mach = machinery or WeightMachinery(weight, field, mesh)
    ell = float(params.lam * (mach.d[node] - params.c1 * (t - params.T) ** 2))
    return WeightEvaluation(
        ell=ell,
        theta=float(np.exp(ell)),
        ell_t=float(mach.ell_t(params, t)),
        ell_tt=float(mach.ell_tt(params)),
        grad_ell=mach.grad_ell(params)[node].copy(),
        psi=float(mach.psi(params)[node]),
        A=float(mach.A(params, t)[node]),
        B=float(mach.B(params, t)[node]),
    )


# ---------------------------------------------------------------------------
# Proof-step audit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AuditReport:
    psi_residual_max: float
    cross_term_max: float
    lambda0: Optional[float]
    lambda1: Optional[float]
    lambda0_worst: Optional[dict]
    lambda1_worst: Optional[dict]

    def as_dict(self) -> dict:
        return {"psi_residual_max": self.psi_residual_max,
                "cross_term_max": self.cross_term_max,
                "lambda0": self.lambda0, "lambda1": self.lambda1}

    @property
    def lambda_tilde(self) -> Optional[float]:
        if self.lambda0 is None or self.lambda1 is None:
            return None
        return max(self.lambda0, self.lambda1)


def _t0_quadratic_forms(mach: WeightMachinery, params: CarlemanParams) -> np.ndarray:
    """Symmetric matrices of the t = 0 endpoint form in the basis (v_t, v_x, v)."""
    mesh, lam = mach.mesh, params.lam
    n = mesh.dim
    N = mesh.num_nodes
    lt0 = 2.0 * lam * params.c1 * params.T
    psi = mach.psi(params)
    A0 = mach.A(params, 0.0)
    Q = np.zeros((N, n + 2, n + 2))
    Q[:, 0, 0] = lt0
    Q[:, 0, 1:1 + n] = -lam * mach.w
    Q[:, 1:1 + n, 0] = -lam * mach.w
    Q[:, 1:1 + n, 1:1 + n] = lt0 * mach.b
    Q[:, 0, n + 1] = -0.5 * psi
    Q[:, n + 1, 0] = -0.5 * psi
    Q[:, n + 1, n + 1] = A0 * lt0
    return Q


def audit_proof_coefficients(params: CarlemanParams, weight: WeightFunction,
                             field: PrincipalField, mesh: SpatialMesh,
                             lambda_grid=None, num_t_samples: int = 33) -> AuditReport:
    """Four named positivity/identity checks behind the weighted estimate.

    (i) the velocity-coefficient identity ell_tt + sum(b ell_x)_x - psi = lam c0
    holds to rounding; (ii) the v_x v_t cross coefficient vanishes identically
    (time-independent b); (iii) the smallest lambda on the grid with
    B >= 0.5 (4c1 + c0) (inf q) lam^3 everywhere sampled; (iv) the smallest
    lambda making the t = 0 endpoint quadratic form positive definite.
    """
    if lambda_grid is None:
        lambda_grid = [2.0 ** k for k in range(11)]
    mach = WeightMachinery(weight, field, mesh)
    lam = params.lam
    lhs = mach.ell_tt(params) + lam * mach.D
    psi_residual = float(np.max(np.abs(lhs - mach.psi(params) - lam * params.c0)))

    # Cross coefficient (b^ij ell_xj)_t + b^ij ell_t,xj by central time
    # difference of the conormal; vanishes identically for time-free b and d.
    dt_probe = params.T / 7.0
    conormal = lambda t: np.einsum("nij,ni->nj", mach.b, mach.grad_ell(params))
    d_conormal = (conormal(0.5 * params.T + dt_probe)
                  - conormal(0.5 * params.T - dt_probe)) / (2.0 * dt_probe)
    cross_term = float(np.max(np.abs(d_conormal)))

    t_samples = np.linspace(0.0, params.T, num_t_samples)
    q_inf = float(np.min(mach.q))

    lambda0 = None
    lambda0_worst = None
    for lam_try in lambda_grid:
        p = params.with_lambda(lam_try)
        Bvals = mach.B(p, t_samples)
        margin = Bvals - 0.5 * (4.0 * params.c1 + params.c0) * q_inf * lam_try ** 3
        worst = float(np.min(margin))
        if worst >= 0.0:
            lambda0 = float(lam_try)
            break
        it, node = np.unravel_index(int(np.argmin(margin)), margin.shape)
        lambda0_worst = {"lambda": float(lam_try), "margin": worst,
                         "t": float(t_samples[it]), "node": int(node)}
    if lambda0 is not None:
        lambda0_worst = None

    lambda1 = None
    lambda1_worst = None
    for lam_try in lambda_grid:
        p = params.with_lambda(lam_try)
        Q = _t0_quadratic_forms(mach, p)
        eigs = np.linalg.eigvalsh(Q)
        worst = float(np.min(eigs[:, 0]))
        if worst > 0.0:
            lambda1 = float(lam_try)
            break
        node = int(np.argmin(eigs[:, 0]))
        lambda1_worst = {"lambda": float(lam_try), "min_eigenvalue": worst, "node": node}
    if lambda1 is not None:
        lambda1_worst = None

    return AuditReport(psi_residual_max=psi_residual, cross_term_max=cross_term,
                       lambda0=lambda0, lambda1=lambda1,
                       lambda0_worst=lambda0_worst, lambda1_worst=lambda1_worst)


def audit_json(condition_d: ConditionDReport, condition_params: ConditionParamsReport,
               audit: AuditReport) -> dict:
    return {"condition_d": condition_d.as_dict(),
            "condition_params": condition_params.as_dict(),
            "audit": audit.as_dict()}
