"""Closed-form coefficient and weight families.

Every family carries its own analytic derivatives so that the weighted-energy
audits never rely on finite differences unless a field is supplied in
tabulated form.  Coordinates are always passed as an ``(M, n)`` array and
evaluations come back with leading dimension ``M``.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError


# ---------------------------------------------------------------------------
# Spatial weight function d(x)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightFunction:
    """Spatial weight d with closed-form derivatives up to fourth order.

    ``d_fn(X) -> (M,)``, ``grad_fn(X) -> (M, n)``, ``hess_fn(X) -> (M, n, n)``,
    ``third_fn(X) -> (M, n, n, n)`` with index order (d/dx_k, d/dx_l, d/dx_m).
    Families with vanishing higher derivatives may leave ``third_fn`` unset.
    """

    tag: str
    dim: int
    d_fn: Callable[[np.ndarray], np.ndarray]
    grad_fn: Callable[[np.ndarray], np.ndarray]
    hess_fn: Callable[[np.ndarray], np.ndarray]
    third_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    params: dict = dc_field(default_factory=dict)

    def d(self, coords: np.ndarray) -> np.ndarray:
        return self.d_fn(np.atleast_2d(coords))

    def grad(self, coords: np.ndarray) -> np.ndarray:
        return self.grad_fn(np.atleast_2d(coords))

    def hess(self, coords: np.ndarray) -> np.ndarray:
        return self.hess_fn(np.atleast_2d(coords))

    def third(self, coords: np.ndarray) -> np.ndarray:
        coords = np.atleast_2d(coords)
        if self.third_fn is None:
            m, n = coords.shape
            return np.zeros((m, n, n, n))
        return self.third_fn(coords)


def shifted_quadratic_weight(scale: float, center) -> WeightFunction:
    """d(x) = scale * |x - center|^2 with center outside the closed domain."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    n = center.size
    if scale <= 0:
        raise ConfigurationError("weight scale must be positive", field="weight.scale")

    def d_fn(X):
        return scale * np.sum((X - center) ** 2, axis=1)

    def grad_fn(X):
        return 2.0 * scale * (X - center)

    def hess_fn(X):
        return np.broadcast_to(2.0 * scale * np.eye(n), (X.shape[0], n, n)).copy()

    return WeightFunction(
        tag="shifted_quadratic",
        dim=n,
        d_fn=d_fn,
        grad_fn=grad_fn,
        hess_fn=hess_fn,
        params={"scale": float(scale), "center": center.tolist()},
    )


def constant_weight(value: float, dim: int) -> WeightFunction:
    """Constant d; useful only as a degenerate test case (zero gradient)."""

    def d_fn(X):
        return np.full(X.shape[0], float(value))

    def grad_fn(X):
        return np.zeros((X.shape[0], dim))

    def hess_fn(X):
        return np.zeros((X.shape[0], dim, dim))

    return WeightFunction(
        tag="constant", dim=dim, d_fn=d_fn, grad_fn=grad_fn, hess_fn=hess_fn,
        params={"value": float(value)},
    )


# ---------------------------------------------------------------------------
# Principal (matrix) coefficient families
# ---------------------------------------------------------------------------

@dataclass
class PrincipalField:
    """Symmetric second-order coefficient matrix sampled on mesh nodes.

    values[m, i, j] holds the matrix at node m.  When the field comes from a
    closed form, grad/grad2/grad3 hold the analytic derivatives with leading
    derivative indices: grad[m, k, i, j] = d b^{ij} / d x_k, and so on.
    Tabulated fields leave them as None; consumers fall back to mesh finite
    differences.
    """

    values: np.ndarray
    s0: float
    tag: str = "tabulated"
    grad: Optional[np.ndarray] = None
    grad2: Optional[np.ndarray] = None
    grad3: Optional[np.ndarray] = None
    params: dict = dc_field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values[0]))


def principal_identity(coords: np.ndarray, s0: float = 1.0) -> PrincipalField:
    coords = np.atleast_2d(coords)
    m, n = coords.shape
    values = np.broadcast_to(np.eye(n), (m, n, n)).copy()
    zeros = np.zeros((m, n, n, n))
    return PrincipalField(values=values, s0=s0, tag="identity",
                          grad=zeros, grad2=np.zeros((m, n, n, n, n)),
                          grad3=np.zeros((m, n, n, n, n, n)))


def principal_constant(coords: np.ndarray, matrix, s0: float) -> PrincipalField:
    coords = np.atleast_2d(coords)
    m, n = coords.shape
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape != (n, n):
        raise ConfigurationError("principal matrix shape does not match domain dimension",
                                 field="coefficients.principal")
    values = np.broadcast_to(matrix, (m, n, n)).copy()
    return PrincipalField(values=values, s0=s0, tag="constant",
                          grad=np.zeros((m, n, n, n)),
                          grad2=np.zeros((m, n, n, n, n)),
                          grad3=np.zeros((m, n, n, n, n, n)),
                          params={"matrix": matrix.tolist()})


def principal_sine_1d(coords: np.ndarray, base: float, amp: float,
                      freq: float = 1.0, s0: Optional[float] = None) -> PrincipalField:
    """1D scalar coefficient b(x) = base + amp*sin(pi*freq*x), all derivatives closed form."""
    coords = np.atleast_2d(coords)
    if coords.shape[1] != 1:
        raise ConfigurationError("sine principal field is one-dimensional",
                                 field="coefficients.principal")
    x = coords[:, 0]
    w = np.pi * freq
    b = base + amp * np.sin(w * x)
    if np.any(b <= 0):
        raise ConfigurationError("sine principal field is not positive on the mesh",
                                 field="coefficients.principal")
    m = x.size
    values = b.reshape(m, 1, 1)
    grad = (amp * w * np.cos(w * x)).reshape(m, 1, 1, 1)
    grad2 = (-amp * w ** 2 * np.sin(w * x)).reshape(m, 1, 1, 1, 1)
    grad3 = (-amp * w ** 3 * np.cos(w * x)).reshape(m, 1, 1, 1, 1, 1)
    return PrincipalField(values=values, s0=float(s0 if s0 is not None else b.min()),
                          tag="sine_1d", grad=grad, grad2=grad2, grad3=grad3,
                          params={"base": base, "amp": amp, "freq": freq})


# ---------------------------------------------------------------------------
# Lower-order time-space coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeSpaceField:
    """Scalar or vector coefficient on (t, x); ``shape`` is () or (n,).

    eval(t, coords) returns (M,) for scalars and (M, n) for vectors.
    ``sup_norm`` is the closed-form sup over (t, x) when known; otherwise it is
    estimated by sampling on the simulation grid.
    """

    tag: str
    eval_fn: Callable[[float, np.ndarray], np.ndarray]
    vector: bool = False
    sup_norm: Optional[float] = None

    def __call__(self, t: float, coords: np.ndarray) -> np.ndarray:
        return self.eval_fn(t, np.atleast_2d(coords))

    def is_zero(self) -> bool:
        return self.tag == "zero"


def zero_field(vector: bool = False) -> TimeSpaceField:
    def eval_fn(t, X):
        if vector:
            return np.zeros_like(X)
        return np.zeros(X.shape[0])
    return TimeSpaceField(tag="zero", eval_fn=eval_fn, vector=vector, sup_norm=0.0)


def constant_field(value, vector: Optional[bool] = None) -> TimeSpaceField:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if vector is None:
        vector = arr.size > 1

    def eval_fn(t, X):
        if vector:
            return np.broadcast_to(arr, (X.shape[0], arr.size)).copy()
        return np.full(X.shape[0], arr[0])

    sup = float(np.linalg.norm(arr)) if vector else float(abs(arr[0]))
    return TimeSpaceField(tag="constant", eval_fn=eval_fn, vector=vector, sup_norm=sup)


def callable_field(fn: Callable[[float, np.ndarray], np.ndarray],
                   vector: bool = False, sup_norm: Optional[float] = None,
                   tag: str = "callable") -> TimeSpaceField:
    return TimeSpaceField(tag=tag, eval_fn=fn, vector=vector, sup_norm=sup_norm)


# ---------------------------------------------------------------------------
# Spatial profiles (initial data, force shapes, manufactured modes)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpatialProfile:
    """Smooth spatial profile with analytic gradient and Hessian."""

    tag: str
    value_fn: Callable[[np.ndarray], np.ndarray]
    grad_fn: Callable[[np.ndarray], np.ndarray]
    hess_fn: Callable[[np.ndarray], np.ndarray]
    params: dict = dc_field(default_factory=dict)

    def __call__(self, coords: np.ndarray) -> np.ndarray:
        return self.value_fn(np.atleast_2d(coords))

    def grad(self, coords: np.ndarray) -> np.ndarray:
        return self.grad_fn(np.atleast_2d(coords))

    def hess(self, coords: np.ndarray) -> np.ndarray:
        return self.hess_fn(np.atleast_2d(coords))


def sine_mode_profile(k, lo, hi) -> SpatialProfile:
    """Product of sin(k_a * pi * (x_a - lo_a)/(hi_a - lo_a)) along each axis.

    Vanishes on the whole boundary of the box; the standard Dirichlet mode.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    n = lo.size
    omega = k * np.pi / (hi - lo)

    def phases(X):
        return omega * (X - lo)

    def value_fn(X):
        return np.prod(np.sin(phases(X)), axis=1)

    def grad_fn(X):
        ph = phases(X)
        s = np.sin(ph)
        out = np.empty_like(X)
        for a in range(n):
            term = omega[a] * np.cos(ph[:, a])
            others = np.prod(np.delete(s, a, axis=1), axis=1) if n > 1 else 1.0
            out[:, a] = term * others
        return out

    def hess_fn(X):
        ph = phases(X)
        s = np.sin(ph)
        c = np.cos(ph)
        m = X.shape[0]
        out = np.empty((m, n, n))
        for a in range(n):
            for b in range(n):
                fac = np.ones(m)
                for axis in range(n):
                    if axis == a and axis == b:
                        fac = fac * (-omega[axis] ** 2 * s[:, axis])
                    elif axis == a or axis == b:
                        fac = fac * (omega[axis] * c[:, axis])
                    else:
                        fac = fac * s[:, axis]
                out[:, a, b] = fac
        return out

    return SpatialProfile(tag="sine_mode", value_fn=value_fn, grad_fn=grad_fn,
                          hess_fn=hess_fn, params={"k": k.tolist()})


def zero_profile(dim: int) -> SpatialProfile:
    return SpatialProfile(
        tag="zero",
        value_fn=lambda X: np.zeros(X.shape[0]),
        grad_fn=lambda X: np.zeros((X.shape[0], dim)),
        hess_fn=lambda X: np.zeros((X.shape[0], dim, dim)),
    )


def bump_profile(center, radius, amplitude: float = 1.0) -> SpatialProfile:
    """C-infinity bump amplitude * exp(-1/(1-r^2)) on |x-center| < radius, 0 outside."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    radius = np.atleast_1d(np.asarray(radius, dtype=float))
    n = center.size
    if radius.size == 1:
        radius = np.full(n, radius[0])

    def r2(X):
        return np.sum(((X - center) / radius) ** 2, axis=1)

    def value_fn(X):
        rho = r2(X)
        out = np.zeros(X.shape[0])
        inside = rho < 1.0
        out[inside] = amplitude * np.exp(-1.0 / (1.0 - rho[inside]))
        return out

    def grad_fn(X):
        rho = r2(X)
        out = np.zeros_like(X)
        inside = rho < 1.0
        g = np.zeros(X.shape[0])
        g[inside] = -amplitude * np.exp(-1.0 / (1.0 - rho[inside])) / (1.0 - rho[inside]) ** 2
        out[inside] = g[inside, None] * 2.0 * (X[inside] - center) / radius ** 2
        return out

    def hess_fn(X):
        # Only needed for smooth-consistency checks, not on hot paths.
        rho = r2(X)
        m = X.shape[0]
        out = np.zeros((m, n, n))
        inside = rho < 1.0
        if not np.any(inside):
            return out
        Xi = X[inside]
        rhoi = rho[inside]
        e = amplitude * np.exp(-1.0 / (1.0 - rhoi))
        one = 1.0 - rhoi
        dphi = -e / one ** 2
        d2phi = e * (1.0 - 2.0 * one) / one ** 4
        y = 2.0 * (Xi - center) / radius ** 2
        for a in range(n):
            for b in range(n):
                term = d2phi * y[:, a] * y[:, b]
                if a == b:
                    term = term + dphi * 2.0 / radius[a] ** 2
                out[inside, a, b] = term
        return out

    return SpatialProfile(tag="bump", value_fn=value_fn, grad_fn=grad_fn,
                          hess_fn=hess_fn,
                          params={"center": center.tolist(), "radius": radius.tolist(),
                                  "amplitude": amplitude})
