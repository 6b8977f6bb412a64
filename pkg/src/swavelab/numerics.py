"""Finite-difference stencils, quadrature, and discrete norms shared by the
solvers and the audit machinery."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .geometry import SpatialMesh


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

def trapezoid_weights(mesh: SpatialMesh) -> np.ndarray:
    """Tensor-product trapezoid weights, one per node (flat order)."""
    axes = []
    for a in range(mesh.dim):
        w = np.full(mesh.shape[a], mesh.spacing[a])
        w[0] *= 0.5
        w[-1] *= 0.5
        axes.append(w)
    if mesh.dim == 1:
        return axes[0]
    return np.outer(axes[0], axes[1]).ravel()


def time_trapezoid_weights(num_levels: int, dt: float) -> np.ndarray:
    w = np.full(num_levels, dt)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def boundary_quad_weights(mesh: SpatialMesh) -> np.ndarray:
    """Per boundary node: 1 in 1D, tangential spacing in 2D."""
    if mesh.dim == 1:
        return np.ones(mesh.num_boundary)
    tangential_axis = 1 - mesh.boundary_axis
    return mesh.spacing[tangential_axis]


def l2_norm(mesh: SpatialMesh, f: np.ndarray) -> float:
    w = trapezoid_weights(mesh)
    return float(np.sqrt(np.sum(w * np.asarray(f) ** 2)))


# ---------------------------------------------------------------------------
# Gradients (reporting convention: centered interior, one-sided 2nd order edges)
# ---------------------------------------------------------------------------

def _deriv_axis_2nd(grid: np.ndarray, h: float, axis: int) -> np.ndarray:
    g = np.moveaxis(grid, axis, -1)
    out = np.empty_like(g)
    out[..., 1:-1] = (g[..., 2:] - g[..., :-2]) / (2 * h)
    out[..., 0] = (-3 * g[..., 0] + 4 * g[..., 1] - g[..., 2]) / (2 * h)
    out[..., -1] = (3 * g[..., -1] - 4 * g[..., -2] + g[..., -3]) / (2 * h)
    return np.moveaxis(out, -1, axis)


def gradient_centered(mesh: SpatialMesh, f: np.ndarray) -> np.ndarray:
    """Second-order gradient of flat node values; shape (..., N, n)."""
    f = np.asarray(f)
    grid = f.reshape(f.shape[:-1] + mesh.shape)
    comps = []
    batch = len(f.shape) - 1
    for a in range(mesh.dim):
        d = _deriv_axis_2nd(grid, mesh.spacing[a], batch + a)
        comps.append(d.reshape(f.shape))
    return np.stack(comps, axis=-1)


def h1_seminorm(mesh: SpatialMesh, f: np.ndarray) -> float:
    g = gradient_centered(mesh, f)
    w = trapezoid_weights(mesh)
    return float(np.sqrt(np.sum(w * np.sum(g ** 2, axis=-1))))


def h10_l2_norm(mesh: SpatialMesh, z0: np.ndarray, z1: np.ndarray) -> float:
    return float(np.sqrt(h1_seminorm(mesh, z0) ** 2 + l2_norm(mesh, z1) ** 2))


# ---------------------------------------------------------------------------
# Fourth-order first derivative (for the audit's composite-expression path)
# ---------------------------------------------------------------------------

_EDGE4 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_NEXT4 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0


def _deriv_axis_4th(grid: np.ndarray, h: float, axis: int) -> np.ndarray:
    g = np.moveaxis(grid, axis, -1)
    m = g.shape[-1]
    if m < 5:
        raise ConfigurationError("fourth-order stencils need at least 5 nodes per axis")
    out = np.empty_like(g)
    out[..., 2:-2] = (-g[..., 4:] + 8 * g[..., 3:-1] - 8 * g[..., 1:-3] + g[..., :-4]) / (12 * h)
    out[..., 0] = np.tensordot(g[..., :5], _EDGE4, axes=([-1], [0])) / h
    out[..., 1] = np.tensordot(g[..., :5], _NEXT4, axes=([-1], [0])) / h
    out[..., -1] = -np.tensordot(g[..., -5:][..., ::-1], _EDGE4, axes=([-1], [0])) / h
    out[..., -2] = -np.tensordot(g[..., -5:][..., ::-1], _NEXT4, axes=([-1], [0])) / h
    return np.moveaxis(out, -1, axis)


def gradient_fourth_order(mesh: SpatialMesh, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f)
    grid = f.reshape(f.shape[:-1] + mesh.shape)
    batch = len(f.shape) - 1
    comps = [
        _deriv_axis_4th(grid, mesh.spacing[a], batch + a).reshape(f.shape)
        for a in range(mesh.dim)
    ]
    return np.stack(comps, axis=-1)


def divergence_fourth_order(mesh: SpatialMesh, vec: np.ndarray) -> np.ndarray:
    """Fourth-order divergence of a vector field of shape (N, n)."""
    out = np.zeros(vec.shape[0])
    for a in range(mesh.dim):
        comp = vec[:, a]
        grid = comp.reshape(mesh.shape)
        out += _deriv_axis_4th(grid, mesh.spacing[a], a).ravel()
    return out


# ---------------------------------------------------------------------------
# Divergence-form spatial operator (Dirichlet, flux form, symmetric)
# ---------------------------------------------------------------------------

def _axis_flux_div(grid: np.ndarray, c_grid: np.ndarray, h: float, axis: int) -> np.ndarray:
    """d/dx_a (c * d u/dx_a) with midpoint-face coefficient averaging.

    ``grid`` may carry leading batch dimensions; ``c_grid`` never does.
    """
    g = np.moveaxis(grid, axis, -1)
    c = np.moveaxis(c_grid, axis - (grid.ndim - c_grid.ndim), -1)
    cf = 0.5 * (c[..., 1:] + c[..., :-1])
    flux = cf * (g[..., 1:] - g[..., :-1])
    out = np.zeros_like(g)
    out[..., 1:-1] = (flux[..., 1:] - flux[..., :-1]) / h ** 2
    return np.moveaxis(out, -1, axis)


def _axis_centered(grid: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Centered derivative, zero at the two boundary layers (Dirichlet use)."""
    g = np.moveaxis(grid, axis, -1)
    out = np.zeros_like(g)
    out[..., 1:-1] = (g[..., 2:] - g[..., :-2]) / (2 * h)
    return np.moveaxis(out, -1, axis)


class DivergenceFormOperator:
    """Apply sum_ij d/dx_j (b^ij d u/dx_i) on flat node arrays with boundary
    rows forced to zero.  Diagonal entries use the symmetric flux form; the 2D
    cross term uses the symmetric centered-centered composition.  Batched
    leading dimensions are supported: input shape (..., N).
    """

    def __init__(self, mesh: SpatialMesh, field_values: np.ndarray):
        self.mesh = mesh
        n = mesh.dim
        self.diag = [field_values[:, a, a].reshape(mesh.shape) for a in range(n)]
        self.cross = field_values[:, 0, 1].reshape(mesh.shape) if n == 2 else None
        self.max_eig = float(np.max(np.linalg.eigvalsh(field_values)))

    def __call__(self, u: np.ndarray) -> np.ndarray:
        mesh = self.mesh
        u = np.asarray(u)
        grid = u.reshape(u.shape[:-1] + mesh.shape)
        batch = len(u.shape) - 1
        out = np.zeros_like(grid)
        for a in range(mesh.dim):
            out += _axis_flux_div(grid, self.diag[a], mesh.spacing[a], batch + a)
        if self.cross is not None and np.any(self.cross):
            h0, h1 = mesh.spacing
            d1u = _axis_centered(grid, h1, batch + 1)
            d0u = _axis_centered(grid, h0, batch + 0)
            out += _axis_centered(self.cross * d1u, h0, batch + 0)
            out += _axis_centered(self.cross * d0u, h1, batch + 1)
        out = out.reshape(u.shape)
        flat = out.reshape(-1, mesh.num_nodes)
        flat[:, mesh.boundary_indices] = 0.0
        return flat.reshape(u.shape)

    def cfl_dt(self, factor: float = 0.5) -> float:
        return factor * float(np.min(self.mesh.spacing)) / np.sqrt(self.max_eig)


def interior_gradient(mesh: SpatialMesh, u: np.ndarray) -> np.ndarray:
    """Centered gradient used by the advection coupling; zero on boundary rows.

    Antisymmetric along each axis under zero Dirichlet data, which is what the
    reverse sweep of the inversion relies on.  Shape (..., N) -> (..., N, n).
    """
    u = np.asarray(u)
    grid = u.reshape(u.shape[:-1] + mesh.shape)
    batch = len(u.shape) - 1
    comps = []
    for a in range(mesh.dim):
        d = _axis_centered(grid, mesh.spacing[a], batch + a).reshape(u.shape)
        comps.append(d)
    out = np.stack(comps, axis=-1)
    flat = out.reshape(-1, mesh.num_nodes, mesh.dim)
    flat[:, mesh.boundary_indices, :] = 0.0
    return flat.reshape(out.shape)


def interior_gradient_transpose(mesh: SpatialMesh, w: np.ndarray) -> np.ndarray:
    """Transpose of one axis-component map of ``interior_gradient``.

    For the centered Dirichlet difference the matrix is antisymmetric, so the
    transpose along each axis is the negated forward map; input (..., N, n).
    """
    w = np.asarray(w)
    out = np.zeros(w.shape[:-1])
    for a in range(mesh.dim):
        comp = w[..., a]
        grid = comp.reshape(comp.shape[:-1] + mesh.shape)
        batch = len(comp.shape) - 1
        out -= _axis_centered(grid, mesh.spacing[a], batch + a).reshape(comp.shape)
    flat = out.reshape(-1, mesh.num_nodes)
    flat[:, mesh.boundary_indices] = 0.0
    return flat.reshape(out.shape)


# ---------------------------------------------------------------------------
# Boundary normal derivative (second-order one-sided)
# ---------------------------------------------------------------------------

def boundary_normal_derivative(mesh: SpatialMesh, u: np.ndarray) -> np.ndarray:
    """One-sided 3-point normal derivative at every boundary node.

    Input (..., N); output (..., Nb) ordered like ``mesh.boundary_indices``.
    Corners use their assigned edge's normal direction.
    """
    u = np.asarray(u)
    grid = u.reshape(u.shape[:-1] + mesh.shape)
    batch = len(u.shape) - 1
    out = np.empty(u.shape[:-1] + (mesh.num_boundary,))
    for pos in range(mesh.num_boundary):
        axis = int(mesh.boundary_axis[pos])
        sign = mesh.boundary_normals[pos, axis]
        h = mesh.spacing[axis]
        idx_flat = int(mesh.boundary_indices[pos])
        multi = np.unravel_index(idx_flat, mesh.shape)
        sel = list(multi)
        g = np.moveaxis(grid, batch + axis, -1)
        lead = tuple(sel[a] for a in range(mesh.dim) if a != axis)
        line = g[(Ellipsis,) + lead + (slice(None),)] if mesh.dim > 1 else g
        if sign < 0:
            val = (-3 * line[..., 0] + 4 * line[..., 1] - line[..., 2]) / (2 * h)
            out[..., pos] = -val
        else:
            val = (3 * line[..., -1] - 4 * line[..., -2] + line[..., -3]) / (2 * h)
            out[..., pos] = val
    return out


# ---------------------------------------------------------------------------
# Discrete wave energy (face form matching the solver's operator)
# ---------------------------------------------------------------------------

def wave_energy(mesh: SpatialMesh, field_values: np.ndarray,
                z: np.ndarray, z_t: np.ndarray) -> float:
    """0.5 * int (z_t^2 + sum b^ij z_xi z_xj) with midpoint-face gradients.

    This is the quantity the flux-form leapfrog conserves up to O(dt^2); the
    cross term (2D) uses centered gradients.
    """
    cell = float(np.prod(mesh.spacing))
    kinetic = 0.5 * cell * float(np.sum(np.asarray(z_t) ** 2))
    grid = np.asarray(z).reshape(mesh.shape)
    potential = 0.0
    for a in range(mesh.dim):
        g = np.moveaxis(grid, a, -1)
        c = np.moveaxis(field_values[:, a, a].reshape(mesh.shape), a, -1)
        cf = 0.5 * (c[..., 1:] + c[..., :-1])
        d = (g[..., 1:] - g[..., :-1]) / mesh.spacing[a]
        potential += 0.5 * cell * float(np.sum(cf * d ** 2))
    if mesh.dim == 2:
        cross = field_values[:, 0, 1].reshape(mesh.shape)
        if np.any(cross):
            d0 = _axis_centered(grid, mesh.spacing[0], 0)
            d1 = _axis_centered(grid, mesh.spacing[1], 1)
            potential += cell * float(np.sum(cross * d0 * d1))
    return kinetic + potential
