"""Spatial discretization: uniform interval / rectangle meshes, principal-field
validation, and extraction of the observed boundary portion."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigurationError, EllipticityError, InvalidFieldError
from .fields import PrincipalField, WeightFunction

SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class SpatialMesh:
    """Uniform tensor grid on an interval or axis-aligned rectangle.

    Nodes are flattened in C order; ``shape`` gives per-axis counts.  Boundary
    nodes carry a unit outward normal.  In 2D corners are assigned to the edge
    of the lower axis index and additionally record the other adjacent edge's
    normal for conservative sign decisions.
    """

    dim: int
    lo: np.ndarray
    hi: np.ndarray
    shape: tuple
    spacing: np.ndarray
    nodes: np.ndarray
    boundary_indices: np.ndarray
    boundary_normals: np.ndarray
    boundary_axis: np.ndarray
    boundary_is_corner: np.ndarray
    corner_alt_normals: np.ndarray
    interior_mask: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_boundary(self) -> int:
        return self.boundary_indices.size

    def grid_view(self, values: np.ndarray) -> np.ndarray:
        """Reshape flat node arrays (..., N) to grid arrays (..., n1[, n2])."""
        return values.reshape(values.shape[:-1] + self.shape)

    def describe(self) -> dict:
        return {
            "dim": self.dim,
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "shape": list(self.shape),
            "spacing": self.spacing.tolist(),
        }


def build_interval_mesh(lo: float, hi: float, num_nodes: int) -> SpatialMesh:
    return build_mesh({"kind": "interval", "lo": lo, "hi": hi}, num_nodes)


def build_rectangle_mesh(lo, hi, shape) -> SpatialMesh:
    return build_mesh({"kind": "rectangle", "lo": list(lo), "hi": list(hi)}, shape)


def build_mesh(domain_descriptor: dict, resolution) -> SpatialMesh:
    """Build a uniform mesh from a domain descriptor and nodes-per-axis count."""
    kind = domain_descriptor.get("kind")
    if kind == "interval":
        lo = np.array([float(domain_descriptor["lo"])])
        hi = np.array([float(domain_descriptor["hi"])])
        shape = (int(resolution),)
    elif kind == "rectangle":
        lo = np.asarray(domain_descriptor["lo"], dtype=float)
        hi = np.asarray(domain_descriptor["hi"], dtype=float)
        if lo.size != 2 or hi.size != 2:
            raise ConfigurationError("rectangle descriptor needs 2D extents", field="domain")
        res = np.atleast_1d(np.asarray(resolution, dtype=int))
        if res.size == 1:
            res = np.array([res[0], res[0]])
        shape = (int(res[0]), int(res[1]))
    else:
        raise ConfigurationError(f"unknown domain kind {kind!r}", field="domain.kind")

    # 3 nodes per axis is the floor for the one-sided 3-point stencils; the
    # documented 3x5 rectangle relies on it.
    if any(s < 3 for s in shape):
        raise ConfigurationError("resolution must be at least 3 nodes per axis",
                                 field="resolution")
    if np.any(hi <= lo):
        raise ConfigurationError("domain extents are degenerate", field="domain")

    n = lo.size
    axes = [np.linspace(lo[a], hi[a], shape[a]) for a in range(n)]
    spacing = np.array([(hi[a] - lo[a]) / (shape[a] - 1) for a in range(n)])

    if n == 1:
        nodes = axes[0][:, None]
    else:
        g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        nodes = np.column_stack([g0.ravel(), g1.ravel()])

    b_idx, b_nrm, b_axis, b_corner, b_alt = _boundary_structure(shape, n)
    interior = np.ones(nodes.shape[0], dtype=bool)
    interior[b_idx] = False

    return SpatialMesh(dim=n, lo=lo, hi=hi, shape=shape, spacing=spacing,
                       nodes=nodes, boundary_indices=b_idx, boundary_normals=b_nrm,
                       boundary_axis=b_axis, boundary_is_corner=b_corner,
                       corner_alt_normals=b_alt, interior_mask=interior)


def _boundary_structure(shape, n):
    if n == 1:
        idx = np.array([0, shape[0] - 1])
        nrm = np.array([[-1.0], [1.0]])
        axis = np.array([0, 0])
        corner = np.array([False, False])
        alt = np.zeros((2, 1))
        return idx, nrm, axis, corner, alt

    n1, n2 = shape
    flat = lambda i1, i2: i1 * n2 + i2
    idx, nrm, axis, corner, alt = [], [], [], [], []

    # Axis-0 edges own the corners (lower axis index priority).
    for i1, sign in ((0, -1.0), (n1 - 1, 1.0)):
        for i2 in range(n2):
            idx.append(flat(i1, i2))
            nrm.append([sign, 0.0])
            axis.append(0)
            is_c = i2 in (0, n2 - 1)
            corner.append(is_c)
            alt.append([0.0, -1.0 if i2 == 0 else 1.0] if is_c else [0.0, 0.0])
    # Axis-1 edges exclude the corners.
    for i2, sign in ((0, -1.0), (n2 - 1, 1.0)):
        for i1 in range(1, n1 - 1):
            idx.append(flat(i1, i2))
            nrm.append([0.0, sign])
            axis.append(1)
            corner.append(False)
            alt.append([0.0, 0.0])

    order = np.argsort(idx)
    return (np.asarray(idx)[order], np.asarray(nrm)[order], np.asarray(axis)[order],
            np.asarray(corner)[order], np.asarray(alt)[order])


# ---------------------------------------------------------------------------
# Ellipticity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EllipticityReport:
    min_eigenvalue: float
    declared_s0: float
    passed: bool
    argmin_node: int


def check_ellipticity(field: PrincipalField, mesh: SpatialMesh) -> EllipticityReport:
    """Minimum over mesh nodes of the smallest eigenvalue of the principal matrix."""
    vals = field.values
    if vals.shape[0] != mesh.num_nodes:
        raise InvalidFieldError("principal field is not defined on every mesh node")
    asym = np.max(np.abs(vals - np.swapaxes(vals, -1, -2)))
    scale = max(np.max(np.abs(vals)), 1.0)
    if asym > SYMMETRY_RTOL * scale:
        raise InvalidFieldError(f"principal matrix asymmetric (max |b - b^T| = {asym:.3e})")
    eigs = np.linalg.eigvalsh(vals)
    mins = eigs[..., 0]
    argmin = int(np.argmin(mins))
    min_eig = float(mins[argmin])
    return EllipticityReport(min_eigenvalue=min_eig, declared_s0=field.s0,
                             passed=min_eig >= field.s0, argmin_node=argmin)


def require_elliptic(field: PrincipalField, mesh: SpatialMesh) -> None:
    report = check_ellipticity(field, mesh)
    if report.min_eigenvalue <= 0:
        raise EllipticityError(
            f"principal matrix not positive definite at node {report.argmin_node} "
            f"(min eigenvalue {report.min_eigenvalue:.3e})")


# ---------------------------------------------------------------------------
# Observed boundary portion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundarySubset:
    """Boundary nodes where the conormal slope of the weight is strictly positive.

    ``sigma`` holds the slope at every boundary node (assigned-edge normal);
    ``member`` marks the selected subset; corners with disagreeing adjacent
    edges are conservatively excluded.
    """

    boundary_indices: np.ndarray
    sigma: np.ndarray
    member: np.ndarray
    indices: np.ndarray = dc_field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "indices", self.boundary_indices[self.member])

    @property
    def is_empty(self) -> bool:
        return not bool(np.any(self.member))

    def member_positions(self) -> np.ndarray:
        return np.flatnonzero(self.member)


def extract_gamma0(mesh: SpatialMesh, field: PrincipalField,
                   d_field: WeightFunction) -> BoundarySubset:
    """Select boundary nodes with sigma = (b grad d) . nu > 0 (strictly)."""
    require_elliptic(field, mesh)
    b_idx = mesh.boundary_indices
    coords = mesh.nodes[b_idx]
    grad_d = d_field.grad(coords)
    b_vals = field.values[b_idx]
    conormal = np.einsum("mij,mi->mj", b_vals, grad_d)
    sigma = np.einsum("mj,mj->m", conormal, mesh.boundary_normals)
    member = sigma > 0.0
    if mesh.dim == 2:
        sigma_alt = np.einsum("mj,mj->m", conormal, mesh.corner_alt_normals)
        corners = mesh.boundary_is_corner
        disagree = corners & ((sigma > 0.0) != (sigma_alt > 0.0))
        member = member & ~disagree
    return BoundarySubset(boundary_indices=b_idx, sigma=sigma, member=member)


def gamma0_csv_rows(mesh: SpatialMesh, subset: BoundarySubset):
    """Rows (node_index, coordinates..., sigma, in_gamma0) for the report writer."""
    header = ["node_index"] + [f"x{a+1}" for a in range(mesh.dim)] + ["sigma", "in_gamma0"]
    rows = []
    for pos, idx in enumerate(subset.boundary_indices):
        coords = mesh.nodes[idx]
        rows.append([int(idx), *[float(c) for c in coords],
                     float(subset.sigma[pos]), int(subset.member[pos])])
    return header, rows
