import numpy as np
import pytest

import swavelab as sw
from swavelab.errors import ConfigurationError, InvalidFieldError
from swavelab.geometry import gamma0_csv_rows


def test_interval_mesh_nodes_and_normals():
    mesh = sw.build_interval_mesh(0.0, 1.0, 5)
    assert np.allclose(mesh.nodes[:, 0], [0.0, 0.25, 0.5, 0.75, 1.0])
    assert mesh.boundary_indices.tolist() == [0, 4]
    assert mesh.boundary_normals.tolist() == [[-1.0], [1.0]]


def test_rectangle_mesh_counts():
    mesh = sw.build_rectangle_mesh([0.0, 0.0], [1.0, 2.0], (3, 5))
    assert np.allclose(mesh.spacing, [0.5, 0.5])
    assert mesh.num_boundary == 12
    assert mesh.num_nodes == 15
    # every normal is a unit vector with components in {-1, 0, +1}
    norms = np.linalg.norm(mesh.boundary_normals, axis=1)
    assert np.allclose(norms, 1.0)
    assert np.all(np.isin(mesh.boundary_normals, [-1.0, 0.0, 1.0]))


def test_small_resolution_rejected():
    with pytest.raises(ConfigurationError):
        sw.build_interval_mesh(0.0, 1.0, 2)
    with pytest.raises(ConfigurationError):
        sw.build_mesh({"kind": "interval", "lo": 0.0, "hi": 0.0}, 8)


def test_ellipticity_identity(interval_mesh):
    field = sw.principal_identity(interval_mesh.nodes)
    report = sw.check_ellipticity(field, interval_mesh)
    assert report.min_eigenvalue == 1.0
    assert report.passed


def test_ellipticity_sine_min_at_endpoints():
    mesh = sw.build_interval_mesh(0.0, 1.0, 65)
    field = sw.principal_sine_1d(mesh.nodes, base=2.0, amp=1.0)
    # oracle: evaluate on all nodes and take the minimum
    expected = float(np.min(2.0 + np.sin(np.pi * mesh.nodes[:, 0])))
    report = sw.check_ellipticity(field, mesh)
    assert report.min_eigenvalue == pytest.approx(expected, abs=0)
    assert report.min_eigenvalue == pytest.approx(2.0, abs=1e-15)


def test_ellipticity_indefinite_matrix_fails():
    mesh = sw.build_rectangle_mesh([0.0, 0.0], [1.0, 1.0], (5, 5))
    field = sw.principal_constant(mesh.nodes, [[1.0, 0.0], [0.0, -1.0]], s0=0.1)
    report = sw.check_ellipticity(field, mesh)
    assert report.min_eigenvalue == -1.0
    assert not report.passed


def test_asymmetric_field_rejected(interval_mesh):
    mesh = sw.build_rectangle_mesh([0.0, 0.0], [1.0, 1.0], (4, 4))
    field = sw.principal_identity(mesh.nodes)
    field.values[3, 0, 1] = 0.5
    with pytest.raises(InvalidFieldError):
        sw.check_ellipticity(field, mesh)


def test_gamma0_interval_example():
    mesh = sw.build_interval_mesh(0.0, 1.0, 5)
    field = sw.principal_identity(mesh.nodes)
    weight = sw.shifted_quadratic_weight(1.0, [-1.0])
    subset = sw.extract_gamma0(mesh, field, weight)
    assert subset.sigma.tolist() == [-2.0, 4.0]
    assert subset.indices.tolist() == [4]


def test_gamma0_rectangle_positive_edges():
    mesh = sw.build_rectangle_mesh([0.0, 0.0], [1.0, 1.0], (9, 9))
    field = sw.principal_identity(mesh.nodes)
    weight = sw.shifted_quadratic_weight(1.0, [-1.0, -1.0])
    subset = sw.extract_gamma0(mesh, field, weight)
    # oracle: evaluate sigma at every boundary node with its assigned normal
    coords = mesh.nodes[mesh.boundary_indices]
    grad = 2.0 * (coords - np.array([-1.0, -1.0]))
    sigma = np.einsum("mi,mi->m", grad, mesh.boundary_normals)
    assert np.allclose(subset.sigma, sigma)
    for pos in subset.member_positions():
        x = mesh.nodes[subset.boundary_indices[pos]]
        assert x[0] == 1.0 or x[1] == 1.0
    # the corner (1,1) has both adjacent edges positive and stays in
    corner = np.flatnonzero((coords == [1.0, 1.0]).all(axis=1))[0]
    assert subset.member[corner]
    # corners where edges disagree are excluded: (1, 0) and (0, 1)
    for bad in ([1.0, 0.0], [0.0, 1.0]):
        pos = np.flatnonzero((coords == bad).all(axis=1))[0]
        assert not subset.member[pos]


def test_gamma0_constant_weight_empty(interval_mesh):
    from swavelab.fields import constant_weight
    field = sw.principal_identity(interval_mesh.nodes)
    subset = sw.extract_gamma0(interval_mesh, field, constant_weight(3.0, 1))
    assert subset.is_empty


def test_gamma0_scale_invariance(interval_mesh):
    field = sw.principal_identity(interval_mesh.nodes)
    w1 = sw.shifted_quadratic_weight(1.0, [-1.0])
    w5 = sw.shifted_quadratic_weight(5.0, [-1.0])
    s1 = sw.extract_gamma0(interval_mesh, field, w1)
    s5 = sw.extract_gamma0(interval_mesh, field, w5)
    assert np.array_equal(s1.member, s5.member)
    assert np.allclose(s5.sigma, 5.0 * s1.sigma)


def test_gamma0_partitions_boundary():
    mesh = sw.build_rectangle_mesh([0.0, 0.0], [1.0, 2.0], (7, 9))
    field = sw.principal_identity(mesh.nodes)
    weight = sw.shifted_quadratic_weight(2.0, [-0.5, -0.5])
    subset = sw.extract_gamma0(mesh, field, weight)
    members = set(subset.indices.tolist())
    complement = set(subset.boundary_indices.tolist()) - members
    assert members | complement == set(mesh.boundary_indices.tolist())
    assert not members & complement


def test_gamma0_csv_schema(interval_mesh):
    field = sw.principal_identity(interval_mesh.nodes)
    weight = sw.shifted_quadratic_weight(1.0, [-1.0])
    subset = sw.extract_gamma0(interval_mesh, field, weight)
    header, rows = gamma0_csv_rows(interval_mesh, subset)
    assert header == ["node_index", "x1", "sigma", "in_gamma0"]
    assert len(rows) == interval_mesh.num_boundary
