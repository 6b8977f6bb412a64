import numpy as np
import pytest

import swavelab as sw
from swavelab.errors import (ConfigurationError, DataError,
                             UndefinedRatioError, UnsupportedModeError)
from swavelab.numerics import (DivergenceFormOperator, time_trapezoid_weights,
                               trapezoid_weights)
from swavelab.trajectory_io import dump_trajectories, load_trajectories
from conftest import sine_data


def make_coeffs(mesh, **kwargs):
    return sw.CoefficientSet(principal=sw.principal_identity(mesh.nodes), **kwargs)


def cfl_dt(mesh, factor=0.5):
    return factor * float(np.min(mesh.spacing))


# ---------------------------------------------------------------------------
# Forward simulation basics
# ---------------------------------------------------------------------------

def test_zero_data_zero_solution(interval_mesh):
    coeffs = make_coeffs(interval_mesh)
    zero = np.zeros(interval_mesh.num_nodes)
    ens = sw.simulate_forward(coeffs, zero, zero, interval_mesh, 0.5,
                              cfl_dt(interval_mesh), paths=3, seed=1)
    assert np.all(ens.z == 0.0)
    assert np.all(ens.z_t == 0.0)


def test_dirichlet_holds_exactly(interval_mesh):
    coeffs = make_coeffs(
        interval_mesh,
        force=sw.SeparableForce(g1=1.0, g2=sine_data(interval_mesh, 2)))
    z0 = sine_data(interval_mesh)
    ens = sw.simulate_forward(coeffs, z0, np.zeros_like(z0), interval_mesh, 0.5,
                              cfl_dt(interval_mesh), paths=4, seed=9)
    assert np.all(ens.z[:, :, interval_mesh.boundary_indices] == 0.0)
    assert np.all(ens.z_t[:, :, interval_mesh.boundary_indices] == 0.0)


def test_cfl_violation_rejected(interval_mesh):
    coeffs = make_coeffs(interval_mesh)
    zero = np.zeros(interval_mesh.num_nodes)
    with pytest.raises(ConfigurationError):
        sw.simulate_forward(coeffs, zero, zero, interval_mesh, 0.5,
                            4.0 * cfl_dt(interval_mesh), paths=1, seed=0)


def test_boundary_data_rejected(interval_mesh):
    coeffs = make_coeffs(interval_mesh)
    bad = np.ones(interval_mesh.num_nodes)
    with pytest.raises(DataError):
        sw.simulate_forward(coeffs, bad, bad, interval_mesh, 0.5,
                            cfl_dt(interval_mesh), paths=1, seed=0)


def test_deterministic_eigenmode_convergence():
    T = 2.0
    errs = []
    for res in (17, 33, 65):
        mesh = sw.build_interval_mesh(0.0, 1.0, res)
        coeffs = make_coeffs(mesh)
        x = mesh.nodes[:, 0]
        z0 = sine_data(mesh)
        ens = sw.solve_deterministic(coeffs, z0, np.zeros_like(z0), mesh, T,
                                     cfl_dt(mesh))
        exact = np.cos(np.pi * ens.times)[:, None] * np.sin(np.pi * x)[None, :]
        wt = time_trapezoid_weights(ens.num_steps + 1, ens.dt)
        wx = trapezoid_weights(mesh)
        errs.append(np.sqrt(np.einsum("kn,k,n->", (ens.z[0] - exact) ** 2, wt, wx)))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.5) & (ratios < 4.5))


def test_linearity_and_determinism(interval_mesh):
    coeffs = make_coeffs(
        interval_mesh, b4=sw.constant_field(0.4),
        force=sw.SeparableForce(g1=1.0, g2=sine_data(interval_mesh, 2)))
    u0 = sine_data(interval_mesh, 1)
    v0 = sine_data(interval_mesh, 3)
    dt = cfl_dt(interval_mesh)
    kw = dict(mesh=interval_mesh, T=0.5, dt=dt, paths=3, seed=5)

    def run(z0, z1, scale_force=1.0):
        c = sw.CoefficientSet(
            principal=coeffs.principal, b4=coeffs.b4,
            force=sw.SeparableForce(g1=1.0,
                                    g2=scale_force * sine_data(interval_mesh, 2)))
        return sw.simulate_forward(c, z0, z1, **kw)

    a, b = 0.7, -1.3
    combined = run(a * u0 + b * v0, a * v0 + b * u0, scale_force=a + b)
    ea = run(u0, v0, 1.0)
    eb = run(v0, u0, 1.0)
    recomb = a * ea.z + b * eb.z
    assert np.allclose(combined.z, recomb, rtol=1e-10, atol=1e-12)

    # identical configuration twice: byte-identical ensembles
    again = run(a * u0 + b * v0, a * v0 + b * u0, scale_force=a + b)
    assert combined.z.tobytes() == again.z.tobytes()
    assert combined.increments.tobytes() == again.increments.tobytes()


def test_path_identity_independent_of_batch_size(interval_mesh):
    coeffs = make_coeffs(
        interval_mesh,
        force=sw.SeparableForce(g1=1.0, g2=sine_data(interval_mesh, 1)))
    zero = np.zeros(interval_mesh.num_nodes)
    small = sw.simulate_forward(coeffs, zero, zero, interval_mesh, 0.25,
                                cfl_dt(interval_mesh), paths=2, seed=21)
    large = sw.simulate_forward(coeffs, zero, zero, interval_mesh, 0.25,
                                cfl_dt(interval_mesh), paths=5, seed=21)
    assert np.array_equal(small.z, large.z[:2])


def test_threads_do_not_change_results(interval_mesh):
    coeffs = make_coeffs(
        interval_mesh,
        force=sw.SeparableForce(g1=1.0, g2=sine_data(interval_mesh, 2)))
    zero = np.zeros(interval_mesh.num_nodes)
    one = sw.simulate_forward(coeffs, zero, zero, interval_mesh, 0.25,
                              cfl_dt(interval_mesh), paths=6, seed=2, threads=1)
    four = sw.simulate_forward(coeffs, zero, zero, interval_mesh, 0.25,
                               cfl_dt(interval_mesh), paths=6, seed=2, threads=4)
    assert one.z.tobytes() == four.z.tobytes()


# ---------------------------------------------------------------------------
# Stochastic accuracy against the exact single-mode convolution
# ---------------------------------------------------------------------------

def mode_oracle(mesh, increments, dt, phi):
    """Exact rotation propagation of left-endpoint impulses at the discrete
    mode frequency; shares the simulation's increments."""
    L = DivergenceFormOperator(mesh, sw.principal_identity(mesh.nodes).values)
    omega = float(np.sqrt(phi @ (-L(phi)) / (phi @ phi)))
    P, K = increments.shape
    a = np.zeros(P)
    ap = np.zeros(P)
    out = np.zeros((P, K + 1, mesh.num_nodes))
    cw, sn = np.cos(omega * dt), np.sin(omega * dt)
    for k in range(K):
        ap_kick = ap + increments[:, k]
        a, ap = cw * a + sn / omega * ap_kick, -omega * sn * a + cw * ap_kick
        out[:, k + 1] = a[:, None] * phi[None, :]
    return out


def test_additive_noise_strong_order_one():
    mesh = sw.build_interval_mesh(0.0, 1.0, 33)
    phi = sine_data(mesh)
    coeffs = make_coeffs(mesh, force=sw.SeparableForce(g1=1.0, g2=phi))
    zero = np.zeros(mesh.num_nodes)
    wx = trapezoid_weights(mesh)
    errs = []
    for dt in (1 / 64, 1 / 128, 1 / 256):
        ens = sw.simulate_forward(coeffs, zero, zero, mesh, 1.0, dt, paths=64, seed=0)
        oracle = mode_oracle(mesh, ens.increments, dt, phi)
        wt = time_trapezoid_weights(ens.num_steps + 1, dt)
        per_path = np.sqrt(np.einsum("pkn,k,n->p", (ens.z - oracle) ** 2, wt, wx))
        errs.append(np.sqrt(np.mean(per_path ** 2)))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 1.7) & (ratios < 2.3))


def test_ito_isometry():
    report = sw.ito_isometry_check(np.ones(64), dt=1 / 64, paths=2000, seed=4)
    assert report.exact_second_moment == pytest.approx(1.0)
    assert report.passed


# ---------------------------------------------------------------------------
# Boundary trace
# ---------------------------------------------------------------------------

def test_trace_closed_form_eigenmode():
    mesh = sw.build_interval_mesh(0.0, 1.0, 129)
    coeffs = make_coeffs(mesh)
    z0 = sine_data(mesh)
    T = 2.0
    ens = sw.solve_deterministic(coeffs, z0, np.zeros_like(z0), mesh, T, cfl_dt(mesh))
    weight = sw.shifted_quadratic_weight(1.0, [-1.0])
    subset = sw.extract_gamma0(mesh, coeffs.principal, weight)
    res = sw.spde.boundary_normal_trace(ens, subset)
    # dz/dnu at x = 1 is -pi cos(pi t); squared integral pi^2 (T/2 + sin(2 pi T)/(4 pi))
    exact_sq = np.pi ** 2 * (T / 2 + np.sin(2 * np.pi * T) / (4 * np.pi))
    assert res.norm == pytest.approx(np.sqrt(exact_sq), rel=2e-3)
    times = ens.times
    assert np.allclose(res.series[0, :, 0], -np.pi * np.cos(np.pi * times), atol=5e-3)


def test_trace_zero_ensemble_and_empty_subset(interval_mesh):
    from swavelab.fields import constant_weight
    coeffs = make_coeffs(interval_mesh)
    zero = np.zeros(interval_mesh.num_nodes)
    ens = sw.simulate_forward(coeffs, zero, zero, interval_mesh, 0.25,
                              cfl_dt(interval_mesh), paths=2, seed=0)
    subset = sw.extract_gamma0(interval_mesh, coeffs.principal,
                               constant_weight(1.0, 1))
    res = sw.spde.boundary_normal_trace(ens, subset)
    assert res.empty and res.norm == 0.0


def test_trace_norm_invariant_under_path_reordering(interval_mesh):
    coeffs = make_coeffs(
        interval_mesh,
        force=sw.SeparableForce(g1=1.0, g2=sine_data(interval_mesh, 2)))
    zero = np.zeros(interval_mesh.num_nodes)
    ens = sw.simulate_forward(coeffs, zero, zero, interval_mesh, 0.5,
                              cfl_dt(interval_mesh), paths=5, seed=8)
    weight = sw.shifted_quadratic_weight(1.0, [-1.0])
    subset = sw.extract_gamma0(interval_mesh, coeffs.principal, weight)
    base = sw.spde.boundary_normal_trace(ens, subset).norm
    perm = np.random.default_rng(0).permutation(ens.paths)
    shuffled = sw.PathEnsemble(mesh=ens.mesh, dt=ens.dt, T=ens.T,
                               num_steps=ens.num_steps, seed=ens.seed,
                               z=ens.z[perm], z_t=ens.z_t[perm],
                               trace=ens.trace[perm], increments=ens.increments[perm],
                               z0=ens.z0, z1=ens.z1)
    assert sw.spde.boundary_normal_trace(shuffled, subset).norm == pytest.approx(base)


# ---------------------------------------------------------------------------
# Reversed deterministic solve
# ---------------------------------------------------------------------------

def test_reversed_zero_terminal_velocity(interval_mesh):
    coeffs = make_coeffs(interval_mesh)
    zero = np.zeros(interval_mesh.num_nodes)
    traj = sw.solve_deterministic_reversed(coeffs, zero, interval_mesh, 1.0,
                                           cfl_dt(interval_mesh))
    assert np.all(traj.z == 0.0)


def test_reversed_eigenmode_closed_form():
    mesh = sw.build_interval_mesh(0.0, 1.0, 129)
    coeffs = make_coeffs(mesh)
    w = sine_data(mesh)
    T = 2.0
    traj = sw.solve_deterministic_reversed(coeffs, w, mesh, T, cfl_dt(mesh))
    x = mesh.nodes[:, 0]
    t = traj.times
    exact = -np.sin(np.pi * (T - t))[:, None] * np.sin(np.pi * x)[None, :] / np.pi
    assert np.max(np.abs(traj.z[0, -1])) == 0.0
    assert np.allclose(traj.z_t[0, -1], w, atol=1e-12)
    assert np.max(np.abs(traj.z[0] - exact)) < 2e-4


def test_reversed_rejects_stochastic(interval_mesh):
    coeffs = make_coeffs(interval_mesh, b4=sw.constant_field(1.0))
    with pytest.raises(UnsupportedModeError):
        sw.solve_deterministic_reversed(coeffs, np.zeros(interval_mesh.num_nodes),
                                        interval_mesh, 1.0, cfl_dt(interval_mesh))


def test_forward_backward_roundtrip():
    mesh = sw.build_interval_mesh(0.0, 1.0, 65)
    coeffs = make_coeffs(mesh, b3=sw.constant_field(0.5))
    rng = np.random.default_rng(3)
    z0 = sine_data(mesh, 1) + 0.3 * sine_data(mesh, 2)
    z1 = 0.5 * sine_data(mesh, 3)
    dt = cfl_dt(mesh)
    fwd = sw.solve_deterministic(coeffs, z0, z1, mesh, 1.0, dt)
    back = sw.solve_deterministic_reversed(coeffs, fwd.z_t[0, -1], mesh, 1.0, dt,
                                           terminal_displacement=fwd.z[0, -1])
    err0 = np.max(np.abs(back.z0[0] - z0))
    err1 = np.max(np.abs(back.z1[0] - z1))
    assert err0 < 1e-10 and err1 < 1e-10  # time-reversible scheme


# ---------------------------------------------------------------------------
# Energy, hidden regularity, norms
# ---------------------------------------------------------------------------

def test_energy_drift_second_order():
    mesh = sw.build_interval_mesh(0.0, 1.0, 65)
    coeffs = make_coeffs(mesh)
    z0 = sine_data(mesh)
    drifts = []
    for dt in (cfl_dt(mesh), 0.5 * cfl_dt(mesh)):
        ens = sw.solve_deterministic(coeffs, z0, np.zeros_like(z0), mesh, 2.0, dt)
        E = sw.energy_series(mesh, coeffs.principal, ens.z[0], ens.z_t[0])
        drifts.append(np.max(np.abs(E - E[0])) / E[0])
    assert drifts[0] / drifts[1] == pytest.approx(4.0, rel=0.2)


def test_hidden_regularity_eigenmode():
    results = []
    for res in (33, 65):
        mesh = sw.build_interval_mesh(0.0, 1.0, res)
        coeffs = make_coeffs(mesh)
        z0 = sine_data(mesh)
        ens = sw.solve_deterministic(coeffs, z0, np.zeros_like(z0), mesh, 2.0,
                                     cfl_dt(mesh))
        results.append(sw.hidden_regularity_ratio(ens, coeffs).ratio)
    # closed form at T = 2: trace norm sqrt(2 pi^2), data norm pi/sqrt(2)
    assert results[1] == pytest.approx(2.0, rel=5e-3)
    assert abs(results[1] - results[0]) / results[0] < 0.05


def test_hidden_regularity_zero_data(interval_mesh):
    coeffs = make_coeffs(interval_mesh)
    zero = np.zeros(interval_mesh.num_nodes)
    ens = sw.simulate_forward(coeffs, zero, zero, interval_mesh, 0.25,
                              cfl_dt(interval_mesh), paths=1, seed=0)
    with pytest.raises(UndefinedRatioError):
        sw.hidden_regularity_ratio(ens, coeffs)


def test_A_norm_contributions(interval_mesh):
    coeffs = sw.CoefficientSet(
        principal=sw.principal_identity(interval_mesh.nodes),
        b1=sw.constant_field(2.0),
        b2=sw.constant_field([3.0], vector=True),
        b4=sw.constant_field(1.0))
    value = sw.compute_A_norm(coeffs, interval_mesh, times=np.linspace(0, 1, 5))
    assert value == pytest.approx(4.0 + 9.0 + 0.0 + 1.0 + 1.0)
    # b3 enters through the dimension-n spatial norm (L^1 in 1D)
    coeffs2 = sw.CoefficientSet(
        principal=sw.principal_identity(interval_mesh.nodes),
        b3=sw.constant_field(2.0))
    value2 = sw.compute_A_norm(coeffs2, interval_mesh, times=np.linspace(0, 1, 5))
    assert value2 == pytest.approx(1.0 + 4.0)  # int_0^1 |2| dx = 2, squared


def test_separable_force_norm(interval_mesh):
    g2 = sine_data(interval_mesh, 1)
    coeffs = make_coeffs(interval_mesh, force=sw.SeparableForce(g1=2.0, g2=g2))
    zero = np.zeros(interval_mesh.num_nodes)
    ens = sw.simulate_forward(coeffs, zero, zero, interval_mesh, 1.0,
                              cfl_dt(interval_mesh), paths=3, seed=0)
    from swavelab.spde import force_l2_norm
    from swavelab.numerics import l2_norm
    expected = 2.0 * l2_norm(interval_mesh, g2)  # |g1|_{L2(0,1)} = 2
    assert force_l2_norm(coeffs, interval_mesh, ens) == pytest.approx(expected, rel=1e-6)


# ---------------------------------------------------------------------------
# Binary trajectory format
# ---------------------------------------------------------------------------

def test_trajectory_binary_roundtrip(tmp_path, interval_mesh):
    coeffs = make_coeffs(
        interval_mesh,
        force=sw.SeparableForce(g1=1.0, g2=sine_data(interval_mesh, 2)))
    zero = np.zeros(interval_mesh.num_nodes)
    ens = sw.simulate_forward(coeffs, zero, zero, interval_mesh, 0.25,
                              cfl_dt(interval_mesh), paths=3, seed=1)
    path = tmp_path / "z.bin"
    dump_trajectories(path, ens.z)
    loaded = load_trajectories(path)
    assert loaded.shape == ens.z.shape
    assert loaded.tobytes() == ens.z.tobytes()
    # header: three little-endian int64 values
    raw = np.frombuffer(path.read_bytes()[:24], dtype="<i8")
    assert raw.tolist() == list(ens.z.shape)


def test_tabulated_force_matches_separable(interval_mesh):
    """A tabulated deterministic g(t, x) equal to g1(t) g2(x) reproduces the
    separable mode path for path."""
    g2 = sine_data(interval_mesh, 2)
    dt = cfl_dt(interval_mesh)
    steps = int(round(0.5 / dt))
    table = np.broadcast_to(g2, (steps, interval_mesh.num_nodes)).copy()
    sep = make_coeffs(interval_mesh, force=sw.SeparableForce(g1=1.0, g2=g2))
    tab = make_coeffs(interval_mesh, force=sw.TabulatedForce(values=table))
    zero = np.zeros(interval_mesh.num_nodes)
    kw = dict(mesh=interval_mesh, T=0.5, dt=dt, paths=3, seed=6)
    ens_sep = sw.simulate_forward(sep, zero, zero, **kw)
    ens_tab = sw.simulate_forward(tab, zero, zero, **kw)
    assert np.allclose(ens_sep.z, ens_tab.z, rtol=1e-13, atol=1e-15)


def test_hidden_regularity_stochastic_ensemble(interval_mesh):
    coeffs = make_coeffs(
        interval_mesh,
        force=sw.SeparableForce(g1=1.0, g2=sine_data(interval_mesh, 2)))
    z0 = sine_data(interval_mesh)
    ens = sw.simulate_forward(coeffs, z0, np.zeros_like(z0), interval_mesh, 1.0,
                              cfl_dt(interval_mesh), paths=8, seed=12)
    result = sw.hidden_regularity_ratio(ens, coeffs)
    assert np.isfinite(result.ratio) and result.ratio > 0
    assert result.force_norm > 0 and result.data_norm > 0
