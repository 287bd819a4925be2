import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from conftest import I2, X, Y, Z, fig1_problem, identity_trajectory, random_hermitian
from robustavg.evaluation import (check_averaging_bounds, default_omega_grid,
                                  filter_function, filter_function_measure,
                                  interaction_unitary, monte_carlo_sweep, time_domain_variance,
                                  write_sweep_csv)
from robustavg.propagation import (ControlProblem, nominal_fidelity, propagate_hamiltonians,
                                   propagate_nominal)
from robustavg.uncertainty import ConstantParam, PWCNoise

V_FIG1 = np.array([0.4, -1.1, 2.0, 0.3, -0.7])


# ---------------------------------------------------------------------- sweeps

def test_sweep_zero_magnitude_is_nominal():
    p = fig1_problem()
    F = nominal_fidelity(propagate_nominal(p, V_FIG1), p.target)
    rep = monte_carlo_sweep(p, V_FIG1, PWCNoise(operator=Z, intervals=2), [0.0], 7, seed=3)
    assert rep.fid_mean[0] == pytest.approx(F, abs=1e-15)
    assert rep.fid_min[0] == pytest.approx(F, abs=1e-15)
    assert rep.fid_max[0] == pytest.approx(F, abs=1e-15)


def test_fixed_parameter_sweep_matches_direct_propagation():
    p = fig1_problem()
    spec = ConstantParam(operators=(Z,), delta=0.05, sampling="fixed")
    grid = np.linspace(-0.05, 0.05, 11)
    rep = monte_carlo_sweep(p, V_FIG1, spec, grid, 3, seed=0)
    for th, fmean, fmin in zip(rep.magnitudes, rep.fid_mean, rep.fid_min):
        hams = p.step_hamiltonians(V_FIG1) + th * Z
        direct = nominal_fidelity(propagate_hamiltonians(hams, p.dt), p.target)
        assert fmean == pytest.approx(direct, abs=1e-13)
        assert fmin == pytest.approx(direct, abs=1e-13)


def test_sweep_deterministic_and_thread_independent():
    p = fig1_problem()
    spec = PWCNoise(operator=Z, intervals=5, delta=0.1)
    a = monte_carlo_sweep(p, V_FIG1, spec, [0.02, 0.05], 20, seed=11, threads=1)
    b = monte_carlo_sweep(p, V_FIG1, spec, [0.05, 0.02], 20, seed=11, threads=4)
    for field in ("magnitudes", "fid_mean", "fid_min", "fid_max"):
        np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
    c = monte_carlo_sweep(p, V_FIG1, spec, [0.02, 0.05], 20, seed=12)
    assert not np.array_equal(a.fid_mean, c.fid_mean)


@given(st.integers(0, 2**31 - 1))
def test_sweep_order_invariant(seed):
    p = fig1_problem(M=10)
    rep = monte_carlo_sweep(p, V_FIG1, PWCNoise(operator=Z, intervals=5), [0.3, 0.0, 0.1],
                            5, seed=seed)
    assert np.all(np.diff(rep.magnitudes) >= 0)
    assert np.all(rep.fid_min <= rep.fid_mean) and np.all(rep.fid_mean <= rep.fid_max)


def test_doubling_samples_moves_mean_within_noise():
    p = fig1_problem()
    spec = PWCNoise(operator=Z, intervals=5)
    n = 200
    small = monte_carlo_sweep(p, V_FIG1, spec, [0.05], n, seed=5)
    big = monte_carlo_sweep(p, V_FIG1, spec, [0.05], 2 * n, seed=6)
    # spread estimate from an explicit sample
    rng = np.random.default_rng(0)
    from robustavg.propagation import perturbed_fidelity
    from robustavg.uncertainty import sample_perturbation
    f = [perturbed_fidelity(p, V_FIG1, sample_perturbation(spec, p, V_FIG1, 0.05, rng))
         for _ in range(n)]
    sigma = np.std(f)
    assert abs(small.fid_mean[0] - big.fid_mean[0]) < 3 * sigma / np.sqrt(n)


def test_sweep_warns_beyond_bound():
    p = fig1_problem(M=10)
    with pytest.warns(UserWarning, match="exceeds"):
        monte_carlo_sweep(p, V_FIG1, ConstantParam(operators=(Z,), delta=0.05), [0.1], 2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        monte_carlo_sweep(p, V_FIG1, ConstantParam(operators=(Z,), delta=0.05), [0.05], 2)


def test_sweep_csv_format(tmp_path):
    p = fig1_problem(M=10)
    spec = PWCNoise(operator=Z, intervals=5)
    reps = [monte_carlo_sweep(p, V_FIG1, spec, [0, 0.1], 3, label=k) for k in ("stage1", "robust")]
    path = tmp_path / "sweep.csv"
    write_sweep_csv(path, reps)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "magnitude,n_samples,fid_mean,fid_min,fid_max,label"
    assert [ln.split(",")[-1] for ln in lines[1:]] == ["stage1"] * 2 + ["robust"] * 2
    assert float(lines[2].split(",")[2]) == reps[0].fid_mean[1]


# --------------------------------------------------------- interaction frame

def test_interaction_zero_perturbation_is_identity(rng):
    p = fig1_problem()
    traj = propagate_nominal(p, V_FIG1)
    res = interaction_unitary(traj, np.zeros((p.M, 2, 2)))
    np.testing.assert_allclose(res.R, np.broadcast_to(I2, res.R.shape), atol=1e-15)
    np.testing.assert_allclose(res.R_bar, I2, atol=1e-15)


def test_interaction_constant_G_is_exact(rng):
    # identity nominal motion keeps G_t = H_tilde constant
    traj = identity_trajectory(2, 30, 0.1)
    H = random_hermitian(rng, 2, 0.3)
    res = interaction_unitary(traj, np.broadcast_to(H, (30, 2, 2)))
    np.testing.assert_allclose(res.R[-1], res.R_bar, atol=1e-13)
    np.testing.assert_allclose(res.R_bar, expm(-1j * 3.0 * H), atol=1e-13)


def test_interaction_first_order_consistency(rng):
    M = 400
    hams = np.broadcast_to(random_hermitian(rng, 2), (M, 2, 2)) + \
        np.array([random_hermitian(rng, 2, 0.5) for _ in range(M // 40)]).repeat(40, axis=0)
    pert = 1e-4 * np.array([random_hermitian(rng, 2) for _ in range(M)])
    traj = propagate_hamiltonians(hams, 1.0 / M)
    res = interaction_unitary(traj, pert, nominal_hams=hams)
    assert res.residual <= 1e-6


def test_interaction_residual_shrinks_with_M(rng):
    H0, B = random_hermitian(rng, 2), random_hermitian(rng, 2, 1e-2)
    res = []
    for M in (50, 100, 200, 400):
        hams = np.broadcast_to(H0, (M, 2, 2))
        traj = propagate_hamiltonians(hams, 1.0 / M)
        res.append(interaction_unitary(traj, np.broadcast_to(B, (M, 2, 2)), hams).residual)
    assert all(b < a for a, b in zip(res, res[1:]))
    assert res[0] / res[-1] > 6


def test_interaction_shape_mismatch():
    traj = identity_trajectory(2, 5)
    with pytest.raises(ValueError, match="shape"):
        interaction_unitary(traj, np.zeros((4, 2, 2)))


# ------------------------------------------------------------- averaging bounds

def test_bounds_zero_perturbation():
    traj = propagate_nominal(fig1_problem(), V_FIG1)
    bc = check_averaging_bounds(traj, np.zeros((50, 2, 2)), 0.0)
    assert (bc.gamma_bar, bc.gamma_tilde, bc.avg_dev, bc.fluct_dev) == (0, 0, 0, 0)
    assert bc.avg_bound == 0 and bc.fluct_bound == 0


def test_bounds_constant_interaction(rng):
    traj = identity_trajectory(2, 20, 0.05)
    H = random_hermitian(rng, 2)
    delta = np.linalg.norm(H, 2)
    bc = check_averaging_bounds(traj, np.broadcast_to(H, (20, 2, 2)), delta)
    assert bc.gamma_tilde == pytest.approx(0, abs=1e-13)
    assert bc.fluct_bound == pytest.approx(0, abs=1e-13)
    assert bc.fluct_dev == pytest.approx(0, abs=1e-13)
    assert bc.gamma_bar == pytest.approx(1.0)


def test_bounds_fig1_instance():
    p = fig1_problem()
    traj = propagate_nominal(p, V_FIG1)
    bc = check_averaging_bounds(traj, np.broadcast_to(0.05 * Z, (p.M, 2, 2)), 0.05)
    r1, r2 = bc.ratios
    assert bc.ok and 0 < r1 <= 1 and 0 < r2 <= 1


@given(st.integers(0, 2**31 - 1))
def test_bounds_hold_random(seed):
    rng = np.random.default_rng(seed)
    M = int(rng.integers(5, 60))
    T = rng.uniform(0.2, 3.0)
    hams = np.array([random_hermitian(rng, 2, 2.0) for _ in range(M)])
    traj = propagate_hamiltonians(hams, T / M)
    pert = np.array([random_hermitian(rng, 2) for _ in range(M)])
    delta = rng.uniform(0.01, 1.0) / T
    pert *= delta / max(np.linalg.norm(h, 2) for h in pert)
    assert check_averaging_bounds(traj, pert, delta).ok


def test_bounds_reject_undersized_delta():
    traj = identity_trajectory(2, 4)
    with pytest.raises(ValueError, match="exceeds delta"):
        check_averaging_bounds(traj, np.broadcast_to(Z, (4, 2, 2)), 0.5)
    with pytest.raises(ValueError):
        check_averaging_bounds(traj, np.zeros((4, 2, 2)), -1.0)


def test_infidelity_gap_follows_averaging_rate():
    # pi rotation about X with sigma_z detuning: the gap is second order in delta
    p = ControlProblem(np.zeros((2, 2)), X[None], -1j * X, 1.0, 1, 40)
    v = np.array([np.pi / 2])
    traj = propagate_nominal(p, v)
    F0 = nominal_fidelity(traj, p.target)
    deltas = 0.2 / 2.0 ** np.arange(6)
    gaps, model = [], []
    for d in deltas:
        pert = np.broadcast_to(d * Z, (p.M, 2, 2))
        bc = check_averaging_bounds(traj, pert, d)
        gaps.append(F0 - nominal_fidelity(
            propagate_hamiltonians(p.step_hamiltonians(v) + pert, p.dt), p.target))
        model.append((bc.gamma_bar * d + bc.gamma_tilde * d ** 2) ** 2)
    gaps, model = np.array(gaps), np.array(model)
    ratios = gaps[:-1] / gaps[1:]
    assert np.all((ratios > 3) & (ratios < 5))
    c = gaps / model
    assert c.max() / c.min() < 10


# ------------------------------------------------------------- filter function

def test_filter_zero_spectrum():
    traj = propagate_nominal(fig1_problem(), V_FIG1)
    assert filter_function_measure(traj, Z, lambda w: np.zeros_like(w)) == 0.0


def test_filter_identity_closed_form(rng):
    T, M = 2.0, 4000
    traj = identity_trajectory(2, M, T / M)
    B = random_hermitian(rng, 2)
    w = np.array([-7.3, -1.0, 0.5, 2.2, 11.0])
    closed = np.trace(B @ B).real / np.pi * (1 - np.exp(1j * w * T) + 1j * w * T) / w ** 2
    np.testing.assert_allclose(filter_function(traj, B, w), closed, rtol=1e-5)


def _lag_problem():
    # time-independent nominal Hamiltonian keeps c(t, t') a function of t - t'
    H = 0.8 * Z + 1.3 * X
    M, T = 200, 2.0
    return propagate_hamiltonians(np.broadcast_to(H, (M, 2, 2)), T / M), 0.6 * X + 0.3 * Y


def _mc_variance(traj, B, cov, n, rng):
    A = np.einsum("tba,bc,tcd->tad", traj.samples.conj(), B, traj.samples)
    w = np.full(traj.M + 1, traj.dt)
    w[[0, -1]] *= 0.5
    Lc = np.linalg.cholesky(cov + 1e-12 * np.eye(len(cov)))
    th = rng.standard_normal((n, len(cov))) @ Lc.T
    G = np.einsum("kt,tab->kab", th * w, A)
    return np.mean(np.sum(np.abs(G) ** 2, axis=(1, 2)))


def test_filter_white_spectrum_matches_time_domain_mc():
    traj, B = _lag_problem()
    S0 = 0.05
    J = filter_function_measure(traj, B, lambda w: np.full_like(w, S0))
    # band-limited white noise at the grid Nyquist frequency is uncorrelated on the grid
    cov = (2 * np.pi * S0 / traj.dt) * np.eye(traj.M + 1)
    mc = _mc_variance(traj, B, cov, 4000, np.random.default_rng(2))
    assert 2 * np.pi * J == pytest.approx(mc, rel=0.05)


def test_filter_colored_spectrum_matches_time_domain():
    traj, B = _lag_problem()
    sig = 4.0
    S = lambda w: np.exp(-w ** 2 / (2 * sig ** 2))
    s = lambda tau: sig * np.sqrt(2 * np.pi) * np.exp(-(sig * tau) ** 2 / 2)
    J = filter_function_measure(traj, B, S, np.linspace(-12 * sig, 12 * sig, 4001))
    td = time_domain_variance(traj, B, s)
    assert 2 * np.pi * J == pytest.approx(td, rel=1e-3)
    t = traj.dt * np.arange(traj.M + 1)
    mc = _mc_variance(traj, B, s(t[:, None] - t[None, :]), 4000, np.random.default_rng(4))
    assert td == pytest.approx(mc, rel=0.05)


def test_filter_rejects_time_dependent_B():
    traj = identity_trajectory(2, 4)
    with pytest.raises(ValueError, match="constant"):
        filter_function_measure(traj, np.broadcast_to(Z, (4, 2, 2)), lambda w: w)


def test_default_grid_reaches_nyquist():
    w = default_omega_grid(1.0, 50)
    assert len(w) == 512 and w[-1] == pytest.approx(50 * np.pi) and w[0] == -w[-1]
