import math

import numpy as np
import pytest

from snslab.integrator import (DynamicsSpec, Galerkin, IntegrationError, Linear, Split, Truncated,
                               aligned_eps, run_ensemble, run_stationary_ensemble, run_trajectory, step,
                               trajectory_noise)
from snslab.noise import explicit_list, power_law
from snslab.spectral import FourierState, build_basis, random_state, sobolev_norm, unit_state


@pytest.fixture(scope="module")
def b2():
    return build_basis(2)


def quiet(basis, variant=Galerkin()):
    return DynamicsSpec(1.0, explicit_list(basis, np.zeros(basis.size)), variant)


def test_single_mode_decays_exactly(b2):
    spec = quiet(b2)
    x = unit_state(b2, 20, 0.8)
    rec = run_trajectory(x, spec, 1.0, 1e-2, snapshot_times=[0.0, 0.5, 1.0])
    lam = b2.eigenvalues[20]
    for t, s in zip(rec.times, rec.states):
        assert abs(s.coeffs[20] - 0.8 * math.exp(-lam * t)) < 1e-14
        assert np.count_nonzero(s.coeffs) == 1


def test_truncated_beyond_2R_is_heat_flow(b2):
    x = random_state(b2, np.random.default_rng(0))
    R = sobolev_norm(x, 1.0) ** 2 / 2.5
    out = step(x, quiet(b2, Truncated(R)), 0.0, 0.01)
    np.testing.assert_allclose(out.coeffs, np.exp(-b2.eigenvalues * 0.01) * x.coeffs, rtol=1e-15)


def test_drift_only_first_order(b2):
    spec = quiet(b2)
    x = random_state(b2, np.random.default_rng(1), 1.5)

    def end(dt):
        return run_trajectory(x, spec, 1.0, dt).states[-1].coeffs

    ref = end(1e-4)
    errs = np.array([np.linalg.norm(end(dt) - ref) for dt in (0.02, 0.01, 0.005)])
    rates = errs[:-1] / errs[1:]
    assert np.all(np.abs(rates - 2.0) < 0.15), rates


def test_step_matches_trajectory(b2):
    spec = DynamicsSpec(1.0, power_law(b2, 3.0))
    x = random_state(b2, np.random.default_rng(2))
    dt = 0.01
    xi = trajectory_noise(spec, 0.05, dt, 4, 0)
    rec = run_trajectory(x, spec, 0.05, dt, master_seed=4, keep_path=True)
    u = x
    for n in range(5):
        u = step(u, spec, n * dt, dt, FourierState(b2, math.sqrt(dt) * xi[n]))
        np.testing.assert_allclose(u.coeffs, rec.path[n + 1], rtol=1e-13, atol=1e-15)


def test_tau_zero_when_started_outside(b2):
    x = random_state(b2, np.random.default_rng(3))
    R = 0.9 * sobolev_norm(x, 1.0) ** 2
    spec = DynamicsSpec(1.0, power_law(b2, 3.0), Truncated(R))
    assert run_trajectory(x, spec, 1.0, 0.01).tau_R == 0.0


def test_tau_definition_and_monotonicity(b2):
    x = random_state(b2, np.random.default_rng(4), 0.6)
    spec = DynamicsSpec(1.0, power_law(b2, 2.0))
    s0 = sobolev_norm(x, 1.0) ** 2
    taus = []
    for R in (1.02 * s0, 1.3 * s0, 2.0 * s0):
        rec = run_trajectory(x, spec, 1.0, 1e-3, master_seed=9, keep_path=True, tau_threshold=R)
        a2 = np.sum((b2.eigenvalues * rec.path) ** 2, axis=1)
        if np.isfinite(rec.tau_R):
            n = round(rec.tau_R / 1e-3)
            assert a2[n] >= R and np.all(a2[:n] < R)
        else:
            assert np.all(a2 < R)
        taus.append(rec.tau_R)
    assert taus[0] <= taus[1] <= taus[2]


def test_truncated_and_galerkin_coincide_before_tau(b2):
    x = random_state(b2, np.random.default_rng(5), 0.7)
    cov = power_law(b2, 2.0)
    R = 1.02 * sobolev_norm(x, 1.0) ** 2
    g = run_ensemble(x, DynamicsSpec(1.0, cov), 1.0, 1e-3, 20, 3, keep_path=True, tau_threshold=R)
    t = run_ensemble(x, DynamicsSpec(1.0, cov, Truncated(R)), 1.0, 1e-3, 20, 3, keep_path=True)
    hit = 0
    for j in range(20):
        n = len(g.path[j]) if np.isinf(t.tau[j]) else round(t.tau[j] / 1e-3) + 1
        assert np.array_equal(g.path[j, :n], t.path[j, :n])
        hit += np.isfinite(t.tau[j])
    assert 0 < hit < 20


def test_split_coincides_before_branch(b2):
    x = random_state(b2, np.random.default_rng(6), 0.5)
    cov = power_law(b2, 3.0)
    dt = 2**-8
    eps = aligned_eps(0.1, dt)
    for mode in ("plain", "stationary_compensated"):
        s = DynamicsSpec(1.0, cov, Split((0, 1), eps, mode))
        a = run_trajectory(x, DynamicsSpec(1.0, cov), 1.0, dt, master_seed=1, keep_path=True).path
        c = run_trajectory(x, s, 1.0, dt, master_seed=1, keep_path=True).path
        nb = round((1 - eps) / dt)
        assert np.array_equal(a[: nb + 1], c[: nb + 1])
        assert not np.array_equal(a[-1], c[-1])


def test_split_validation(b2):
    with pytest.raises(ValueError):
        Split((0,), 1.5)
    with pytest.raises(ValueError):
        DynamicsSpec(1.0, power_law(b2, 3.0), Split((99,), 0.1))


def test_ensemble_single_matches_trajectory(b2):
    spec = DynamicsSpec(1.0, power_law(b2, 3.0))
    x = random_state(b2, np.random.default_rng(7), 0.4)
    e = run_ensemble(x, spec, 0.5, 1e-2, 1, 21)
    r = run_trajectory(x, spec, 0.5, 1e-2, master_seed=21)
    np.testing.assert_array_equal(e.states[0, -1], r.states[-1].coeffs)


def test_schedule_independence(b2):
    spec = DynamicsSpec(1.0, power_law(b2, 3.0), projection_F=(0, 1))
    x = random_state(b2, np.random.default_rng(8), 0.4)
    a = run_ensemble(x, spec, 0.3, 1e-2, 40, 5, girsanov=True, workers=1, chunk_size=7)
    b = run_ensemble(x, spec, 0.3, 1e-2, 40, 5, girsanov=True, workers=2, chunk_size=16)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.girsanov, b.girsanov)
    np.testing.assert_array_equal(a.energy, b.energy)


def test_stationary_linear_energy(b2):
    cov = power_law(b2, 2.0)
    spec = DynamicsSpec(1.0, cov, Linear())
    res = run_stationary_ensemble(spec, 4.0, 0.5, 1e-2, 4000, 2)
    target = float(np.sum(cov.variances / (2 * b2.eigenvalues)))
    m, se = res.energy_moments()
    assert abs(m[-1] - target) < 3 * se[-1]
    assert res.stationarity["stationary"]
    still = run_stationary_ensemble(quiet(b2), 1.0, 0.5, 1e-2, 3, 2)
    assert not np.any(still.states)


def test_sup_energy_stable_across_cutoffs():
    vals = []
    for cutoff in (1, 2, 3):
        b = build_basis(cutoff)
        x = np.zeros(b.size)
        x[:4] = 0.5
        res = run_ensemble(x, DynamicsSpec(1.0, power_law(b, 3.0)), 1.0, 1e-2, 400, 1, keep_states=False)
        vals.append(res.sup_energy.mean())
    assert np.all(np.isfinite(vals))
    assert max(vals) / min(vals) < 1.5


def test_energy_balance_small(b2):
    cov = power_law(b2, 3.0)
    spec = DynamicsSpec(1.0, cov)
    x = random_state(b2, np.random.default_rng(9), 0.5)
    res = run_ensemble(x, spec, 0.5, 1e-3, 400, 12, snapshot_times=[0.0, 0.25, 0.5])
    for i, t in enumerate(res.times[1:], 1):
        r = res.energy[:, i] + 2 * res.dissipation[:, i] - x.coeffs @ x.coeffs - t * cov.trace
        assert abs(r.mean()) < 3 * r.std(ddof=1) / math.sqrt(len(r))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blowup_reports_integration_error(b2):
    spec = DynamicsSpec(1.0, explicit_list(b2, np.zeros(b2.size)))
    x = random_state(b2, np.random.default_rng(10), 1e150)
    with pytest.raises(IntegrationError) as info:
        run_trajectory(x, spec, 1.0, 0.1)
    assert 0 < info.value.t <= 1.0
    with pytest.raises(IntegrationError):
        step(1e60 * x, spec, 0.0, 0.1)


def test_grid_alignment_enforced(b2):
    spec = DynamicsSpec(1.0, power_law(b2, 3.0))
    with pytest.raises(ValueError):
        run_trajectory(None, spec, 1.0, 0.3)
    with pytest.raises(ValueError):
        run_trajectory(None, spec, 1.0, 0.1, snapshot_times=[0.05])
