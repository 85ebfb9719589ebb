"""End-to-end acceptance runs at their stated sizes and tolerances.

Each test records one pass/fail line; the lines are repeated in the terminal
summary.  Runtime limits are part of the verdicts.
"""
import math
import time

import numpy as np
import pytest

from snslab.besov import (default_box, default_h_sweep, default_omegas, estimate_density, l1_distance,
                          lp_membership_report, sinusoid_family, weak_exponent_experiment)
from snslab.cli import main
from snslab.girsanov import (ou_exact_sample, ou_reference, reweighted_equivalence_test,
                             weighted_mean)
from snslab.integrator import (DynamicsSpec, Galerkin, Linear, Truncated, run_ensemble, run_split_differences)
from snslab.malliavin import (assemble_matrices, build_system, coordinate_functional, evolve_eta,
                              finite_difference_sensitivity, nondegeneracy_report)
from snslab.noise import power_law, stream
from snslab.spectral import bilinear, build_basis, inner_product, random_state

pytestmark = pytest.mark.acceptance

F = (0, 1)


def initial(basis, seed=0, scale=0.5):
    return random_state(basis, np.random.default_rng(seed), scale)


class Clock:
    def __init__(self, limit):
        self.limit = limit
        self.start = time.perf_counter()

    @property
    def elapsed(self):
        return time.perf_counter() - self.start

    @property
    def ok(self):
        return self.elapsed < self.limit

    def __str__(self):
        return f"runtime {self.elapsed:.1f}s (limit {self.limit:g}s)"


def test_c01_bilinear_identities(criterion):
    clock = Clock(10)
    rng = np.random.default_rng(101)
    worst = 0.0
    for cutoff in (1, 2, 3, 4):
        b = build_basis(cutoff)
        for _ in range(50):
            u, v = random_state(b, rng, rng.uniform(0.1, 10)), random_state(b, rng, rng.uniform(0.1, 10))
            nu, nv = math.sqrt(inner_product(u, u)), math.sqrt(inner_product(v, v))
            scale = nu * nv * (nu + nv)
            defects = (
                inner_product(bilinear(u, v), v),
                inner_product(bilinear(u, v), u) + inner_product(bilinear(u, u), v),
                inner_product(bilinear(v, u), v) + inner_product(bilinear(v, v), u),
            )
            worst = max(worst, max(abs(d) for d in defects) / scale)
    ok = worst <= 1e-12 and clock.ok
    assert criterion(1, ok, f"200 pairs, cutoff 1-4: max defect / |u||v|(|u|+|v|) = {worst:.2e} (limit 1e-12); {clock}")


def test_c02_energy_identity(criterion):
    clock = Clock(120)
    b = build_basis(2)
    spec = DynamicsSpec(1.0, power_law(b, 3.0))
    x = initial(b)
    res = run_ensemble(x, spec, 1.0, 1e-3, 5000, 202, [0.25, 0.5, 1.0], keep_states=False)
    zs = []
    for i, t in enumerate(res.times[1:], 1):
        r = res.energy[:, i] + 2 * res.dissipation[:, i] - x.coeffs @ x.coeffs - t * spec.covariance.trace
        zs.append(r.mean() / (r.std(ddof=1) / math.sqrt(len(r))))
    ok = all(abs(z) <= 3 for z in zs) and clock.ok
    detail = ", ".join(f"z(t={t:g})={z:+.2f}" for t, z in zip(res.times[1:], zs))
    assert criterion(2, ok, f"residual {detail} (limit 3); {clock}")


def cov_z(X, mean, Q):
    D = X - mean
    out = []
    for i in range(D.shape[1]):
        for j in range(i, D.shape[1]):
            g = D[:, i] * D[:, j]
            target = Q[i] if i == j else 0.0
            out.append((g.mean() - target) / (g.std(ddof=1) / math.sqrt(len(g))))
    return np.array(out)


def test_c03_ou_reference(criterion):
    clock = Clock(60)
    b = build_basis(2)
    spec = DynamicsSpec(1.0, power_law(b, 3.0))
    x = initial(b)
    ref = ou_reference(spec, F, 1.0, x)
    z_exact = cov_z(ou_exact_sample(ref, stream(303, 0, "ou-exact"), 100_000), ref.mean, ref.Q)
    lin = run_ensemble(x, spec.with_variant(Linear()), 1.0, 1e-3, 20_000, 304)
    z_sde = cov_z(lin.projected(F), ref.mean, ref.Q)
    ok = np.abs(z_exact).max() <= 4 and np.abs(z_sde).max() <= 3 and clock.ok
    assert criterion(3, ok, f"exact draws max|z|={np.abs(z_exact).max():.2f} (limit 4), "
                            f"linear SDE max|z|={np.abs(z_sde).max():.2f} (limit 3); {clock}")


def test_c04_girsanov(criterion):
    clock = Clock(300)
    b = build_basis(2)
    spec = DynamicsSpec(1.0, power_law(b, 3.0), projection_F=F)
    x = initial(b)
    res = run_ensemble(x, spec, 1.0, 1e-3, 20_000, 404, girsanov=True)
    w = res.weights()
    m, se = weighted_mean(np.ones(len(w)), w)
    z_mart = (m - 1) / se
    rep = reweighted_equivalence_test(res.projected(F), w, ou_reference(spec, F, 1.0, x))
    z2 = [z for name, _, _, z in rep.rows if name.startswith("moment2")]
    ks = [(d, crit) for _, d, crit in rep.ks]
    ok = abs(z_mart) <= 3 and all(abs(z) <= 3 for z in z2) and all(d < c for d, c in ks) and rep.reliable
    ok = ok and clock.ok
    z1 = max(abs(z) for name, _, _, z in rep.rows if name.startswith("moment1"))
    assert criterion(4, ok, f"E[G]={m:.4f}+/-{se:.4f} (z={z_mart:+.2f}); second-moment z="
                            + ", ".join(f"{z:+.2f}" for z in z2)
                            + "; KS " + ", ".join(f"{d:.4f}<{c:.4f}" for d, c in ks)
                            + f"; ESS={rep.ess:.0f}; first-moment max|z|={z1:.2f}; {clock}")


def test_c05_weak_strong_coincidence(criterion):
    clock = Clock(60)
    b = build_basis(2)
    cov = power_law(b, 3.0)
    x = initial(b)
    dt = 1e-3
    # R from a pilot ensemble: the 70% quantile of sup_t |A u|^2
    pilot = run_ensemble(x, DynamicsSpec(1.0, cov), 1.0, dt, 200, 500, keep_path=True)
    sup_a2 = np.max(np.sum((b.eigenvalues * pilot.path) ** 2, axis=2), axis=1)
    R = float(np.quantile(sup_a2, 0.7))
    g = run_ensemble(x, DynamicsSpec(1.0, cov), 1.0, dt, 100, 505, keep_path=True, tau_threshold=R)
    t = run_ensemble(x, DynamicsSpec(1.0, cov, Truncated(R)), 1.0, dt, 100, 505, keep_path=True)
    same = True
    for j in range(100):
        n = g.path.shape[1] if np.isinf(t.tau[j]) else round(t.tau[j] / dt) + 1
        same &= np.array_equal(g.path[j, :n], t.path[j, :n])
    np.testing.assert_array_equal(g.tau, t.tau)
    frac = float(np.mean(np.isfinite(t.tau)))
    ok = same and 0.2 <= frac <= 0.4 and clock.ok
    assert criterion(5, ok, f"100 coupled paths bitwise identical before tau_R: {same}; "
                            f"fraction with tau_R <= 1: {frac:.2f} (target ~0.3, R={R:.3f}); {clock}")


def fd_errors(b, spec, x, pairs, dt, seed):
    sys = build_system(x, spec, 1.0, dt, coordinate_functional(F), master_seed=seed)
    sigma = np.sqrt(spec.covariance.variances)
    errs = []
    for k, s in pairs:
        exact = sigma[k] * evolve_eta(sys, k, s)[-1]
        fd = finite_difference_sensitivity(x, spec, 1.0, dt, k, s, 1e-5, master_seed=seed)
        errs.append(np.linalg.norm(fd - exact) / np.linalg.norm(exact))
    return np.array(errs)


def test_c06_malliavin_gradient(criterion):
    clock = Clock(120)
    dt = 1e-4
    pairs = [(0, 0.1), (3, 0.3), (5, 0.5), (8, 0.7), (11, 0.9)]
    b1 = build_basis(1)
    spec1 = DynamicsSpec(1.0, power_law(b1, 3.0), Truncated(1e6))
    x1 = initial(b1)
    errs = fd_errors(b1, spec1, x1, pairs, dt, 606)
    # supplementary run with an active nonlinearity and truncation band
    b2 = build_basis(2)
    x2 = initial(b2, scale=0.6)
    R2 = 0.7 * float(np.sum((b2.eigenvalues * x2.coeffs) ** 2))
    spec2 = DynamicsSpec(1.0, power_law(b2, 3.0), Truncated(R2))
    errs2 = fd_errors(b2, spec2, x2, [(0, 0.1), (7, 0.3), (13, 0.5), (20, 0.7), (35, 0.9)], dt, 607)
    sys = build_system(x1, spec1, 1.0, dt, coordinate_functional(F), master_seed=606)
    M = assemble_matrices(spec1, sys.path, dt, 1.0, sys.gradient)[0]
    var = spec1.covariance.variances[list(F)]
    lam = b1.eigenvalues[list(F)]
    closed = var * -np.expm1(-2 * lam) / (2 * lam)
    rel = np.abs(M - np.diag(closed)).max() / closed.max()
    ok = errs.max() < 1e-3 and errs2.max() < 1e-3 and rel < 1e-6 and clock.ok
    assert criterion(6, ok, f"FD relative error cutoff 1: max {errs.max():.2e}, cutoff 2 (transition band): "
                            f"max {errs2.max():.2e} (limit 1e-3); linear M vs closed form: {rel:.2e} "
                            f"(limit 1e-6); {clock}")


def test_c07_malliavin_nondegeneracy(criterion):
    clock = Clock(300)
    b = build_basis(2)
    spec = DynamicsSpec(1.0, power_law(b, 3.0), Truncated(1e6))
    assert spec.covariance.injective
    res = run_ensemble(initial(b), spec, 1.0, 1e-3, 500, 707, keep_path=True, keep_states=False)
    grad = coordinate_functional(F)
    mats = np.concatenate([assemble_matrices(spec, res.path[i:i + 50], 1e-3, 1.0, grad)
                           for i in range(0, 500, 50)])
    rep = nondegeneracy_report(mats)
    frac_ok = 1.0 - rep.fraction_below[1e-12]
    ok = frac_ok == 1.0 and clock.ok
    assert criterion(7, ok, f"500 paths: {100 * frac_ok:.1f}% with lambda_min > 1e-12 trace; "
                            f"min lambda_min/trace = {rep.relative_min.min():.3e}; "
                            f"median condition number {rep.quantiles()[0.5]:.2f}; {clock}")


def test_c08_splitting_rate(criterion):
    clock = Clock(600)
    b = build_basis(2)
    spec = DynamicsSpec(1.0, power_law(b, 3.0), Galerkin())
    eps = 2.0 ** -np.arange(3, 8)
    slopes = {}
    for mode, x, burn in (("plain", initial(b, 5), 0.0), ("stationary_compensated", None, 2.0)):
        e, D = run_split_differences(x, spec, F, eps, 2.0**-10, 10_000, 808, mode=mode, burn_in=burn)
        assert np.allclose(e, eps)
        slopes[mode] = float(np.polyfit(np.log(e), np.log(D.mean(axis=0)), 1)[0])
    plain, comp = slopes["plain"], slopes["stationary_compensated"]
    ok = plain >= 0.9 and comp >= 1.2 and clock.ok
    assert criterion(8, ok, f"plain slope {plain:.3f} (limit 0.9, rate 1); compensated slope {comp:.3f} "
                            f"(limit 1.2, target 1.3, rate 1.5); {clock}")


@pytest.fixture(scope="module")
def endpoint_samples():
    """1e5 draws of pi_F u(1) from the Galerkin dynamics, shared by criteria 9 and 10."""
    b = build_basis(2)
    spec = DynamicsSpec(1.0, power_law(b, 3.0))
    start = time.perf_counter()
    res = run_ensemble(initial(b), spec, 1.0, 1e-2, 100_000, 909, keep_states=True)
    return res.projected(F), time.perf_counter() - start


def test_c09_weak_besov_exponent(criterion, endpoint_samples):
    samples, sim_time = endpoint_samples
    clock = Clock(600)
    clock.start -= sim_time / 2  # half of the shared ensemble is used here
    H = default_h_sweep(5, 0.25)
    fam = sinusoid_family(2, 0.5, default_omegas(H))
    nse = weak_exponent_experiment(samples[:50_000], fam, 2, 0.5, H)
    b = build_basis(2)
    ref = ou_reference(DynamicsSpec(1.0, power_law(b, 3.0)), F, 1.0, initial(b))
    gauss = weak_exponent_experiment(ou_exact_sample(ref, stream(910, 0, "gaussian"), 50_000), fam, 2, 0.5, H)
    ok = (nse.passed is True) and gauss.slope is not None and gauss.slope >= 1.8 and clock.ok
    assert criterion(9, ok, f"NSE slope {nse.slope:.3f} on {int(nse.envelope_used.sum())} scales "
                            f"(limit alpha_n - 0.2 = {nse.alpha_n_predicted - 0.2:.3f}); Gaussian control "
                            f"slope {gauss.slope:.3f} (limit 1.8); {clock}")


def test_c10_density_sanity(criterion, endpoint_samples):
    samples, sim_time = endpoint_samples
    clock = Clock(300)
    clock.start -= sim_time
    box = default_box(samples)
    half = len(samples) // 2
    l1 = l1_distance(estimate_density(samples[:half], box, 16), estimate_density(samples[half:], box, 16))
    lp = lp_membership_report([estimate_density(samples, box, r) for r in (16, 32)], 2, exponents=[1.5])
    change = float(lp.relative_change[0, 0])
    atom = estimate_density(samples, box, 64).max_cell_mass
    ok = l1 < 0.1 and change <= 0.15 and atom <= 0.01 and clock.ok
    assert criterion(10, ok, f"1e5 samples: half-ensemble L1 {l1:.4f} (limit 0.1, 16/axis); L^1.5 change "
                             f"16->32/axis {change:.4f} (limit 0.15); max cell mass {atom:.5f} at 64/axis "
                             f"(limit 0.01); {clock}")


CONFIG = """
[basis]
cutoff = 2
[dynamics]
initial = "random"
[noise]
alpha = 3.0
[time]
dt = {dt}
snapshots = [0.25, 0.5, 1.0]
[ensemble]
n_traj = {n}
seed = 1111
[experiment]
kind = "{kind}"
{extra}
"""


def test_c11_determinism_across_workers(criterion, tmp_path):
    runs = [
        ("energy-check", 1e-3, 5000, ""),
        ("girsanov", 1e-2, 2000, "F = [0, 1]"),
        ("besov-weak", 1e-2, 2000, "F = [0, 1]"),
    ]
    compared, identical = 0, True
    for kind, dt, n, extra in runs:
        cfg = tmp_path / f"{kind}.toml"
        cfg.write_text(CONFIG.format(dt=dt, n=n, kind=kind, extra=extra))
        outs = []
        for workers in (1, 2):
            out = tmp_path / f"{kind}-w{workers}"
            code = main([kind, "--config", str(cfg), "--out", str(out), "--workers", str(workers)])
            assert code in (0, 2)
            outs.append(out)
        for csv in sorted(outs[0].glob("*.csv")):
            compared += 1
            identical &= csv.read_bytes() == (outs[1] / csv.name).read_bytes()
    ok = identical and compared >= 3
    assert criterion(11, ok, f"{compared} CSV files from {len(runs)} kinds byte-identical with 1 vs 2 workers: "
                             f"{identical}")
