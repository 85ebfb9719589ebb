import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snslab.pseudospectral import bilinear_pseudospectral, inner_product_quadrature
from snslab.spectral import (SMOOTH_CUTOFF, BasisMismatchError, FourierState, bilinear, build_basis,
                             inner_product, random_state, semigroup_apply, sobolev_norm, stokes_apply,
                             truncated_bilinear, truncated_bilinear_derivative, unit_state)


def lattice_count(cutoff):
    # every lattice vector with 0 < |k|^2 <= cutoff carries 2 real divergence-free dofs
    pts = [k for k in itertools.product(range(-3, 4), repeat=3) if 0 < sum(c * c for c in k) <= cutoff]
    return 2 * len(pts), sorted(sum(c * c for c in k) for k in pts)


@pytest.mark.parametrize("cutoff", [1, 2, 3, 4, 5])
def test_mode_count_matches_lattice_enumeration(cutoff):
    b = build_basis(cutoff)
    count, _ = lattice_count(cutoff)
    assert b.size == count


def test_cutoff_one_and_two_spectra():
    b1 = build_basis(1)
    assert b1.size == 12 and np.all(b1.eigenvalues == 1)
    lam = build_basis(2).eigenvalues
    assert (lam == 1).sum() == 12 and (lam == 2).sum() == 24


def test_zero_cutoff_rejected():
    with pytest.raises(ValueError):
        build_basis(0)


@pytest.mark.parametrize("cutoff", [1, 3, 6])
def test_basis_invariants(cutoff):
    b = build_basis(cutoff)
    assert b.eigenvalues[0] == 1.0
    assert np.all(np.diff(b.eigenvalues) >= 0)
    k = b.wavevectors.astype(float)
    a = b.polarizations
    np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-15)
    np.testing.assert_allclose(np.sum(a * k, axis=1), 0.0, atol=1e-14)
    np.testing.assert_array_equal(np.sum(b.wavevectors**2, axis=1), b.eigenvalues)
    assert not np.any(np.all(b.wavevectors == 0, axis=1))
    # the two polarisations of one wavevector are orthogonal
    for kk in {tuple(v) for v in b.wavevectors}:
        rows = a[np.all(b.wavevectors == kk, axis=1)]
        assert abs(rows[0] @ rows[-1]) < 1e-14 or np.allclose(rows[0], rows[-1])


def test_ordering_is_lexicographic_within_shells():
    b = build_basis(2)
    keys = [(lam, tuple(k), p, q) for lam, k, p, q in
            zip(b.eigenvalues, b.wavevectors, b.polarization_index, b.parity)]
    assert keys == sorted(keys)


def test_prefix_basis_is_a_prefix():
    full = build_basis(2)
    part = full.prefix(20)
    assert part.size == 20
    np.testing.assert_array_equal(part.wavevectors, full.wavevectors[:20])
    np.testing.assert_allclose(part.triads, full.triads[:20, :20, :20])


def test_inner_product_matches_quadrature():
    b = build_basis(3)
    rng = np.random.default_rng(0)
    for _ in range(3):
        u, v = random_state(b, rng), random_state(b, rng)
        assert abs(inner_product(u, v) - inner_product_quadrature(u, v)) < 1e-8
    assert inner_product(unit_state(b, 4), unit_state(b, 4)) == 1.0
    assert inner_product(unit_state(b, 4), unit_state(b, 5)) == 0.0


def test_basis_mismatch():
    with pytest.raises(BasisMismatchError):
        inner_product(unit_state(build_basis(1), 0), unit_state(build_basis(2), 0))


def test_state_validation():
    b = build_basis(1)
    with pytest.raises(ValueError):
        FourierState(b, np.zeros(5))
    with pytest.raises(ValueError):
        FourierState(b, np.full(12, np.nan))


def test_sobolev_and_stokes():
    b = build_basis(2)
    j = int(np.flatnonzero(b.eigenvalues == 2)[0])
    e = unit_state(b, j)
    assert sobolev_norm(e, 1.0) == 2.0
    np.testing.assert_allclose(stokes_apply(e, 1.0).coeffs[j], 2.0)
    u = random_state(b, np.random.default_rng(1))
    assert math.isclose(sobolev_norm(u, 0.0), math.sqrt(inner_product(u, u)), rel_tol=1e-14)
    np.testing.assert_array_equal(stokes_apply(u, 0.0).coeffs, u.coeffs)
    np.testing.assert_allclose(stokes_apply(stokes_apply(u, 1.0), -1.0).coeffs, u.coeffs, atol=1e-14)


def test_semigroup():
    b = build_basis(2)
    u = random_state(b, np.random.default_rng(2))
    np.testing.assert_array_equal(semigroup_apply(u, 0.0, 1.3).coeffs, u.coeffs)
    two = semigroup_apply(semigroup_apply(u, 0.2, 1.3), 0.5, 1.3)
    np.testing.assert_allclose(two.coeffs, semigroup_apply(u, 0.7, 1.3).coeffs, rtol=1e-14, atol=1e-15)
    assert math.isclose(semigroup_apply(unit_state(b, 0), math.log(2), 1.0).coeffs[0], 0.5, rel_tol=1e-14)
    with pytest.raises(ValueError):
        semigroup_apply(u, -1.0, 1.0)
    # diagonal maps commute
    np.testing.assert_allclose(stokes_apply(semigroup_apply(u, 0.3, 1.0), 0.5).coeffs,
                               semigroup_apply(stokes_apply(u, 0.5), 0.3, 1.0).coeffs, rtol=1e-14)


@pytest.mark.parametrize("cutoff", [1, 2, 3, 4])
def test_bilinear_matches_pseudospectral_oracle(cutoff):
    b = build_basis(cutoff)
    rng = np.random.default_rng(cutoff)
    u, v = random_state(b, rng), random_state(b, rng)
    exact = bilinear(u, v).coeffs
    assert np.abs(exact - bilinear_pseudospectral(u, v).coeffs).max() < 1e-8
    n = 3 * b.kmax + 4
    assert np.abs(exact - bilinear_pseudospectral(u, v, n, dealias=True).coeffs).max() < 1e-8


def test_single_mode_self_advection_vanishes():
    b = build_basis(2)
    for j in range(b.size):
        e = unit_state(b, j, 1.7)
        assert np.abs(bilinear(e, e).coeffs).max() < 1e-14


coeff_lists = st.lists(st.floats(-3, 3, allow_nan=False), min_size=36, max_size=36)


@settings(max_examples=30, deadline=None)
@given(coeff_lists, coeff_lists, coeff_lists)
def test_bilinear_identities(cu, cv, cw):
    b = build_basis(2)
    u, v, w = (FourierState(b, np.array(c)) for c in (cu, cv, cw))
    scale = 1.0 + np.linalg.norm(cu) * np.linalg.norm(cv) * np.linalg.norm(cw)
    assert abs(inner_product(bilinear(u, v), v)) <= 1e-12 * scale * (1 + np.linalg.norm(cv))
    assert abs(inner_product(w, bilinear(u, v)) + inner_product(v, bilinear(u, w))) <= 1e-12 * scale


def test_batched_kernels_agree_with_triads():
    b = build_basis(2)
    rng = np.random.default_rng(3)
    U = rng.standard_normal((5, b.size))
    V = rng.standard_normal((5, b.size))
    for i in range(5):
        u, v = FourierState(b, U[i]), FourierState(b, V[i])
        np.testing.assert_allclose(b.quadratic(U)[i], bilinear(u, u).coeffs, atol=1e-13)
        np.testing.assert_allclose(b.bilinear_coeffs(U, V)[i], bilinear(u, v).coeffs, atol=1e-13)
        J = b.jacobian(U)[i]
        np.testing.assert_allclose(J @ V[i], (bilinear(u, v) + bilinear(v, u)).coeffs, atol=1e-12)


def test_measured_bounds():
    # |A^{1/2} B(u,u)| <= c |Au|^2 and |B(v)| <= c_N |v|^2 with measured constants
    rng = np.random.default_rng(4)
    ratios_basic, cN = {}, {}
    for cutoff in (1, 2, 3, 4):
        b = build_basis(cutoff)
        r1, r2 = [], []
        for _ in range(200):
            u = random_state(b, rng)
            B = bilinear(u, u)
            r1.append(sobolev_norm(B, 0.5) / sobolev_norm(u, 1.0) ** 2)
            r2.append(sobolev_norm(B, 0.0) / sobolev_norm(u, 0.0) ** 2)
        ratios_basic[cutoff], cN[cutoff] = max(r1), max(r2)
    assert ratios_basic[1] == 0.0  # B vanishes identically on the first shell
    vals = [ratios_basic[c] for c in (2, 3, 4)]
    assert max(vals) / min(vals) < 3.0
    assert cN[2] < cN[3] < cN[4]


def test_basis_table_lists_every_mode():
    b = build_basis(1)
    lines = b.table().strip().splitlines()
    assert len(lines) == 1 + b.size


# truncation ------------------------------------------------------------------

def test_cutoff_profile_shape():
    s = np.linspace(-1, 3, 4001)
    chi = SMOOTH_CUTOFF(s)
    assert np.all(chi[s <= 1] == 1.0) and np.all(chi[s >= 2] == 0.0)
    assert np.all((chi >= 0) & (chi <= 1))
    assert np.all(np.diff(chi) <= 0)
    ds = s[1] - s[0]
    fd = np.gradient(chi, ds)
    np.testing.assert_allclose(fd[5:-5], SMOOTH_CUTOFF.derivative(s)[5:-5], atol=2e-5)


def test_truncated_bilinear_regions():
    b = build_basis(2)
    u = random_state(b, np.random.default_rng(5))
    s = sobolev_norm(u, 1.0) ** 2
    np.testing.assert_array_equal(truncated_bilinear(u, s).coeffs, bilinear(u, u).coeffs)
    assert not np.any(truncated_bilinear(u, s / 2).coeffs)
    mid = truncated_bilinear(u, s / 1.5).coeffs
    ratio = mid[np.abs(mid) > 0] / bilinear(u, u).coeffs[np.abs(mid) > 0]
    assert np.allclose(ratio, ratio[0]) and 0 < ratio[0] < 1


def test_truncated_derivative_central_difference():
    b = build_basis(2)
    rng = np.random.default_rng(6)
    u, th = random_state(b, rng), random_state(b, rng)
    s = sobolev_norm(u, 1.0) ** 2
    R = s / 1.5  # inside the transition band, both terms active
    exact = truncated_bilinear_derivative(u, th, R).coeffs
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        fd = (truncated_bilinear(u + h * th, R).coeffs - truncated_bilinear(u - h * th, R).coeffs) / (2 * h)
        errs.append(np.linalg.norm(fd - exact))
    assert errs[-1] < 1e-4 * np.linalg.norm(exact)
    assert errs[0] > errs[1] > errs[2]
    assert not np.any(truncated_bilinear_derivative(u, 0 * th, R).coeffs)
    flat = truncated_bilinear_derivative(u, th, 2 * s).coeffs
    np.testing.assert_allclose(flat, (bilinear(u, th) + bilinear(th, u)).coeffs, atol=1e-13)
