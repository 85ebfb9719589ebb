"""Grid-based cross-checks for the Galerkin operators.

Nothing here is used by the integrators.  Fields are synthesised on a uniform
``n**3`` grid from their mode coefficients, products are formed pointwise, and
results are projected back by FFT.  With ``n > 3 * kmax`` the quadrature is
exact for the trigonometric polynomials involved, so agreement with the triad
path is limited only by rounding.
"""
from __future__ import annotations

import numpy as np

from .spectral import FourierState, SpectralBasis, _check_same


def default_grid_size(basis: SpectralBasis) -> int:
    return 3 * basis.kmax + 2


def _spectrum(basis: SpectralBasis, coeffs: np.ndarray, n: int) -> np.ndarray:
    """Fourier array ``F[l, k1, k2, k3]`` with ``field = sum F e^{i k.x}``."""
    F = np.zeros((3, n, n, n), dtype=complex)
    alpha = basis.exp_coefficients
    for m, c in enumerate(coeffs):
        if c == 0.0:
            continue
        k = basis.wavevectors[m]
        a = basis.polarizations[m]
        for sign, col in ((1, 0), (-1, 1)):
            idx = tuple(int(sign * kc) % n for kc in k)
            F[(slice(None),) + idx] += c * alpha[m, col] * a
    return F


def _wavenumbers(n: int) -> np.ndarray:
    k1 = np.fft.fftfreq(n, d=1.0 / n)
    return np.stack(np.meshgrid(k1, k1, k1, indexing="ij"))


def to_grid(u: FourierState, n: int | None = None) -> np.ndarray:
    """Physical velocity field, shape ``(3, n, n, n)``, on ``x_j = 2 pi j / n``."""
    n = n or default_grid_size(u.basis)
    F = _spectrum(u.basis, u.coeffs, n)
    return np.real(np.fft.ifftn(F, axes=(1, 2, 3))) * n**3


def project_field(basis: SpectralBasis, w: np.ndarray, leray: bool = True,
                  dealias: bool = False) -> FourierState:
    """Coefficients ``<e_m, w>`` of a gridded vector field."""
    n = w.shape[-1]
    What = np.fft.fftn(w, axes=(1, 2, 3)) / n**3
    K = _wavenumbers(n)
    if leray:
        k2 = np.sum(K**2, axis=0)
        k2[0, 0, 0] = 1.0
        div = np.sum(K * What, axis=0)
        What = What - K * div / k2
        What[:, 0, 0, 0] = 0.0
    if dealias:
        keep = np.all(np.abs(K) < n / 3.0, axis=0)
        What = What * keep
    alpha = basis.exp_coefficients
    out = np.empty(basis.size)
    for m in range(basis.size):
        k = basis.wavevectors[m]
        a = basis.polarizations[m]
        total = 0.0
        for sign, col in ((1, 0), (-1, 1)):
            idx = tuple(int(-sign * kc) % n for kc in k)
            total += alpha[m, col] * (a @ What[(slice(None),) + idx])
        out[m] = total.real
    return FourierState(basis, out)


def bilinear_pseudospectral(u: FourierState, v: FourierState, n: int | None = None,
                            dealias: bool = False) -> FourierState:
    """``(u . grad) v`` on the grid, Leray-projected and re-truncated to the basis."""
    _check_same(u, v)
    basis = u.basis
    n = n or default_grid_size(basis)
    if dealias and n <= 3 * basis.kmax:
        raise ValueError("2/3 dealiasing would remove retained modes; increase n")
    ug = to_grid(u, n)
    V = _spectrum(basis, v.coeffs, n)
    K = _wavenumbers(n)
    adv = np.zeros((3, n, n, n))
    for l in range(3):
        dv = np.real(np.fft.ifftn(1j * K[l] * V, axes=(1, 2, 3))) * n**3
        adv += ug[l] * dv
    return project_field(basis, adv, leray=True, dealias=dealias)


def inner_product_quadrature(u: FourierState, v: FourierState, n: int | None = None) -> float:
    """Normalised integral ``(2 pi)^-3 int u . v dx`` by the trapezoid rule."""
    _check_same(u, v)
    n = n or default_grid_size(u.basis)
    return float(np.mean(np.sum(to_grid(u, n) * to_grid(v, n), axis=0)))
