"""Divergence-free Fourier basis on the 3-torus and the operators acting on it.

Velocity fields are stored as real coefficients over an orthonormal family of
modes ``sqrt(2) a cos(k.x)`` / ``sqrt(2) a sin(k.x)`` with ``a`` orthogonal to
``k``.  The torus measure is normalised to one, so ``<e_i, e_j> = delta_ij``.
All operators here are exact Galerkin objects: the bilinear term is evaluated
through a precomputed triad tensor rather than on a grid.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

COS, SIN = 0, 1
_PARITY_NAMES = {COS: "cos", SIN: "sin"}
_SQRT_HALF = np.sqrt(0.5)


class BasisMismatchError(ValueError):
    """Two states were combined although they live on different bases."""


def _canonical(k) -> bool:
    """True if the first nonzero component of ``k`` is positive."""
    for c in k:
        if c != 0:
            return c > 0
    return False


def _polarizations(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Gram-Schmidt on the coordinate axis least aligned with k, then close the
    # right-handed triple (khat, a1, a2).
    khat = k / np.linalg.norm(k)
    axis = int(np.argmin(np.abs(k)))
    aux = np.zeros(3)
    aux[axis] = 1.0
    a1 = aux - (aux @ khat) * khat
    a1 /= np.linalg.norm(a1)
    a2 = np.cross(khat, a1)
    a2 /= np.linalg.norm(a2)
    return a1, a2


class SpectralBasis:
    """Real divergence-free Stokes eigenmodes with ``|k|^2 <= cutoff``.

    Modes are sorted by ``(|k|^2, k, polarization, parity)``.  Passing
    ``n_modes`` keeps only an ordering prefix, i.e. the Galerkin space
    ``Span[e_1, ..., e_N]``.
    """

    def __init__(self, cutoff: int, n_modes: int | None = None):
        if int(cutoff) != cutoff or cutoff < 1:
            raise ValueError(f"cutoff must be a positive integer, got {cutoff!r}")
        self.cutoff = int(cutoff)
        kmax = int(np.floor(np.sqrt(self.cutoff)))
        raw = []
        for k in itertools.product(range(-kmax, kmax + 1), repeat=3):
            k2 = k[0] ** 2 + k[1] ** 2 + k[2] ** 2
            if 0 < k2 <= self.cutoff and _canonical(k):
                for p in (1, 2):
                    for parity in (COS, SIN):
                        raw.append((k2, k, p, parity))
        order = sorted(range(len(raw)), key=lambda i: raw[i])
        if n_modes is not None:
            if not 1 <= n_modes <= len(order):
                raise ValueError(f"n_modes must lie in [1, {len(order)}], got {n_modes}")
            order = order[:n_modes]
        self.ordering = np.asarray(order, dtype=np.intp)
        modes = [raw[i] for i in order]
        self.wavevectors = np.array([m[1] for m in modes], dtype=np.int64)
        self.polarization_index = np.array([m[2] for m in modes], dtype=np.int64)
        self.parity = np.array([m[3] for m in modes], dtype=np.int64)
        self.eigenvalues = np.array([m[0] for m in modes], dtype=float)
        pol = {}
        for k in {tuple(m[1]) for m in modes}:
            pol[k] = _polarizations(np.asarray(k, dtype=float))
        self.polarizations = np.array(
            [pol[tuple(k)][p - 1] for k, p in zip(self.wavevectors, self.polarization_index)]
        )
        for arr in (self.wavevectors, self.polarization_index, self.parity,
                    self.eigenvalues, self.polarizations, self.ordering):
            arr.flags.writeable = False

    @property
    def size(self) -> int:
        return len(self.eigenvalues)

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"SpectralBasis(cutoff={self.cutoff}, n_modes={self.size})"

    @property
    def kmax(self) -> int:
        return int(np.abs(self.wavevectors).max())

    def modes(self) -> list[tuple[tuple[int, int, int], int, str]]:
        return [
            (tuple(int(c) for c in k), int(p), _PARITY_NAMES[int(q)])
            for k, p, q in zip(self.wavevectors, self.polarization_index, self.parity)
        ]

    def same_as(self, other: "SpectralBasis") -> bool:
        return self is other or (
            self.cutoff == other.cutoff and self.size == other.size
        )

    def prefix(self, n_modes: int) -> "SpectralBasis":
        return SpectralBasis(self.cutoff, n_modes)

    @cached_property
    def exp_coefficients(self) -> np.ndarray:
        """``alpha[m, 0]`` and ``alpha[m, 1]`` with ``e_m = a_m sum_s alpha e^{i s k.x}``."""
        alpha = np.empty((self.size, 2), dtype=complex)
        alpha[self.parity == COS] = [_SQRT_HALF, _SQRT_HALF]
        alpha[self.parity == SIN] = [-1j * _SQRT_HALF, 1j * _SQRT_HALF]
        return alpha

    @cached_property
    def triads(self) -> np.ndarray:
        """Tensor ``T[m, i, j] = <e_m, (e_i . grad) e_j>``."""
        k = self.wavevectors
        a = self.polarizations
        alpha = self.exp_coefficients
        lookup: dict[tuple, list[int]] = {}
        for m, km in enumerate(k):
            lookup.setdefault(tuple(int(c) for c in km), []).append(m)
        M = self.size
        T = np.zeros((M, M, M), dtype=complex)
        signs = ((1, 0), (-1, 1))
        for i in range(M):
            for j in range(M):
                ak = a[i] @ k[j]
                if ak == 0.0:
                    continue
                for s, si in signs:
                    for t, ti in signs:
                        p = s * k[i] + t * k[j]
                        if not p.any():
                            continue
                        # need r*k_m = -p
                        if _canonical(-p):
                            key, ri = tuple(int(c) for c in -p), 0
                        else:
                            key, ri = tuple(int(c) for c in p), 1
                        for m in lookup.get(key, ()):
                            T[m, i, j] += (
                                (a[m] @ a[j]) * 1j * t * ak
                                * alpha[m, ri] * alpha[i, si] * alpha[j, ti]
                            )
        assert np.abs(T.imag).max(initial=0.0) < 1e-12
        out = np.ascontiguousarray(T.real)
        out.flags.writeable = False
        return out

    @cached_property
    def _pairs(self):
        M = self.size
        I, J = np.triu_indices(M)
        T = self.triads
        sym = T[:, I, J] + T[:, J, I]
        diag = I == J
        sym[:, diag] = T[:, I[diag], I[diag]]
        active = np.abs(sym).max(axis=0) > 0
        return I[active], J[active], np.ascontiguousarray(sym[:, active])

    @cached_property
    def _jacobian_kernel(self) -> np.ndarray:
        # (T[m,n,j] + T[m,j,n]) flattened over (m, n) for contraction with v_j
        T = self.triads
        return np.ascontiguousarray((T + T.transpose(0, 2, 1)).reshape(-1, self.size))

    # batched array kernels (rows are independent states) -----------------

    def quadratic(self, U: np.ndarray) -> np.ndarray:
        """``B(u, u)`` for each row of ``U``."""
        I, J, sym = self._pairs
        Ut = np.atleast_2d(U).T
        return (sym @ (Ut[I] * Ut[J])).T

    def bilinear_coeffs(self, U: np.ndarray, V: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(U)
        V = np.atleast_2d(V)
        return np.einsum("mij,ni,nj->nm", self.triads, U, V)

    def jacobian(self, U: np.ndarray) -> np.ndarray:
        """Matrices ``d/du B(u,u)`` with shape ``(n, M, M)``."""
        U = np.atleast_2d(U)
        M = self.size
        return (self._jacobian_kernel @ U.T).T.reshape(len(U), M, M)

    def table(self) -> str:
        """Plain-text audit table of the modes."""
        lines = ["# index  k=(k1,k2,k3)  pol  polarization_vector  parity  lambda"]
        for i, (k, p, q, a, lam) in enumerate(zip(
                self.wavevectors, self.polarization_index, self.parity,
                self.polarizations, self.eigenvalues)):
            lines.append(
                f"{i:5d}  ({k[0]:+d},{k[1]:+d},{k[2]:+d})  {p:d}  "
                f"({a[0]:+.15f},{a[1]:+.15f},{a[2]:+.15f})  {_PARITY_NAMES[int(q)]}  {lam:g}"
            )
        return "\n".join(lines) + "\n"


def build_basis(cutoff: int, n_modes: int | None = None) -> SpectralBasis:
    return SpectralBasis(cutoff, n_modes)


@dataclass(frozen=True, eq=False)
class FourierState:
    basis: SpectralBasis
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (self.basis.size,):
            raise ValueError(f"expected {self.basis.size} coefficients, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("state has non-finite coefficients")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    def __add__(self, other: "FourierState") -> "FourierState":
        _check_same(self, other)
        return FourierState(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other: "FourierState") -> "FourierState":
        _check_same(self, other)
        return FourierState(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "FourierState":
        return FourierState(self.basis, scalar * self.coeffs)

    __rmul__ = __mul__

    def restrict(self, indices) -> np.ndarray:
        return self.coeffs[np.asarray(indices, dtype=np.intp)]


def zero_state(basis: SpectralBasis) -> FourierState:
    return FourierState(basis, np.zeros(basis.size))


def unit_state(basis: SpectralBasis, index: int, value: float = 1.0) -> FourierState:
    c = np.zeros(basis.size)
    c[index] = value
    return FourierState(basis, c)


def random_state(basis: SpectralBasis, rng: np.random.Generator, scale: float = 1.0,
                 decay: float = 0.0) -> FourierState:
    """Gaussian coefficients with standard deviation ``scale * lambda**(-decay)``."""
    return FourierState(basis, scale * basis.eigenvalues ** (-decay) * rng.standard_normal(basis.size))


def _check_same(u: FourierState, v: FourierState) -> None:
    if not u.basis.same_as(v.basis):
        raise BasisMismatchError(f"{u.basis!r} vs {v.basis!r}")


def inner_product(u: FourierState, v: FourierState) -> float:
    _check_same(u, v)
    return float(u.coeffs @ v.coeffs)


def sobolev_norm(u: FourierState, weight_exponent: float) -> float:
    """``(sum lambda**(2 w) u_k**2)**0.5``; ``w=0`` is H, ``w=1/2`` is V, ``w=1`` is D(A)."""
    if not np.isfinite(weight_exponent):
        raise ValueError("weight_exponent must be finite")
    w = u.basis.eigenvalues ** (2.0 * weight_exponent)
    return float(np.sqrt(np.sum(w * u.coeffs**2)))


def stokes_apply(u: FourierState, exponent: float) -> FourierState:
    if not np.isfinite(exponent):
        raise ValueError("exponent must be finite")
    return FourierState(u.basis, u.basis.eigenvalues**exponent * u.coeffs)


def semigroup_apply(u: FourierState, t: float, viscosity: float) -> FourierState:
    if t < 0:
        raise ValueError(f"semigroup time must be nonnegative, got {t}")
    if viscosity <= 0:
        raise ValueError("viscosity must be positive")
    return FourierState(u.basis, np.exp(-viscosity * u.basis.eigenvalues * t) * u.coeffs)


def bilinear(u: FourierState, v: FourierState) -> FourierState:
    """Galerkin-projected ``Pi (u . grad) v``."""
    _check_same(u, v)
    return FourierState(u.basis, u.basis.triads.dot(v.coeffs).dot(u.coeffs))


# smooth cutoff -------------------------------------------------------------

def _psi(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def _dpsi(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos]) / x[pos] ** 2
    return out


@dataclass(frozen=True)
class CutoffProfile:
    """Smooth step: 1 on ``(-inf, 1]``, 0 on ``[2, inf)``, C-infinity in between."""

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        a, b = _psi(2.0 - s), _psi(s - 1.0)
        out = a / (a + b)
        return out if out.ndim else float(out)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        a, b = _psi(2.0 - s), _psi(s - 1.0)
        da, db = -_dpsi(2.0 - s), _dpsi(s - 1.0)
        out = (da * b - a * db) / (a + b) ** 2
        return out if out.ndim else float(out)


SMOOTH_CUTOFF = CutoffProfile()


def truncated_bilinear(u: FourierState, R: float,
                       cutoff_profile: Callable = SMOOTH_CUTOFF) -> FourierState:
    """``chi(|Au|^2 / R) B(u, u)``."""
    if R <= 0:
        raise ValueError("R must be positive")
    chi = float(cutoff_profile(sobolev_norm(u, 1.0) ** 2 / R))
    return FourierState(u.basis, chi * bilinear(u, u).coeffs)


def truncated_bilinear_derivative(u: FourierState, direction: FourierState, R: float,
                                  cutoff_profile=SMOOTH_CUTOFF) -> FourierState:
    _check_same(u, direction)
    if R <= 0:
        raise ValueError("R must be positive")
    lam = u.basis.eigenvalues
    s = float(np.sum((lam * u.coeffs) ** 2))
    chi = float(cutoff_profile(s / R))
    dchi = float(cutoff_profile.derivative(s / R)) / R
    th = direction.coeffs
    out = chi * (u.basis.jacobian(u.coeffs)[0] @ th)
    if dchi != 0.0:
        out = out + 2.0 * dchi * float(np.sum(lam**2 * u.coeffs * th)) * u.basis.quadratic(u.coeffs)[0]
    return FourierState(u.basis, out)
