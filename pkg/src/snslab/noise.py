"""Diagonal trace-class noise covariances and reproducible random streams."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .spectral import FourierState, SpectralBasis


class DegenerateCovarianceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CovarianceSpec:
    """Covariance diagonal in the Stokes basis, ``C e_k = sigma_k^2 e_k``."""

    basis: SpectralBasis
    variances: np.ndarray
    family: str = "explicit_list"
    alpha: float | None = None

    def __post_init__(self):
        v = np.array(self.variances, dtype=float)
        if v.shape != (self.basis.size,):
            raise ValueError(f"need {self.basis.size} variances, got shape {v.shape}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("variances must be finite and nonnegative")
        v.flags.writeable = False
        object.__setattr__(self, "variances", v)
        if self.family not in ("power_law", "explicit_list"):
            raise ValueError(f"unknown covariance family {self.family!r}")

    @property
    def trace(self) -> float:
        return float(np.sum(self.variances))

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(self.variances)

    @property
    def injective(self) -> bool:
        return bool(np.all(self.variances > 0))

    def restrict(self, indices) -> np.ndarray:
        return self.variances[np.asarray(indices, dtype=np.intp)]


def power_law(basis: SpectralBasis, alpha: float) -> CovarianceSpec:
    """``C = A^{-alpha}``."""
    return CovarianceSpec(basis, basis.eigenvalues ** (-float(alpha)), "power_law", float(alpha))


def explicit_list(basis: SpectralBasis, variances) -> CovarianceSpec:
    return CovarianceSpec(basis, np.asarray(variances, dtype=float), "explicit_list")


@dataclass
class MarkovDiagnostic:
    eps: float
    delta: float
    partial_trace: float
    inverse_bound: float
    inverse_bounded: bool
    trace_condition: bool | None = None
    boundedness_condition: bool | None = None

    @property
    def satisfied(self) -> bool | None:
        if self.trace_condition is None:
            return None
        return self.trace_condition and self.boundedness_condition

    def to_text(self) -> str:
        verdict = {True: "satisfied", False: "fails", None: "unknown (no tail model)"}
        lines = [
            f"eps = {self.eps:g}, delta = {self.delta:g}",
            f"partial trace sum lambda^(1+eps) sigma^2 = {self.partial_trace:.6g}",
            f"max sigma^-1 lambda^-delta = {self.inverse_bound:.6g}"
            + ("" if self.inverse_bounded else "  (zero variance: unbounded)"),
            f"trace condition: {verdict[self.trace_condition]}",
            f"boundedness condition: {verdict[self.boundedness_condition]}",
            f"verdict: {verdict[self.satisfied]}",
        ]
        return "\n".join(lines) + "\n"


def check_markov_assumption(spec: CovarianceSpec, eps: float, delta: float) -> MarkovDiagnostic:
    """Finite-basis partial sums plus, for power laws, the infinite-dimensional verdict.

    On the 3-torus the number of modes below ``lambda`` grows like
    ``lambda**1.5``, so ``sum lambda**(1+eps-alpha)`` converges iff
    ``alpha > 5/2 + eps``; ``sigma^-1 lambda^-delta = lambda**(alpha/2-delta)`` is
    bounded iff ``alpha <= 2 delta``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not 1.0 < delta <= 1.5:
        raise ValueError(f"delta must lie in (1, 3/2], got {delta}")
    lam = spec.basis.eigenvalues
    var = spec.variances
    partial = float(np.sum(lam ** (1.0 + eps) * var))
    bounded = bool(np.all(var > 0))
    with np.errstate(divide="ignore"):
        inv = np.where(var > 0, 1.0 / np.sqrt(np.where(var > 0, var, 1.0)), np.inf) * lam ** (-delta)
    diag = MarkovDiagnostic(eps, delta, partial, float(np.max(inv)), bounded)
    if spec.family == "power_law":
        diag.trace_condition = spec.alpha > 2.5 + eps
        diag.boundedness_condition = spec.alpha <= 2.0 * delta
    elif not bounded:
        diag.boundedness_condition = False
    return diag


def _purpose_code(purpose: str) -> int:
    return int.from_bytes(hashlib.sha256(purpose.encode()).digest()[:4], "little")


def stream(master_seed: int, index: int = 0, purpose: str = "noise") -> np.random.Generator:
    """Counter-based substream keyed by ``(master_seed, index, purpose)``."""
    seq = np.random.SeedSequence([int(master_seed), int(index), _purpose_code(purpose)])
    return np.random.Generator(np.random.Philox(seq))


def sample_increment(spec: CovarianceSpec, dt: float, rng: np.random.Generator) -> FourierState:
    """Coloured increment ``C^{1/2} (W(t+dt) - W(t))``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    xi = rng.standard_normal(spec.basis.size)
    return FourierState(spec.basis, spec.sigma * np.sqrt(dt) * xi)


def apply_sqrt_inverse(spec: CovarianceSpec, u: FourierState, support) -> FourierState:
    """``C^{-1/2}`` on the modes in ``support``, zero elsewhere."""
    support = np.asarray(support, dtype=np.intp)
    var = spec.variances[support]
    if np.any(var == 0):
        bad = support[var == 0]
        raise DegenerateCovarianceError(f"zero noise variance on mode(s) {bad.tolist()}")
    out = np.zeros(spec.basis.size)
    out[support] = u.coeffs[support] / np.sqrt(var)
    return FourierState(u.basis, out)
