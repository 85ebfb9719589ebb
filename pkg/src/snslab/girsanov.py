"""Girsanov reweighting of projected Galerkin laws against the exact OU reference."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .integrator import DynamicsSpec
from .noise import DegenerateCovarianceError
from .spectral import FourierState


@dataclass(frozen=True)
class GirsanovAccumulator:
    """Log-weight components; the weight is only exponentiated on readout."""

    F: tuple
    stoch_integral: float = 0.0
    quad_variation: float = 0.0

    @property
    def log_weight(self) -> float:
        return self.stoch_integral - 0.5 * self.quad_variation

    @property
    def weight(self) -> float:
        return math.exp(self.log_weight)


def _integrand(state: FourierState, spec: DynamicsSpec, F) -> np.ndarray:
    F = np.asarray(F, dtype=np.intp)
    var = spec.covariance.variances[F]
    if np.any(var == 0):
        raise DegenerateCovarianceError(f"zero noise variance on mode(s) {F[var == 0].tolist()}")
    b = state.basis.quadratic(state.coeffs)[0]
    return b[F] / np.sqrt(var)


def accumulate(acc: GirsanovAccumulator, state: FourierState, increment: FourierState,
               dt: float, spec: DynamicsSpec) -> GirsanovAccumulator:
    """Left-point Ito update with the white increment ``dW`` that drove the step."""
    h = _integrand(state, spec, acc.F)
    dW = increment.coeffs[np.asarray(acc.F, dtype=np.intp)]
    return GirsanovAccumulator(acc.F, acc.stoch_integral + float(h @ dW),
                               acc.quad_variation + float(h @ h) * dt)


def inverse_weight_accumulate(acc: GirsanovAccumulator, state: FourierState,
                              increment: FourierState, dt: float,
                              spec: DynamicsSpec) -> GirsanovAccumulator:
    """Same update along the drift-removed process, with the stochastic term negated."""
    h = _integrand(state, spec, acc.F)
    dW = increment.coeffs[np.asarray(acc.F, dtype=np.intp)]
    return GirsanovAccumulator(acc.F, acc.stoch_integral - float(h @ dW),
                               acc.quad_variation + float(h @ h) * dt)


# Gaussian reference -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OUReference:
    F: tuple
    viscosity: float
    variances: np.ndarray
    eigenvalues: np.ndarray
    window: float
    mean: np.ndarray
    Q: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.F)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.Q)


def ou_variance(variance, eigenvalue, viscosity: float, window: float):
    """``int_0^w sigma^2 exp(-2 nu lambda s) ds``; ``w = inf`` gives the stationary value."""
    rate = 2.0 * viscosity * np.asarray(eigenvalue, dtype=float)
    if math.isinf(window):
        return np.asarray(variance, dtype=float) / rate
    return np.asarray(variance, dtype=float) * -np.expm1(-rate * window) / rate


def ou_reference(spec: DynamicsSpec, F, window: float, x: FourierState | np.ndarray | None = None
                 ) -> OUReference:
    """Law of ``pi_F z(window)`` for ``dz + nu A z dt = pi_F C^{1/2} dW`` from ``pi_F x``."""
    if not window > 0:
        raise ValueError("window must be positive")
    F = tuple(int(i) for i in F)
    idx = np.asarray(F, dtype=np.intp)
    lam = spec.basis.eigenvalues[idx]
    var = spec.covariance.variances[idx]
    if x is None:
        mean = np.zeros(len(F))
    else:
        c = x.coeffs if isinstance(x, FourierState) else np.asarray(x, dtype=float)
        mean = np.zeros(len(F)) if math.isinf(window) else np.exp(-spec.viscosity * lam * window) * c[idx]
    Q = ou_variance(var, lam, spec.viscosity, window)
    return OUReference(F, spec.viscosity, var, lam, window, mean, Q)


def ou_exact_sample(ref: OUReference, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    shape = (ref.dim,) if size is None else (size, ref.dim)
    return ref.mean + ref.std * rng.standard_normal(shape)


def ou_density(ref: OUReference, point) -> np.ndarray | float:
    if np.any(ref.Q <= 0):
        raise DegenerateCovarianceError("OU covariance is singular on F")
    z = (np.asarray(point, dtype=float) - ref.mean) / ref.std
    logp = -0.5 * np.sum(z**2, axis=-1) - 0.5 * ref.dim * math.log(2 * math.pi) - 0.5 * np.sum(np.log(ref.Q))
    out = np.exp(logp)
    return float(out) if np.ndim(out) == 0 else out


# equivalence test ---------------------------------------------------------------

KS_CRITICAL_1PCT = float(stats.kstwobign.isf(0.01))


def effective_sample_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(w.sum() ** 2 / np.sum(w**2))


def weighted_mean(values, weights) -> tuple[float, float]:
    """Unnormalised estimator ``mean(w g)`` and its standard error."""
    wg = np.asarray(weights) * np.asarray(values)
    return float(wg.mean()), float(wg.std(ddof=1) / math.sqrt(len(wg)))


def weighted_covariance(samples, weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    X = np.asarray(samples, dtype=float)
    w = w / w.sum()
    mu = w @ X
    D = X - mu
    return (D * w[:, None]).T @ D


def weighted_ks_distance(values, weights, cdf) -> float:
    """``sup_x |F_w(x) - cdf(x)|`` for the self-normalised weighted ECDF."""
    order = np.argsort(values, kind="stable")
    x = np.asarray(values)[order]
    w = np.asarray(weights, dtype=float)[order]
    cum = np.cumsum(w) / w.sum()
    before = np.concatenate([[0.0], cum[:-1]])
    ref = cdf(x)
    return float(max(np.max(np.abs(cum - ref)), np.max(np.abs(before - ref))))


@dataclass
class EquivalenceReport:
    rows: list[tuple[str, float, float, float]] = field(default_factory=list)
    ks: list[tuple[str, float, float]] = field(default_factory=list)
    ess: float = 0.0
    n: int = 0
    reliable: bool = True
    z_max: float = 3.0

    @property
    def passed(self) -> bool:
        return (
            self.reliable
            and all(abs(z) <= self.z_max for *_, z in self.rows)
            and all(d < crit for _, d, crit in self.ks)
        )

    def table(self) -> list[dict]:
        out = [{"statistic": s, "estimate": e, "std_error": se, "z_score": z} for s, e, se, z in self.rows]
        for name, d, crit in self.ks:
            out.append({"statistic": name, "estimate": d, "std_error": crit / KS_CRITICAL_1PCT,
                        "z_score": d / crit * KS_CRITICAL_1PCT})
        return out

    def summary(self) -> str:
        return (f"RESULT {'PASS' if self.passed else 'FAIL'} n={self.n} ess={self.ess:.1f} "
                f"reliable={self.reliable} max|z|={max((abs(r[3]) for r in self.rows), default=0):.3f}")


def reweighted_equivalence_test(samples, weights, ref: OUReference, *, z_max: float = 3.0,
                                ess_floor: float = 100.0, ks_critical: float = KS_CRITICAL_1PCT
                                ) -> EquivalenceReport:
    """Compare the ``weights``-reweighted law of ``samples`` with the OU reference.

    Moments use the unnormalised estimator (unbiased because ``E[G] = 1``);
    marginal CDFs use the self-normalised one with the Kish effective sample size
    in the critical value ``ks_critical / sqrt(ess)``.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    w = np.asarray(weights, dtype=float)
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive and finite")
    if X.shape != (len(w), ref.dim):
        raise ValueError(f"samples must have shape ({len(w)}, {ref.dim})")
    ess = effective_sample_size(w)
    rep = EquivalenceReport(ess=ess, n=len(w), reliable=ess >= ess_floor, z_max=z_max)
    est, se = weighted_mean(np.ones(len(w)), w)
    rep.rows.append(("weight_mean", est, se, (est - 1.0) / se if se > 0 else 0.0))
    for i, mode in enumerate(ref.F):
        for order, target, g in (
            (1, ref.mean[i], X[:, i]),
            (2, ref.Q[i], (X[:, i] - ref.mean[i]) ** 2),
        ):
            est, se = weighted_mean(g, w)
            z = float((est - target) / se) if se > 0 else (0.0 if est == target else math.inf)
            rep.rows.append((f"moment{order}_mode{mode}", est, se, z))
        d = weighted_ks_distance(X[:, i], w, stats.norm(ref.mean[i], ref.std[i]).cdf)
        rep.ks.append((f"ks_mode{mode}", d, ks_critical / math.sqrt(ess)))
    return rep
