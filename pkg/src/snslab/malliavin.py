"""Malliavin derivatives of the truncated Galerkin dynamics.

Along a frozen base path ``u_R`` the derivative ``eta_k(t, s)`` solves the
linearised equation with ``eta_k(s, s) = e_k``.  Discretely this is the product
of the one-step Jacobians of the exponential-Euler map,

    L_n = exp(-nu A dt) - phi(dt) DB_R(u_n),

so ``eta_k(t_N, t_m) = L_{N-1} ... L_m e_k``.  The Malliavin matrix only needs
``Df(u(t)) eta_k(t, s)`` for all ``s``; one backward sweep of row vectors
through the ``L_n`` produces these for every start time at once.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .integrator import DynamicsSpec, Truncated, _Kernel, run_trajectory, trajectory_noise


def coordinate_functional(F) -> Callable[[np.ndarray], np.ndarray]:
    """``f(u) = (u_{n_1}, ..., u_{n_d})``."""
    F = np.asarray(F, dtype=np.intp)

    def grad(u):
        G = np.zeros((len(F), np.shape(u)[-1]))
        G[np.arange(len(F)), F] = 1.0
        return G

    grad.dim = len(F)
    return grad


def squared_norm_functional() -> Callable[[np.ndarray], np.ndarray]:
    """``f(u) = |u|_H^2`` with ``Df(u) = 2 <u, .>``."""

    def grad(u):
        return 2.0 * np.asarray(u, dtype=float)[None, :]

    grad.dim = 1
    return grad


@dataclass(frozen=True, eq=False)
class MalliavinSystem:
    spec: DynamicsSpec
    path: np.ndarray
    dt: float
    gradient: Callable
    directions: tuple | None = None

    def __post_init__(self):
        if not isinstance(self.spec.variant, Truncated):
            raise ValueError("Malliavin derivatives are defined for the truncated dynamics")
        if self.path.ndim != 2 or self.path.shape[1] != self.spec.basis.size:
            raise ValueError("path must have shape (steps + 1, n_modes)")

    @property
    def K(self) -> np.ndarray:
        if self.directions is None:
            return np.arange(self.spec.basis.size)
        return np.asarray(self.directions, dtype=np.intp)

    @property
    def horizon(self) -> float:
        return (len(self.path) - 1) * self.dt

    def step_index(self, t: float) -> int:
        n = round(t / self.dt)
        if n < 0 or n >= len(self.path) or abs(n * self.dt - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"time {t} is not covered by the base path grid")
        return n


def build_system(x, spec: DynamicsSpec, horizon: float, dt: float, gradient: Callable, *,
                 master_seed: int = 0, index: int = 0, directions=None) -> MalliavinSystem:
    rec = run_trajectory(x, spec, horizon, dt, master_seed=master_seed, index=index, keep_path=True)
    return MalliavinSystem(spec, rec.path, dt, gradient, directions)


def truncated_jacobian(spec: DynamicsSpec, U: np.ndarray) -> np.ndarray:
    """Matrices of ``DB_R(u)`` for each row of ``U``, shape ``(n, M, M)``."""
    v = spec.variant
    basis = spec.basis
    U = np.atleast_2d(U)
    lam = basis.eigenvalues
    s = np.sum((lam * U) ** 2, axis=1) / v.R
    chi = v.profile(s)
    dchi = v.profile.derivative(s) / v.R
    J = chi[:, None, None] * basis.jacobian(U)
    active = dchi != 0
    if np.any(active):
        B = basis.quadratic(U[active])
        J[active] += 2.0 * dchi[active, None, None] * B[:, :, None] * (lam**2 * U[active])[:, None, :]
    return J


def step_matrices(spec: DynamicsSpec, dt: float, U: np.ndarray) -> np.ndarray:
    """One-step Jacobians ``L = exp(-nu A dt) - phi DB_R(u)`` of the integrator."""
    kern = _Kernel(spec, dt)
    L = -kern.phi[None, :, None] * truncated_jacobian(spec, U)
    idx = np.arange(spec.basis.size)
    L[:, idx, idx] += kern.decay
    return L


def evolve_eta(sys: MalliavinSystem, k: int, s: float, t: float | None = None) -> np.ndarray:
    """Forward path ``eta_k(t_n, s)`` for grid times ``s <= t_n <= t``, shape ``(steps + 1, M)``."""
    m = sys.step_index(s)
    N = sys.step_index(sys.horizon if t is None else t)
    if N < m:
        raise ValueError("t must not precede s")
    L = step_matrices(sys.spec, sys.dt, sys.path[m:N])
    eta = np.zeros((N - m + 1, sys.spec.basis.size))
    eta[0, k] = 1.0
    for j in range(N - m):
        eta[j + 1] = L[j] @ eta[j]
    return eta


def propagator(sys: MalliavinSystem, s: float, t: float) -> np.ndarray:
    """Matrix with columns ``eta_k(t, s)``."""
    m, N = sys.step_index(s), sys.step_index(t)
    P = np.eye(sys.spec.basis.size)
    L = step_matrices(sys.spec, sys.dt, sys.path[m:N])
    for j in range(N - m):
        P = L[j] @ P
    return P


@dataclass
class MalliavinMatrix:
    entries: np.ndarray

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries))


def _s_grid(N: int, stride: int) -> np.ndarray:
    grid = list(range(0, N, stride))
    if not grid or grid[-1] != N:
        grid.append(N)
    return np.array(grid)


def assemble_matrices(spec: DynamicsSpec, paths: np.ndarray, dt: float, t: float, gradient: Callable,
                      directions=None, stride: int = 1) -> np.ndarray:
    """Malliavin matrices for a batch of base paths, shape ``(P, d, d)``.

    ``M_ij = sum_k sigma_k^2 int_0^t (Df_i eta_k(t,s)) (Df_j eta_k(t,s)) ds`` with
    trapezoidal quadrature over start times ``0, stride dt, ..., t``.
    """
    paths = np.asarray(paths, dtype=float)
    if paths.ndim == 2:
        paths = paths[None]
    N = round(t / dt)
    if N < 1 or N > paths.shape[1] - 1:
        raise ValueError("t is not covered by the base paths")
    Mdim = spec.basis.size
    K = np.arange(Mdim) if directions is None else np.asarray(directions, dtype=np.intp)
    if len(K) == 0:
        raise ValueError("direction set K is empty")
    weight = np.zeros(Mdim)
    weight[K] = spec.covariance.variances[K]
    psi = np.stack([gradient(p[N]) for p in paths])  # (P, d, M)
    grid = _s_grid(N, stride)
    gset = set(grid.tolist())
    vals = {}
    for m in range(N, -1, -1):
        if m < N:
            psi = psi @ step_matrices(spec, dt, paths[:, m])
        if m in gset:
            vals[m] = np.einsum("pim,m,pjm->pij", psi, weight, psi)
    s = grid * dt
    out = np.zeros_like(vals[N])
    for a, b, sa, sb in zip(grid[:-1], grid[1:], s[:-1], s[1:]):
        out += 0.5 * (sb - sa) * (vals[a] + vals[b])
    return 0.5 * (out + out.transpose(0, 2, 1))


def assemble_matrix(sys: MalliavinSystem, t: float | None = None, stride: int = 1) -> MalliavinMatrix:
    t = sys.horizon if t is None else t
    sys.step_index(t)
    M = assemble_matrices(sys.spec, sys.path, sys.dt, t, sys.gradient, sys.directions, stride)[0]
    return MalliavinMatrix(M)


@dataclass
class NondegeneracyReport:
    min_eigenvalues: np.ndarray
    relative_min: np.ndarray
    condition_numbers: np.ndarray
    thresholds: tuple
    fraction_below: dict

    def quantiles(self, q=(0.0, 0.05, 0.5, 0.95, 1.0)) -> dict:
        return {float(p): float(np.quantile(self.condition_numbers, p)) for p in q}

    @property
    def all_nondegenerate(self) -> bool:
        return bool(self.fraction_below[self.thresholds[0]] == 0.0)

    def to_text(self) -> str:
        lines = [f"matrices: {len(self.min_eigenvalues)}"]
        lines.append(f"smallest eigenvalue: min {self.min_eigenvalues.min():.6g}, "
                     f"median {np.median(self.min_eigenvalues):.6g}")
        for thr, frac in self.fraction_below.items():
            lines.append(f"fraction with lambda_min <= {thr:g} * trace: {frac:.4f}")
        for p, c in self.quantiles().items():
            lines.append(f"condition number q{p:.2f}: {c:.6g}")
        return "\n".join(lines) + "\n"


def nondegeneracy_report(matrices, thresholds=(1e-12, 1e-8, 1e-4)) -> NondegeneracyReport:
    mats = [m.entries if isinstance(m, MalliavinMatrix) else np.asarray(m) for m in matrices]
    if not mats:
        raise ValueError("empty matrix ensemble")
    eig = np.array([np.linalg.eigvalsh(m) for m in mats])
    tr = np.array([np.trace(m) for m in mats])
    lo, hi = eig[:, 0], eig[:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(tr > 0, lo / tr, 0.0)
        cond = np.where(lo > 0, hi / np.where(lo > 0, lo, 1.0), np.inf)
    frac = {thr: float(np.mean(rel <= thr)) for thr in thresholds}
    return NondegeneracyReport(lo, rel, cond, tuple(thresholds), frac)


def finite_difference_sensitivity(x, spec: DynamicsSpec, horizon: float, dt: float, k: int, s: float,
                                  delta: float, *, master_seed: int = 0, index: int = 0) -> np.ndarray:
    """Pathwise derivative of ``u_R(horizon)`` under a Cameron-Martin bump.

    The bump adds ``delta`` to the Wiener increment of mode ``k`` over
    ``[s - dt, s]``; the central difference estimates ``sigma_k eta_k(horizon, s)``.
    """
    m = round(s / dt)
    if m < 1:
        raise ValueError("s must be at least one step after 0")
    xi = trajectory_noise(spec, horizon, dt, master_seed, index)
    ends = []
    for sign in (1.0, -1.0):
        pert = xi.copy()
        pert[m - 1, k] += sign * delta / np.sqrt(dt)
        rec = run_trajectory(x, spec, horizon, dt, noise=pert, master_seed=master_seed, index=index)
        ends.append(rec.states[-1].coeffs)
    return (ends[0] - ends[1]) / (2.0 * delta)
