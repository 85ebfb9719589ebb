"""Exponential-Euler integration of the Galerkin system and its variants.

One step of size ``dt`` maps

    u -> exp(-nu A dt) u - phi(dt) drift(u) + sqrt(q) xi,

with ``phi = (1 - exp(-nu lambda dt)) / (nu lambda)``,
``q = sigma^2 (1 - exp(-2 nu lambda dt)) / (2 nu lambda)`` (the exact variance of
the stochastic convolution over one step) and ``xi`` standard normal.  The
white increment seen by Girsanov accumulators is ``dW = sqrt(dt) xi``.  The
linear part is therefore exact, which the Gaussian reference checks rely on.

Trajectories are processed in fixed-size chunks.  Every trajectory draws its
noise from its own counter-based stream, and the chunk layout depends only on
``chunk_size``, so results are bitwise independent of the number of workers.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .noise import CovarianceSpec, stream
from .spectral import SMOOTH_CUTOFF, FourierState, SpectralBasis

NOISE_BLOCK = 64
DEFAULT_CHUNK = 256


class IntegrationError(RuntimeError):
    def __init__(self, t: float, message: str = "non-finite state"):
        super().__init__(f"{message} at t={t:.6g}")
        self.t = t


class EnsembleFailure(RuntimeError):
    def __init__(self, failed: list[int], result: "EnsembleResult", fail_time: float = math.nan):
        super().__init__(f"{len(failed)} trajectories failed (first at t={fail_time:.6g}): {failed[:20]}")
        self.failed = failed
        self.fail_time = fail_time
        self.result = result


# variants ------------------------------------------------------------------

@dataclass(frozen=True)
class Galerkin:
    pass


@dataclass(frozen=True)
class Linear:
    """Nonlinearity switched off: the Ornstein-Uhlenbeck system."""


@dataclass(frozen=True)
class Truncated:
    R: float
    profile: Callable = field(default=SMOOTH_CUTOFF, compare=False)

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("truncation level R must be positive")


@dataclass(frozen=True)
class Split:
    """Switch off (or freeze) the F-part of the nonlinearity on ``[t_end - eps, t_end]``.

    ``mode="stationary_compensated"`` replaces it by ``pi_F B`` of the state frozen at
    ``t_end - eps`` and propagated by the Stokes semigroup.
    """

    F: tuple
    eps: float
    mode: str = "plain"
    t_end: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "F", tuple(int(i) for i in self.F))
        if self.mode not in ("plain", "stationary_compensated"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        if not 0 < self.eps < self.t_end:
            raise ValueError(f"split eps={self.eps} must lie in (0, t_end={self.t_end})")


@dataclass(frozen=True)
class DriftRemoved:
    """Galerkin drift minus ``pi_F B``: the F-part evolves as an exact OU process."""

    F: tuple

    def __post_init__(self):
        object.__setattr__(self, "F", tuple(int(i) for i in self.F))


@dataclass(frozen=True, eq=False)
class DynamicsSpec:
    viscosity: float
    covariance: CovarianceSpec
    variant: object = Galerkin()
    projection_F: tuple | None = None

    def __post_init__(self):
        if not self.viscosity > 0:
            raise ValueError("viscosity must be positive")
        M = self.basis.size
        for F in (getattr(self.variant, "F", None), self.projection_F):
            if F is not None and (len(F) == 0 or min(F) < 0 or max(F) >= M or len(set(F)) != len(F)):
                raise ValueError(f"F={F} is not a set of mode indices of a {M}-mode basis")
        if self.projection_F is not None:
            object.__setattr__(self, "projection_F", tuple(int(i) for i in self.projection_F))

    @property
    def basis(self) -> SpectralBasis:
        return self.covariance.basis

    def with_variant(self, variant) -> "DynamicsSpec":
        return DynamicsSpec(self.viscosity, self.covariance, variant, self.projection_F)


def aligned_eps(eps: float, dt: float) -> float:
    """Round a splitting window to a whole number of steps."""
    n = max(1, round(eps / dt))
    return n * dt


# kernel --------------------------------------------------------------------

class _Kernel:
    """Per-``dt`` coefficients of the exponential-Euler map."""

    def __init__(self, spec: DynamicsSpec, dt: float):
        if not dt > 0:
            raise ValueError("dt must be positive")
        lam = spec.basis.eigenvalues
        nl = spec.viscosity * lam
        self.dt = dt
        self.decay = np.exp(-nl * dt)
        self.phi = -np.expm1(-nl * dt) / nl
        self.sqrt_q = np.sqrt(spec.covariance.variances * -np.expm1(-2.0 * nl * dt) / (2.0 * nl))
        self.sqrt_dt = math.sqrt(dt)
        self.lam = lam
        self.nu = spec.viscosity


class _Drift:
    """Drift of one variant for one chunk; holds the frozen state of compensated splits."""

    def __init__(self, spec: DynamicsSpec, kernel: _Kernel):
        self.spec = spec
        self.basis = spec.basis
        self.kernel = kernel
        v = spec.variant
        self.variant = v
        self.frozen = None
        self.branch_step = None
        if isinstance(v, Split):
            self.branch_step = round((v.t_end - v.eps) / kernel.dt)
            self.F = np.asarray(v.F, dtype=np.intp)
        elif isinstance(v, DriftRemoved):
            self.F = np.asarray(v.F, dtype=np.intp)

    def __call__(self, U: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(drift, girsanov_drift)``; the latter is the F-drift removed by the reference."""
        v = self.variant
        if isinstance(v, Linear):
            z = np.zeros_like(U)
            return z, z
        b = self.basis.quadratic(U)
        if isinstance(v, Galerkin):
            return b, b
        if isinstance(v, Truncated):
            s = np.sum((self.kernel.lam * U) ** 2, axis=1)
            chi = v.profile(s / v.R)
            d = chi[:, None] * b
            return d, d
        if isinstance(v, DriftRemoved):
            d = b.copy()
            d[:, self.F] = 0.0
            g = np.zeros_like(b)
            g[:, self.F] = -b[:, self.F]
            return d, g
        if isinstance(v, Split):
            if n < self.branch_step:
                return b, b
            d = b.copy()
            if v.mode == "plain":
                d[:, self.F] = 0.0
            else:
                if n == self.branch_step or self.frozen is None:
                    self.frozen = U.copy()
                lag = (n - self.branch_step) * self.kernel.dt
                W = np.exp(-self.kernel.nu * self.kernel.lam * lag) * self.frozen
                d[:, self.F] = self.basis.quadratic(W)[:, self.F]
            return d, d
        raise TypeError(f"unsupported variant {v!r}")


class _NoiseSource:
    """Standard normals per (trajectory, step), drawn in fixed blocks per stream."""

    def __init__(self, M: int, indices: Sequence[int], master_seed: int,
                 purpose: str = "noise", override: np.ndarray | None = None):
        self.M = M
        self.override = override
        self.gens = None if override is not None else [stream(master_seed, i, purpose) for i in indices]
        self.block = None
        self.block_start = -NOISE_BLOCK

    def __call__(self, step: int) -> np.ndarray:
        if self.override is not None:
            return self.override[:, step]
        if step >= self.block_start + NOISE_BLOCK:
            self.block_start = step - step % NOISE_BLOCK
            self.block = np.stack([g.standard_normal((NOISE_BLOCK, self.M)) for g in self.gens])
        return self.block[:, step - self.block_start]


# results -------------------------------------------------------------------

@dataclass
class TrajectoryRecord:
    times: np.ndarray
    states: list[FourierState]
    girsanov_log: tuple[np.ndarray, np.ndarray] | None = None
    tau_R: float = math.inf
    seed_info: tuple[int, int] = (0, 0)
    path: np.ndarray | None = None

    def weight(self) -> np.ndarray:
        if self.girsanov_log is None:
            raise ValueError("trajectory was run without Girsanov accumulation")
        stoch, quad = self.girsanov_log
        return np.exp(stoch - 0.5 * quad)


@dataclass
class EnsembleResult:
    """Snapshots and per-trajectory reductions of an ensemble.

    ``energy`` and ``dissipation`` are ``|u|_H^2`` at each snapshot and the
    running integral of ``|u|_V^2`` up to it; ``girsanov`` holds
    ``(stochastic integral, quadratic term)`` per snapshot.
    """

    basis: SpectralBasis
    times: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    sup_energy: np.ndarray
    tau: np.ndarray
    master_seed: int
    states: np.ndarray | None = None
    girsanov: np.ndarray | None = None
    path: np.ndarray | None = None
    failed: list[int] = field(default_factory=list)
    stationarity: dict | None = None

    @property
    def n_traj(self) -> int:
        return len(self.energy)

    def snapshot_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t={t}")
        return i

    def projected(self, F, t: float | None = None) -> np.ndarray:
        if self.states is None:
            raise ValueError("ensemble was run without keeping states")
        i = -1 if t is None else self.snapshot_index(t)
        return self.states[:, i][:, np.asarray(F, dtype=np.intp)]

    def log_weights(self, t: float | None = None) -> np.ndarray:
        if self.girsanov is None:
            raise ValueError("ensemble was run without Girsanov accumulation")
        i = -1 if t is None else self.snapshot_index(t)
        return self.girsanov[:, i, 0] - 0.5 * self.girsanov[:, i, 1]

    def weights(self, t: float | None = None) -> np.ndarray:
        return np.exp(self.log_weights(t))

    def record(self, j: int) -> TrajectoryRecord:
        states = [] if self.states is None else [FourierState(self.basis, s) for s in self.states[j]]
        glog = None
        if self.girsanov is not None:
            glog = (self.girsanov[j, :, 0].copy(), self.girsanov[j, :, 1].copy())
        path = None if self.path is None else self.path[j]
        return TrajectoryRecord(self.times.copy(), states, glog, float(self.tau[j]),
                                (self.master_seed, j), path)

    def records(self) -> list[TrajectoryRecord]:
        return [self.record(j) for j in range(self.n_traj)]

    def energy_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean of ``|u|^2`` per snapshot and its standard error."""
        e = self.energy
        return e.mean(axis=0), e.std(axis=0, ddof=1) / np.sqrt(len(e)) if len(e) > 1 else np.zeros(e.shape[1])


# engine --------------------------------------------------------------------

def _steps(horizon: float, dt: float) -> int:
    if not horizon > 0 or not dt > 0:
        raise ValueError("horizon and dt must be positive")
    n = round(horizon / dt)
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon={horizon} is not a whole number of steps of dt={dt}")
    return n


def _snapshot_steps(times, n_steps: int, dt: float) -> np.ndarray:
    if times is None:
        return np.array([0, n_steps])
    idx = {0}
    for t in np.atleast_1d(times):
        j = round(float(t) / dt)
        if j < 0 or j > n_steps or abs(j * dt - t) > 1e-6 * dt + 1e-12:
            raise ValueError(f"snapshot time {t} is outside [0, horizon] or off the dt grid")
        idx.add(j)
    return np.array(sorted(idx))


@dataclass(frozen=True)
class _Job:
    spec: DynamicsSpec
    x: np.ndarray
    dt: float
    n_steps: int
    n_burn: int
    snap: np.ndarray
    indices: tuple
    master_seed: int
    girsanov: bool
    keep_states: bool
    keep_path: bool
    tau_threshold: float | None
    noise: np.ndarray | None = None


def _run_chunk(job: _Job) -> dict:
    spec = job.spec
    basis = spec.basis
    M = basis.size
    n = len(job.indices)
    kern = _Kernel(spec, job.dt)
    drift = _Drift(spec, kern)
    noise = _NoiseSource(M, job.indices, job.master_seed, override=job.noise)
    lam = basis.eigenvalues
    U = np.repeat(job.x[None, :], n, axis=0)

    def advance(U, n_step, noise_step):
        d, g = drift(U, n_step)
        xi = noise(noise_step)
        Unew = kern.decay * U - kern.phi * d + kern.sqrt_q * xi
        return Unew, g, xi

    for j in range(job.n_burn):
        U, _, _ = advance(U, -1, j)

    S = len(job.snap)
    out = {
        "energy": np.empty((n, S)),
        "dissipation": np.empty((n, S)),
        "sup_energy": np.sum(U**2, axis=1),
        "tau": np.full(n, math.inf),
        "failed": np.zeros(n, dtype=bool),
        "fail_time": np.full(n, math.nan),
    }
    if job.keep_states:
        out["states"] = np.empty((n, S, M))
    if job.girsanov:
        F = np.asarray(spec.projection_F, dtype=np.intp)
        inv_sigma = 1.0 / np.sqrt(spec.covariance.variances[F])
        if not np.all(np.isfinite(inv_sigma)):
            raise ValueError("Girsanov weights need nonzero noise variance on F")
        out["girsanov"] = np.empty((n, S, 2))
        stoch = np.zeros(n)
        quad = np.zeros(n)
    if job.keep_path:
        out["path"] = np.empty((n, job.n_steps + 1, M))
    thr = job.tau_threshold
    diss = np.zeros(n)
    vnorm = np.sum(lam * U**2, axis=1)
    s = 0
    for step in range(job.n_steps + 1):
        if thr is not None:
            hit = np.isinf(out["tau"]) & (np.sum((lam * U) ** 2, axis=1) >= thr)
            out["tau"][hit] = step * job.dt
        if job.keep_path:
            out["path"][:, step] = U
        if s < S and job.snap[s] == step:
            out["energy"][:, s] = np.sum(U**2, axis=1)
            out["dissipation"][:, s] = diss
            if job.keep_states:
                out["states"][:, s] = U
            if job.girsanov:
                out["girsanov"][:, s, 0] = stoch
                out["girsanov"][:, s, 1] = quad
            s += 1
        if step == job.n_steps:
            break
        U, g, xi = advance(U, step, job.n_burn + step)
        bad = ~np.all(np.isfinite(U), axis=1)
        if bad.any():
            out["fail_time"][bad & ~out["failed"]] = (step + 1) * job.dt
            out["failed"] |= bad
            U[bad] = 0.0
        if job.girsanov:
            h = g[:, F] * inv_sigma
            stoch += kern.sqrt_dt * np.sum(h * xi[:, F], axis=1)
            quad += job.dt * np.sum(h * h, axis=1)
        vnew = np.sum(lam * U**2, axis=1)
        diss += 0.5 * job.dt * (vnorm + vnew)
        vnorm = vnew
        np.maximum(out["sup_energy"], np.sum(U**2, axis=1), out=out["sup_energy"])
    return out


def default_workers() -> int:
    return int(os.environ.get("SNSLAB_WORKERS", "1"))


def _execute(jobs: list[_Job], workers: int | None) -> list[dict]:
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(jobs) == 1:
        return [_run_chunk(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_chunk, jobs))


def _as_coeffs(x, basis: SpectralBasis) -> np.ndarray:
    if isinstance(x, FourierState):
        if not x.basis.same_as(basis):
            raise ValueError("initial state lives on a different basis")
        return np.array(x.coeffs)
    if x is None:
        return np.zeros(basis.size)
    return np.asarray(x, dtype=float)


def _ensemble(x, spec: DynamicsSpec, horizon: float, dt: float, n_traj: int, master_seed: int,
              snapshot_times=None, girsanov=False, keep_states=True, keep_path=False,
              tau_threshold=None, workers=None, chunk_size=DEFAULT_CHUNK, burn_in=0.0,
              noise=None, first_index=0) -> EnsembleResult:
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    if girsanov and spec.projection_F is None:
        raise ValueError("Girsanov accumulation needs spec.projection_F")
    n_steps = _steps(horizon, dt)
    n_burn = _steps(burn_in, dt) if burn_in > 0 else 0
    snap = _snapshot_steps(snapshot_times, n_steps, dt)
    if tau_threshold is None and isinstance(spec.variant, Truncated):
        tau_threshold = spec.variant.R
    x = _as_coeffs(x, spec.basis)
    jobs = []
    for start in range(0, n_traj, chunk_size):
        idx = tuple(range(first_index + start, first_index + min(n_traj, start + chunk_size)))
        jobs.append(_Job(spec, x, dt, n_steps, n_burn, snap, idx, int(master_seed), girsanov,
                         keep_states, keep_path, tau_threshold, noise))
    parts = _execute(jobs, workers)

    def cat(key):
        return np.concatenate([p[key] for p in parts]) if key in parts[0] else None

    failed = np.flatnonzero(cat("failed")) + first_index
    res = EnsembleResult(
        basis=spec.basis, times=snap * dt, energy=cat("energy"), dissipation=cat("dissipation"),
        sup_energy=cat("sup_energy"), tau=cat("tau"), master_seed=int(master_seed),
        states=cat("states"), girsanov=cat("girsanov"), path=cat("path"),
        failed=failed.tolist(),
    )
    if res.failed:
        ft = cat("fail_time")
        raise EnsembleFailure(res.failed, res, float(np.nanmin(ft)))
    return res


# public operations ------------------------------------------------------------

def step(state: FourierState, spec: DynamicsSpec, t: float, dt: float,
         increment: FourierState | None = None, frozen: FourierState | None = None) -> FourierState:
    """One exponential-Euler step from ``t`` to ``t + dt``.

    ``increment`` is the white Wiener increment (variance ``dt`` per mode); it is
    coloured here with the exact per-mode stochastic-convolution variance.  A
    compensated split inside its window needs the ``frozen`` branch-time state.
    """
    kern = _Kernel(spec, dt)
    drift = _Drift(spec, kern)
    n = round(t / dt)
    if isinstance(spec.variant, Split) and spec.variant.mode != "plain" and n > drift.branch_step:
        if frozen is None:
            raise ValueError("compensated split step inside the window needs the frozen state")
        drift.frozen = frozen.coeffs[None, :]
    U = state.coeffs[None, :]
    with np.errstate(over="raise", invalid="raise"):
        try:
            d, _ = drift(U, n)
            out = kern.decay * U - kern.phi * d
        except FloatingPointError as exc:
            raise IntegrationError(t, "overflow in drift") from exc
    if increment is not None:
        out = out + kern.sqrt_q * increment.coeffs / kern.sqrt_dt
    if not np.all(np.isfinite(out)):
        raise IntegrationError(t)
    return FourierState(spec.basis, out[0])


def run_trajectory(x, spec: DynamicsSpec, horizon: float, dt: float, snapshot_times=None, *,
                   girsanov: bool = False, master_seed: int = 0, index: int = 0,
                   noise: np.ndarray | None = None, keep_path: bool = False,
                   tau_threshold: float | None = None) -> TrajectoryRecord:
    """Single path; ``noise`` optionally overrides the standard normals, shape ``(steps, M)``."""
    if noise is not None:
        noise = np.asarray(noise, dtype=float)[None]
    try:
        res = _ensemble(x, spec, horizon, dt, 1, master_seed, snapshot_times, girsanov,
                        keep_states=True, keep_path=keep_path, tau_threshold=tau_threshold,
                        workers=1, chunk_size=1, noise=noise, first_index=index)
    except EnsembleFailure as exc:
        raise IntegrationError(exc.fail_time, "trajectory produced non-finite values") from exc
    return res.record(0)


def trajectory_noise(spec: DynamicsSpec, horizon: float, dt: float, master_seed: int,
                     index: int = 0) -> np.ndarray:
    """The standard normals ``run_trajectory`` would draw, shape ``(steps, M)``."""
    n_steps = _steps(horizon, dt)
    src = _NoiseSource(spec.basis.size, [index], master_seed)
    return np.stack([src(j)[0] for j in range(n_steps)])


def run_ensemble(x, spec: DynamicsSpec, horizon: float, dt: float, n_traj: int, master_seed: int,
                 snapshot_times=None, *, girsanov: bool = False, keep_states: bool = True,
                 keep_path: bool = False, tau_threshold: float | None = None,
                 workers: int | None = None, chunk_size: int = DEFAULT_CHUNK) -> EnsembleResult:
    return _ensemble(x, spec, horizon, dt, n_traj, master_seed, snapshot_times, girsanov,
                     keep_states, keep_path, tau_threshold, workers, chunk_size)


def run_stationary_ensemble(spec: DynamicsSpec, burn_in: float, horizon: float, dt: float,
                            n_traj: int, master_seed: int, snapshot_times=None, *,
                            girsanov: bool = False, keep_states: bool = True,
                            workers: int | None = None, chunk_size: int = DEFAULT_CHUNK,
                            threshold: float = 3.0) -> EnsembleResult:
    """Start at zero, discard ``burn_in``, then record over ``[0, horizon]``."""
    if not burn_in > 0:
        raise ValueError("burn_in must be positive")
    res = _ensemble(None, spec, horizon, dt, n_traj, master_seed, snapshot_times, girsanov,
                    keep_states, False, None, workers, chunk_size, burn_in=burn_in)
    e0, e1 = res.energy[:, 0], res.energy[:, -1]
    n = len(e0)
    se = math.sqrt((e0.var(ddof=1) + e1.var(ddof=1)) / n) if n > 1 else 0.0
    diff = float(e1.mean() - e0.mean())
    z = diff / se if se > 0 else (0.0 if diff == 0 else math.inf)
    res.stationarity = {"start_mean": float(e0.mean()), "end_mean": float(e1.mean()),
                        "combined_se": se, "z": z, "stationary": abs(z) < threshold}
    if abs(z) >= threshold:
        warnings.warn(f"recording window not stationary: energy drift z={z:.2f}", RuntimeWarning)
    return res


# coupled splitting runs ----------------------------------------------------------

@dataclass(frozen=True)
class _SplitJob:
    spec: DynamicsSpec
    x: np.ndarray
    dt: float
    n_steps: int
    n_burn: int
    F: tuple
    eps_steps: tuple
    mode: str
    indices: tuple
    master_seed: int


def _run_split_chunk(job: _SplitJob) -> np.ndarray:
    spec = job.spec
    kern = _Kernel(spec, job.dt)
    base = _Drift(spec, kern)
    t_end = job.n_steps * job.dt
    branches = {}
    for e in job.eps_steps:
        v = Split(job.F, e * job.dt, job.mode, t_end)
        d = _Drift(spec.with_variant(v), kern)
        d.branch_step = job.n_steps - e
        branches[e] = d
    noise = _NoiseSource(spec.basis.size, job.indices, job.master_seed)
    U = np.repeat(job.x[None, :], len(job.indices), axis=0)
    for j in range(job.n_burn):
        d, _ = base(U, -1)
        U = kern.decay * U - kern.phi * d + kern.sqrt_q * noise(j)
    states = {}
    for step in range(job.n_steps):
        for e, d in branches.items():
            if step == d.branch_step:
                states[e] = U.copy()
        xi = noise(job.n_burn + step)
        for e, V in states.items():
            dv, _ = branches[e](V, step)
            states[e] = kern.decay * V - kern.phi * dv + kern.sqrt_q * xi
        d, _ = base(U, step)
        U = kern.decay * U - kern.phi * d + kern.sqrt_q * xi
    F = np.asarray(job.F, dtype=np.intp)
    return np.stack([np.linalg.norm(U[:, F] - states[e][:, F], axis=1) for e in job.eps_steps], axis=1)


def run_split_differences(x, spec: DynamicsSpec, F, eps_list, dt: float, n_traj: int,
                          master_seed: int, *, mode: str = "plain", t_end: float = 1.0,
                          burn_in: float = 0.0, workers: int | None = None,
                          chunk_size: int = DEFAULT_CHUNK) -> tuple[np.ndarray, np.ndarray]:
    """``|pi_F (u(t_end) - u^eps(t_end))|`` for each trajectory and window.

    The split paths branch off the Galerkin path at ``t_end - eps`` and share its
    noise; by construction they coincide before the branch time.  Returns the
    grid-aligned windows and an ``(n_traj, len(eps_list))`` array.
    """
    n_steps = _steps(t_end, dt)
    n_burn = _steps(burn_in, dt) if burn_in > 0 else 0
    eps_steps = tuple(max(1, round(e / dt)) for e in eps_list)
    if any(e >= n_steps for e in eps_steps):
        raise ValueError("every eps must be smaller than t_end")
    x = _as_coeffs(x, spec.basis)
    F = tuple(int(i) for i in F)
    jobs = [
        _SplitJob(spec, x, dt, n_steps, n_burn, F, eps_steps, mode,
                  tuple(range(s, min(n_traj, s + chunk_size))), int(master_seed))
        for s in range(0, n_traj, chunk_size)
    ]
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(jobs) == 1:
        parts = [_run_split_chunk(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_split_chunk, jobs))
    return np.array(eps_steps) * dt, np.concatenate(parts)
