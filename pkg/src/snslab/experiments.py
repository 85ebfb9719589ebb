"""Config-driven experiment runs writing CSV tables, binary streams and a manifest."""
from __future__ import annotations

import math
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .besov import (besov_seminorm_estimate, default_box, default_h_sweep, default_omegas,
                    estimate_density, l1_distance, lp_membership_report, sinusoid_family,
                    weak_exponent_experiment)
from .config import ExperimentConfig, serialize
from .girsanov import ou_exact_sample, ou_reference, reweighted_equivalence_test
from .integrator import (DynamicsSpec, EnsembleFailure, Galerkin, Linear, Split, Truncated,
                         run_ensemble, run_split_differences, run_stationary_ensemble)
from .io import density_bytes, write_csv, write_manifest, write_snapshots, _atomic_write
from .malliavin import (assemble_matrices, coordinate_functional, nondegeneracy_report,
                        squared_norm_functional)
from .noise import explicit_list, power_law, stream
from .spectral import build_basis, random_state

EXIT_PASS, EXIT_ERROR, EXIT_STAT_FAIL = 0, 1, 2


@dataclass
class RunOutcome:
    status: int
    verdict: str
    out_dir: Path
    lines: list = field(default_factory=list)
    failures: list = field(default_factory=list)


@dataclass
class _Ctx:
    cfg: ExperimentConfig
    out: Path
    workers: int | None
    lines: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def say(self, line: str) -> None:
        self.lines.append(line)


def build_spec(cfg: ExperimentConfig):
    """Basis, dynamics and initial state described by ``cfg``."""
    b = cfg["basis"]
    basis = build_basis(b["cutoff"], b["n_modes"])
    nz = cfg["noise"]
    cov = power_law(basis, nz["alpha"]) if nz["family"] == "power_law" else explicit_list(basis, nz["variances"])
    dyn, ex = cfg["dynamics"], cfg["experiment"]
    variant = {
        "galerkin": lambda: Galerkin(),
        "linear": lambda: Linear(),
        "truncated": lambda: Truncated(dyn["R"]),
        "split": lambda: Split(tuple(ex["F"]), ex["eps"], ex["split_mode"], cfg["time"]["horizon"]),
    }[dyn["variant"]]()
    F = tuple(ex["F"]) if ex["F"] is not None else None
    spec = DynamicsSpec(dyn["viscosity"], cov, variant, F)
    if dyn["initial"] == "zero":
        x = np.zeros(basis.size)
    else:
        x = random_state(basis, np.random.default_rng(dyn["initial_seed"]), dyn["initial_scale"]).coeffs
    return basis, spec, x


def _snapshots(cfg) -> list[float]:
    h = cfg["time"]["horizon"]
    snaps = cfg["time"]["snapshots"]
    return sorted(set([0.0, h] + [float(t) for t in snaps])) if snaps else [0.0, 0.25 * h, 0.5 * h, h]


def _ensemble(ctx: _Ctx, spec, x, *, girsanov=False, keep_path=False, snapshot_times=None):
    cfg = ctx.cfg
    tm, ens = cfg["time"], cfg["ensemble"]
    kw = dict(girsanov=girsanov, workers=ctx.workers, chunk_size=ens["chunk_size"])
    try:
        if cfg["experiment"]["stationary"]:
            if keep_path:
                raise ValueError("stationary ensembles do not keep paths")
            return run_stationary_ensemble(spec, tm["burn_in"], tm["horizon"], tm["dt"], ens["n_traj"],
                                           ens["seed"], snapshot_times, **kw)
        return run_ensemble(x, spec, tm["horizon"], tm["dt"], ens["n_traj"], ens["seed"], snapshot_times,
                            keep_path=keep_path, **kw)
    except EnsembleFailure as exc:
        ctx.failures.extend(exc.failed)
        raise


def _z(est, target, se):
    if se > 0:
        return float((est - target) / se)
    return 0.0 if est == target else math.inf


# kinds ---------------------------------------------------------------------------------

def _simulate(ctx: _Ctx) -> bool | None:
    basis, spec, x = build_spec(ctx.cfg)
    res = _ensemble(ctx, spec, x, snapshot_times=_snapshots(ctx.cfg))
    mean, se = res.energy_moments()
    rows = [(t, m, s, float(res.dissipation[:, i].mean())) for i, (t, m, s) in enumerate(zip(res.times, mean, se))]
    write_csv(ctx.out / "energy.csv", ["t[time]", "mean_energy[H^2]", "std_error[H^2]",
                                       "mean_dissipation[V^2*time]"], rows)
    write_snapshots(ctx.out / "snapshots.snsl", ctx.cfg["basis"]["cutoff"], res.times, res.states)
    if isinstance(spec.variant, Truncated):
        tau = res.tau
        write_csv(ctx.out / "tau.csv", ["trajectory[-]", "tau_R[time]"],
                  [(j, t if np.isfinite(t) else "inf") for j, t in enumerate(tau)])
        ctx.say(f"fraction with tau_R <= horizon: {np.mean(np.isfinite(tau)):.4f}")
    ctx.say(f"simulated {res.n_traj} trajectories over {len(res.times)} snapshots")
    return None


def _energy_check(ctx: _Ctx) -> bool:
    cfg = ctx.cfg
    basis, spec, x = build_spec(cfg)
    if not isinstance(spec.variant, (Galerkin, Linear)):
        raise ValueError("the energy balance holds for the Galerkin or linear dynamics")
    res = _ensemble(ctx, spec, x, snapshot_times=_snapshots(cfg))
    tr = spec.covariance.trace
    x2 = float(x @ x)
    nu = spec.viscosity
    rows, ok = [], True
    for i, t in enumerate(res.times):
        if t == 0:
            continue
        r = res.energy[:, i] + 2 * nu * res.dissipation[:, i] - x2 - t * tr
        est = float(r.mean())
        se = float(r.std(ddof=1) / math.sqrt(len(r)))
        z = _z(est, 0.0, se)
        ok &= abs(z) <= cfg["tolerances"]["z_max"]
        rows.append((t, float(res.energy[:, i].mean()), est, se, z))
        ctx.say(f"t={t:g}: residual {est:.3e} +/- {se:.3e} (z={z:.2f})")
    write_csv(ctx.out / "energy_balance.csv",
              ["t[time]", "mean_energy[H^2]", "residual[H^2]", "std_error[H^2]", "z_score[-]"], rows)
    return ok


def _cov_rows(label, X, mean, Q):
    rows = []
    d = X.shape[1]
    D = X - mean
    for i in range(d):
        for j in range(i, d):
            g = D[:, i] * D[:, j]
            est = float(g.mean())
            se = float(g.std(ddof=1) / math.sqrt(len(g)))
            target = float(Q[i]) if i == j else 0.0
            rows.append((label, i, j, est, target, se, _z(est, target, se)))
    return rows


def _ou_check(ctx: _Ctx) -> bool:
    cfg = ctx.cfg
    basis, spec, x = build_spec(cfg)
    F = cfg["experiment"]["F"]
    tol = cfg["tolerances"]
    ref = ou_reference(spec, F, cfg["time"]["horizon"], x)
    draws = ou_exact_sample(ref, stream(cfg.seed, 0, "ou-exact"), cfg["experiment"]["n_exact"])
    rows = _cov_rows("exact", draws, ref.mean, ref.Q)
    ok = all(abs(r[-1]) <= tol["z_max_exact"] for r in rows)
    res = _ensemble(ctx, spec.with_variant(Linear()), x)
    sim = _cov_rows("linear_sde", res.projected(F), ref.mean, ref.Q)
    ok &= all(abs(r[-1]) <= tol["z_max"] for r in sim)
    write_csv(ctx.out / "ou_covariance.csv",
              ["source[-]", "i[-]", "j[-]", "estimate[H^2]", "target[H^2]", "std_error[H^2]", "z_score[-]"],
              rows + sim)
    worst = max(abs(r[-1]) for r in rows)
    worst_sim = max(abs(r[-1]) for r in sim)
    ctx.say(f"exact draws: max |z| = {worst:.3f} (limit {tol['z_max_exact']:g})")
    ctx.say(f"linear SDE endpoint: max |z| = {worst_sim:.3f} (limit {tol['z_max']:g})")
    return ok


def _girsanov(ctx: _Ctx) -> bool:
    cfg = ctx.cfg
    basis, spec, x = build_spec(cfg)
    F = cfg["experiment"]["F"]
    tol = cfg["tolerances"]
    t = cfg["time"]["horizon"]
    res = _ensemble(ctx, spec, x, girsanov=True)
    ref = ou_reference(spec, F, t, x)
    crit = float(stats.kstwobign.isf(tol["ks_level"]))
    X = res.projected(F)
    rep = reweighted_equivalence_test(X, res.weights(), ref, z_max=tol["z_max"],
                                      ess_floor=tol["ess_floor"], ks_critical=crit)
    base = reweighted_equivalence_test(X, np.ones(len(X)), ref, z_max=tol["z_max"],
                                       ess_floor=tol["ess_floor"], ks_critical=crit)
    cols = ["statistic[-]", "estimate[-]", "std_error[-]", "z_score[-]"]
    write_csv(ctx.out / "girsanov_report.csv", cols, [tuple(r.values()) for r in rep.table()])
    write_csv(ctx.out / "unweighted_report.csv", cols, [tuple(r.values()) for r in base.table()])
    _atomic_write(ctx.out / "summary.txt", (rep.summary() + "\n").encode())
    ctx.say(rep.summary())
    ctx.say(f"unweighted baseline: {base.summary()}")
    return rep.passed


def _malliavin(ctx: _Ctx) -> bool:
    cfg = ctx.cfg
    ex, tol = cfg["experiment"], cfg["tolerances"]
    basis, spec, x = build_spec(cfg)
    grad = coordinate_functional(ex["F"]) if ex["functional"] == "coordinates" else squared_norm_functional()
    res = _ensemble(ctx, spec, x, keep_path=True, snapshot_times=[cfg["time"]["horizon"]])
    dt, t = cfg["time"]["dt"], cfg["time"]["horizon"]
    mats = []
    for start in range(0, res.n_traj, 50):
        mats.append(assemble_matrices(spec, res.path[start:start + 50], dt, t, grad, None, ex["stride"]))
    mats = np.concatenate(mats)
    rep = nondegeneracy_report(mats, thresholds=(tol["eig_relative"], 1e-8, 1e-4))
    eig = np.linalg.eigvalsh(mats)
    write_csv(ctx.out / "malliavin_eigenvalues.csv",
              ["path[-]"] + [f"eig_{i + 1}[H^2*time]" for i in range(eig.shape[1])],
              [(j, *row) for j, row in enumerate(eig)])
    other = 2 * ex["stride"] if ex["stride"] == 1 else max(1, ex["stride"] // 2)
    alt = assemble_matrices(spec, res.path[:1], dt, t, grad, None, other)[0]
    drift = float(np.linalg.norm(alt - mats[0]) / np.linalg.norm(mats[0]))
    text = rep.to_text() + f"stride {ex['stride']} vs {other}: relative change {drift:.3e} on path 0\n"
    _atomic_write(ctx.out / "malliavin_report.txt", text.encode())
    ctx.say(text.rstrip())
    return rep.fraction_below[tol["eig_relative"]] == 0.0


def _samples(ctx: _Ctx, spec, x) -> np.ndarray:
    cfg = ctx.cfg
    ex = cfg["experiment"]
    F = ex["F"]
    if ex["sampler"] == "gaussian":
        ref = ou_reference(spec, F, math.inf if ex["stationary"] else cfg["time"]["horizon"], x)
        return ou_exact_sample(ref, stream(cfg.seed, 0, "gaussian-sampler"), cfg["ensemble"]["n_traj"])
    if ex["sampler"] == "point_mass":
        p = np.zeros(len(F)) if ex["point"] is None else np.asarray(ex["point"], dtype=float)
        if p.shape != (len(F),):
            raise ValueError("experiment.point must have one entry per index in experiment.F")
        return np.tile(p, (cfg["ensemble"]["n_traj"], 1))
    return _ensemble(ctx, spec, x, snapshot_times=[cfg["time"]["horizon"]]).projected(F)


def _besov_weak(ctx: _Ctx) -> bool | None:
    cfg = ctx.cfg
    ex, tol = cfg["experiment"], cfg["tolerances"]
    basis, spec, x = build_spec(cfg)
    X = _samples(ctx, spec, x)
    H = default_h_sweep(ex["h_scales"], ex["h_largest"])
    fam = sinusoid_family(X.shape[1], ex["holder_alpha"], default_omegas(H, ex["frequencies"]))
    rep = weak_exponent_experiment(X, fam, ex["difference_order"], ex["holder_alpha"], H,
                                   stationary=ex["stationary"], tolerance=tol["slope_tolerance"],
                                   noise_floor=tol["noise_floor"])
    write_csv(ctx.out / "weak_differences.csv", ["phi_id[-]", "h[length]", "estimate[-]", "std_error[-]"],
              rep.table)
    write_csv(ctx.out / "weak_envelope.csv", ["h[length]", "envelope[-]", "used[-]"],
              list(zip(H, rep.envelope, rep.envelope_used)))
    fit = rep.weak_exponent_fit
    write_csv(ctx.out / "weak_fit.csv",
              ["slope[-]", "intercept[-]", "residual[-]", "slope_std_error[-]", "alpha_n[-]"],
              [(*(fit if fit else (math.nan,) * 4), rep.alpha_n_predicted)])
    ctx.say(rep.summary())
    return rep.passed


def _besov_density(ctx: _Ctx) -> bool:
    cfg = ctx.cfg
    ex, tol = cfg["experiment"], cfg["tolerances"]
    basis, spec, x = build_spec(cfg)
    X = _samples(ctx, spec, x)
    d = X.shape[1]
    box = default_box(X, ex["box_width"])
    r = ex["resolution"]
    half = len(X) // 2
    a = estimate_density(X[:half], box, r)
    b = estimate_density(X[half:2 * half], box, r)
    l1 = l1_distance(a, b)
    coarse = estimate_density(X, box, r)
    fine = estimate_density(X, box, 2 * r)
    lp = lp_membership_report([coarse, fine], d, tolerance=tol["lp_tolerance"])
    atoms = estimate_density(X, box, ex["atom_resolution"])
    s_targets = ex["s_targets"] or [0.25, 0.5, 0.75]
    semi = [(s, besov_seminorm_estimate(coarse, s, ex["difference_order"])) for s in s_targets]
    write_csv(ctx.out / "density_summary.csv", ["quantity[-]", "resolution[cells/axis]", "value[-]"], [
        ("l1_half_distance", r, l1),
        ("out_of_box_mass", r, coarse.out_of_box),
        ("max_cell_mass", ex["atom_resolution"], atoms.max_cell_mass),
    ])
    write_csv(ctx.out / "lp_norms.csv", ["resolution[cells/axis]", "p[-]", "norm[-]"],
              [(row["resolution"][0], row["p"], row["norm"]) for row in lp.rows()])
    write_csv(ctx.out / "besov_seminorm.csv", ["s[-]", "seminorm[-]"], semi)
    _atomic_write(ctx.out / "density.dens", density_bytes(coarse))
    ok_l1 = l1 < tol["l1_max"]
    ok_lp = bool(np.all(lp.stable))
    ok_atom = not atoms.has_atom(tol["atom_mass"])
    ctx.say(f"L1 distance between half ensembles at {r}/axis: {l1:.4f} (limit {tol['l1_max']:g})")
    for p, ch in zip(lp.exponents, lp.relative_change[0]):
        ctx.say(f"L^{p:g} norm change {r}->{2 * r}/axis: {ch:.4f} (limit {tol['lp_tolerance']:g})")
    ctx.say(f"largest cell mass at {ex['atom_resolution']}/axis: {atoms.max_cell_mass:.5f} "
            f"(limit {tol['atom_mass']:g})")
    return ok_l1 and ok_lp and ok_atom


def _splitting_rate(ctx: _Ctx) -> bool:
    cfg = ctx.cfg
    ex, tol, tm = cfg["experiment"], cfg["tolerances"], cfg["time"]
    basis, spec, x = build_spec(cfg)
    mode = ex["split_mode"]
    burn = tm["burn_in"] if mode == "stationary_compensated" else 0.0
    eps, D = run_split_differences(None if burn else x, spec.with_variant(Galerkin()), ex["F"], ex["eps_list"],
                                   tm["dt"], cfg["ensemble"]["n_traj"], cfg.seed, mode=mode,
                                   t_end=tm["horizon"], burn_in=burn, workers=ctx.workers,
                                   chunk_size=cfg["ensemble"]["chunk_size"])
    mean = D.mean(axis=0)
    se = D.std(axis=0, ddof=1) / math.sqrt(len(D))
    slope, intercept = np.polyfit(np.log(eps), np.log(mean), 1)
    write_csv(ctx.out / "splitting_rate.csv", ["eps[time]", "error[H]", "std_error[H]"],
              list(zip(eps, mean, se)))
    need = tol["slope_min_stationary"] if mode == "stationary_compensated" else tol["slope_min"]
    write_csv(ctx.out / "splitting_fit.csv", ["mode[-]", "slope[-]", "intercept[-]", "threshold[-]"],
              [(mode, float(slope), float(intercept), need)])
    ctx.say(f"{mode}: fitted slope {slope:.4f} (threshold {need:g})")
    return bool(slope >= need)


KIND_RUNNERS = {
    "simulate": _simulate,
    "energy-check": _energy_check,
    "ou-check": _ou_check,
    "girsanov": _girsanov,
    "malliavin": _malliavin,
    "besov-weak": _besov_weak,
    "besov-density": _besov_density,
    "splitting-rate": _splitting_rate,
}


def run_experiment(cfg: ExperimentConfig, out_dir=None, *, workers: int | None = None,
                   command: list[str] | None = None) -> RunOutcome:
    """Run ``cfg`` and write its artifacts; the status is 0 pass, 2 statistical failure, 1 error."""
    out = Path(out_dir if out_dir is not None else cfg["experiment"]["output"])
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "config.toml", serialize(cfg).encode())
    ctx = _Ctx(cfg, out, workers)
    start = time.perf_counter()
    error = None
    try:
        passed = KIND_RUNNERS[cfg.kind](ctx)
        if passed is None:
            status, verdict = EXIT_PASS, "NO-TEST" if cfg.kind == "simulate" else "INCONCLUSIVE"
        else:
            status, verdict = (EXIT_PASS, "PASS") if passed else (EXIT_STAT_FAIL, "FAIL")
    except Exception as exc:  # reported through the exit status and the manifest
        status, verdict = EXIT_ERROR, "ERROR"
        error = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        ctx.say(f"error: {error}")
    cmd = command or ["snslab", cfg.kind, "--config", str(out / "config.toml"), "--seed", str(cfg.seed),
                      "--out", str(out)]
    extra = {"kind": cfg.kind, "verdict": verdict}
    if error:
        extra["error"] = error
    write_manifest(out, config_hash=cfg.hash(), version=__version__, wall_clock=time.perf_counter() - start,
                   failures=ctx.failures, command=cmd, status=verdict, complete=error is None, extra=extra)
    return RunOutcome(status, verdict, out, ctx.lines, ctx.failures)
