"""Experiment configuration: TOML text with sections, validated against a fixed schema."""
from __future__ import annotations

import copy
import hashlib
import re
from dataclasses import dataclass

import tomli
import tomli_w

KINDS = ("simulate", "energy-check", "girsanov", "malliavin", "besov-weak", "besov-density",
         "ou-check", "splitting-rate")

_REQUIRED = object()

# section -> key -> (types, default)
SCHEMA = {
    "basis": {
        "cutoff": ((int,), _REQUIRED),
        "n_modes": ((int,), None),
    },
    "dynamics": {
        "viscosity": ((int, float), 1.0),
        "variant": ((str,), "galerkin"),
        "R": ((int, float), None),
        "initial": ((str,), "zero"),
        "initial_scale": ((int, float), 0.5),
        "initial_seed": ((int,), 0),
    },
    "noise": {
        "family": ((str,), "power_law"),
        "alpha": ((int, float), 3.0),
        "variances": ((list,), None),
    },
    "time": {
        "horizon": ((int, float), 1.0),
        "dt": ((int, float), 1e-3),
        "snapshots": ((list,), None),
        "burn_in": ((int, float), 0.0),
    },
    "ensemble": {
        "n_traj": ((int,), 1000),
        "seed": ((int,), 0),
        "chunk_size": ((int,), 256),
    },
    "tolerances": {
        "z_max": ((int, float), 3.0),
        "z_max_exact": ((int, float), 4.0),
        "ks_level": ((int, float), 0.01),
        "ess_floor": ((int, float), 100.0),
        "slope_tolerance": ((int, float), 0.2),
        "slope_min": ((int, float), 0.9),
        "slope_min_stationary": ((int, float), 1.2),
        "eig_relative": ((int, float), 1e-12),
        "l1_max": ((int, float), 0.1),
        "lp_tolerance": ((int, float), 0.15),
        "atom_mass": ((int, float), 0.01),
        "noise_floor": ((int, float), 3.0),
    },
    "experiment": {
        "kind": ((str,), _REQUIRED),
        "output": ((str,), "snslab-out"),
        "F": ((list,), None),
        "eps": ((int, float), None),
        "eps_list": ((list,), None),
        "split_mode": ((str,), "plain"),
        "stationary": ((bool,), False),
        "n_exact": ((int,), 100000),
        "functional": ((str,), "coordinates"),
        "stride": ((int,), 1),
        "sampler": ((str,), "galerkin"),
        "holder_alpha": ((int, float), 0.5),
        "difference_order": ((int,), 2),
        "h_scales": ((int,), 5),
        "h_largest": ((int, float), 0.25),
        "frequencies": ((int,), 24),
        "resolution": ((int,), 16),
        "atom_resolution": ((int,), 64),
        "box_width": ((int, float), 4.0),
        "s_targets": ((list,), None),
        "point": ((list,), None),
    },
}

_CHOICES = {
    ("dynamics", "variant"): ("galerkin", "truncated", "linear", "split"),
    ("dynamics", "initial"): ("zero", "random"),
    ("noise", "family"): ("power_law", "explicit_list"),
    ("experiment", "kind"): KINDS,
    ("experiment", "split_mode"): ("plain", "stationary_compensated"),
    ("experiment", "functional"): ("coordinates", "squared_norm"),
    ("experiment", "sampler"): ("galerkin", "gaussian", "point_mass"),
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line, self.column = line, column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)


@dataclass
class ExperimentConfig:
    """Fully resolved configuration; ``sections[s][k]`` holds every schema key."""

    sections: dict

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self.sections == other.sections

    @property
    def kind(self) -> str:
        return self.sections["experiment"]["kind"]

    @property
    def seed(self) -> int:
        return self.sections["ensemble"]["seed"]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        s = copy.deepcopy(self.sections)
        s["ensemble"]["seed"] = int(seed)
        return ExperimentConfig(s)

    def with_values(self, **updates) -> "ExperimentConfig":
        """``with_values(time__dt=0.01)`` style overrides, re-validated."""
        s = copy.deepcopy(self.sections)
        for key, v in updates.items():
            sec, name = key.split("__", 1)
            s[sec][name] = v
        text = serialize(ExperimentConfig(s))
        return parse_config(text)

    def hash(self) -> str:
        """Digest of everything that determines numeric output (the output path excluded)."""
        s = copy.deepcopy(self.sections)
        s["experiment"].pop("output", None)
        return hashlib.sha256(serialize(ExperimentConfig(s)).encode()).hexdigest()


def _locate(text: str, section: str, key: str | None = None) -> tuple[int | None, int | None]:
    current = None
    header = re.compile(r"^\s*\[\s*([A-Za-z0-9_.-]+)\s*\]")
    for lineno, line in enumerate(text.splitlines(), 1):
        m = header.match(line)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return lineno, m.start(1) + 1
            continue
        if key is not None and current == section:
            m = re.match(r"^(\s*)(\"?)" + re.escape(key) + r"\2\s*=", line)
            if m:
                return lineno, len(m.group(1)) + 1
    return None, None


def _error(text, msg, section, key=None):
    line, col = _locate(text, section, key)
    return ConfigError(msg, line, col)


def _check_type(text, section, key, value, types):
    if bool in types:
        ok = isinstance(value, bool)
    else:
        ok = isinstance(value, types) and not isinstance(value, bool)
    if not ok:
        names = " or ".join(t.__name__ for t in types)
        raise _error(text, f"{section}.{key} must be {names}, got {type(value).__name__}", section, key)


def _n_modes(cutoff: int) -> int:
    count = 0
    r = int(cutoff**0.5) + 1
    for a in range(-r, r + 1):
        for b in range(-r, r + 1):
            for c in range(-r, r + 1):
                if 0 < a * a + b * b + c * c <= cutoff:
                    count += 1
    return 2 * count  # two polarisations, cos/sin pair per +-k


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+), column (\d+)", str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        msg = re.sub(r"\s*\(at line \d+, column \d+\)", "", str(exc))
        raise ConfigError(f"syntax error: {msg}", line, col) from None
    for section, body in raw.items():
        if section not in SCHEMA:
            raise _error(text, f"unknown section [{section}]", section)
        if not isinstance(body, dict):
            raise _error(text, f"{section} must be a table", section, section)
        for key in body:
            if key not in SCHEMA[section]:
                raise _error(text, f"unknown key {section}.{key}", section, key)
    out = {}
    for section, keys in SCHEMA.items():
        body = raw.get(section, {})
        res = {}
        for key, (types, default) in keys.items():
            if key in body:
                _check_type(text, section, key, body[key], types)
                v = body[key]
                if float in types and isinstance(v, int):
                    v = float(v)
                res[key] = v
            elif default is _REQUIRED:
                raise _error(text, f"missing required key {section}.{key}", section)
            else:
                res[key] = default
            choices = _CHOICES.get((section, key))
            if choices and res[key] is not None and res[key] not in choices:
                raise _error(text, f"{section}.{key} = {res[key]!r} is not one of {', '.join(choices)}",
                             section, key)
        out[section] = res
    cfg = ExperimentConfig(out)
    _validate(cfg, text)
    return cfg


def _validate(cfg: ExperimentConfig, text: str) -> None:
    def fail(msg, section, key):
        raise _error(text, msg, section, key)

    b, dyn, noise, tm, ens, tol, ex = (cfg[s] for s in
                                       ("basis", "dynamics", "noise", "time", "ensemble", "tolerances", "experiment"))
    if b["cutoff"] < 1:
        fail("basis.cutoff must be at least 1", "basis", "cutoff")
    M = _n_modes(b["cutoff"])
    if b["n_modes"] is not None:
        if not 1 <= b["n_modes"] <= M:
            fail(f"basis.n_modes must lie in 1..{M} for cutoff {b['cutoff']}", "basis", "n_modes")
        M = b["n_modes"]
    if dyn["viscosity"] <= 0:
        fail("dynamics.viscosity must be positive", "dynamics", "viscosity")
    if dyn["variant"] == "truncated" and (dyn["R"] is None or dyn["R"] <= 0):
        fail("dynamics.variant = 'truncated' needs a positive dynamics.R", "dynamics", "R")
    if noise["family"] == "explicit_list":
        v = noise["variances"]
        if v is None or len(v) != M:
            fail(f"noise.variances must list {M} values for noise.family = 'explicit_list'", "noise", "variances")
        if any(not isinstance(x, (int, float)) or isinstance(x, bool) or x < 0 for x in v):
            fail("noise.variances must be nonnegative numbers", "noise", "variances")
    elif noise["variances"] is not None:
        fail("noise.variances is only used with noise.family = 'explicit_list'", "noise", "variances")
    if tm["horizon"] <= 0:
        fail("time.horizon must be positive", "time", "horizon")
    if tm["dt"] <= 0:
        fail("time.dt must be positive", "time", "dt")
    if tm["dt"] > tm["horizon"]:
        fail("time.dt exceeds time.horizon", "time", "dt")
    n = tm["horizon"] / tm["dt"]
    if abs(n - round(n)) > 1e-9 * n:
        fail("time.horizon is not a whole number of time.dt steps", "time", "dt")
    if tm["burn_in"] < 0:
        fail("time.burn_in must be nonnegative", "time", "burn_in")
    if tm["snapshots"] is not None:
        if any(not isinstance(t, (int, float)) or t < 0 or t > tm["horizon"] for t in tm["snapshots"]):
            fail("time.snapshots must lie in [0, time.horizon]", "time", "snapshots")
    if ens["n_traj"] < 1:
        fail("ensemble.n_traj must be positive", "ensemble", "n_traj")
    if ens["seed"] < 0:
        fail("ensemble.seed must be nonnegative", "ensemble", "seed")
    if ens["chunk_size"] < 1:
        fail("ensemble.chunk_size must be positive", "ensemble", "chunk_size")
    for key, v in tol.items():
        if v <= 0:
            fail(f"tolerances.{key} must be positive", "tolerances", key)
    F = ex["F"]
    if F is not None:
        if not F or any(not isinstance(i, int) or isinstance(i, bool) for i in F):
            fail("experiment.F must be a nonempty list of mode indices", "experiment", "F")
        if min(F) < 0 or max(F) >= M or len(set(F)) != len(F):
            fail(f"experiment.F must hold distinct indices in 0..{M - 1}", "experiment", "F")
    for key in ("eps",):
        if ex[key] is not None and not 0 < ex[key] < tm["horizon"]:
            fail(f"experiment.eps = {ex[key]:g} must lie in (0, time.horizon = {tm['horizon']:g})",
                 "experiment", "eps")
    if ex["eps_list"] is not None:
        if not ex["eps_list"] or any(not isinstance(e, (int, float)) or not 0 < e < tm["horizon"]
                                     for e in ex["eps_list"]):
            fail(f"experiment.eps_list entries must lie in (0, time.horizon = {tm['horizon']:g})",
                 "experiment", "eps_list")
    for key in ("stride", "h_scales", "frequencies", "resolution", "atom_resolution", "n_exact",
                "difference_order"):
        if ex[key] < 1:
            fail(f"experiment.{key} must be positive", "experiment", key)
    if not 0 < ex["holder_alpha"] <= 1:
        fail("experiment.holder_alpha must lie in (0, 1]", "experiment", "holder_alpha")
    if not 0 < ex["h_largest"] <= 1:
        fail("experiment.h_largest must lie in (0, 1]", "experiment", "h_largest")
    if ex["s_targets"] is not None and any(s >= ex["difference_order"] for s in ex["s_targets"]):
        fail("experiment.s_targets must stay below experiment.difference_order", "experiment", "s_targets")
    if dyn["variant"] == "split" and (F is None or ex["eps"] is None):
        fail("dynamics.variant = 'split' needs experiment.F and experiment.eps", "dynamics", "variant")
    needs_F = ("girsanov", "besov-weak", "besov-density", "ou-check", "splitting-rate")
    if cfg.kind in needs_F and F is None:
        fail(f"experiment.kind = '{cfg.kind}' needs experiment.F", "experiment", "kind")
    if cfg.kind == "malliavin" and dyn["variant"] != "truncated":
        fail("experiment.kind = 'malliavin' needs dynamics.variant = 'truncated'", "dynamics", "variant")
    if cfg.kind == "malliavin" and ex["functional"] == "coordinates" and F is None:
        fail("experiment.functional = 'coordinates' needs experiment.F", "experiment", "functional")
    if cfg.kind == "splitting-rate" and ex["eps_list"] is None:
        fail("experiment.kind = 'splitting-rate' needs experiment.eps_list", "experiment", "kind")
    if ex["split_mode"] == "stationary_compensated" and tm["burn_in"] <= 0 and cfg.kind == "splitting-rate":
        fail("experiment.split_mode = 'stationary_compensated' needs time.burn_in > 0", "time", "burn_in")
    if ex["stationary"] and tm["burn_in"] <= 0:
        fail("experiment.stationary = true needs time.burn_in > 0", "time", "burn_in")


def _drop_none(d):
    return {k: v for k, v in d.items() if v is not None}


def serialize(cfg: ExperimentConfig) -> str:
    """TOML text of the resolved config; unset optional keys are omitted."""
    return tomli_w.dumps({s: _drop_none(body) for s, body in cfg.sections.items()})


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
