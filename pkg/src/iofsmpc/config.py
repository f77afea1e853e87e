"""TOML experiment configuration: parsing, validation, presets and the resolved-config hash.

Layout::

    [system]       A, B, C, Sigma_wx, Sigma_wy, mu_x0, Sigma_x0 (row-major nested lists)
    [weights]      Q, R, and P (a matrix, or "dare" for the regulator Riccati solution)
    [[constraints]] kind = "state" | "input", h, p, optional normalize = "lqr_stationary"
    [experiment]   horizon, sim_steps, num_trajectories, master_seed, controllers,
                   terminal_mode, measure_at_t0, aggressive_Q, aggressive_R

``normalize = "lqr_stationary"`` divides h by the stationary standard
deviation of h'e for the LQR tube gain and the steady-state Kalman filter, so
the constraint is met with probability p by the unconstrained LQG loop.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

import tomli_w

from .errors import ConfigError, IofSmpcError
from .model import (CostWeights, ExperimentConfig, HalfspaceChanceConstraint,
                    LinearGaussianSystem)

PRESETS = ("paper-zero-mean", "paper-nonzero-mean")
SYSTEM_KEYS = ("A", "B", "C", "Sigma_wx", "Sigma_wy", "mu_x0", "Sigma_x0")
EXPERIMENT_DEFAULTS = {
    "horizon": 20,
    "sim_steps": 100,
    "num_trajectories": 1000,
    "master_seed": 0,
    "controllers": ["lqg", "iof"],
    "terminal_mode": "none",
    "measure_at_t0": False,
}
NORMALIZATIONS = ("lqr_stationary",)


@dataclass(frozen=True)
class RunConfig:
    system: LinearGaussianSystem
    weights: CostWeights
    constraints: tuple
    experiment: ExperimentConfig
    resolved: dict
    source: str = "<string>"


def _fail(source, field, msg):
    raise ConfigError(f"{source}: field '{field}': {msg}")


def _matrix(source, field, value, ndim=2):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        _fail(source, field, "expected a numeric array")
    if ndim == 2 and arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(1, -1) if field.endswith(("C", ".h")) else arr.reshape(-1, 1)
    if arr.ndim != ndim:
        _fail(source, field, f"expected a {ndim}-d array, got {arr.ndim}-d")
    if not np.all(np.isfinite(arr)):
        _fail(source, field, "entries must be finite")
    return arr


def _tolist(a):
    return np.asarray(a, dtype=float).tolist()


def _weight_tuple(value):
    if value is None:
        return None
    arr = np.asarray(value, dtype=float)
    return tuple(arr.tolist()) if arr.ndim == 1 else tuple(map(tuple, arr.tolist()))


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return from_dict(raw, source)


def from_dict(raw: dict, source: str = "<dict>") -> RunConfig:
    """Validate a parsed TOML document and build the model objects."""
    from . import synthesis, uncertainty

    raw = copy.deepcopy(raw)
    known = {"system", "weights", "constraints", "experiment"}
    for key in raw:
        if key not in known:
            _fail(source, key, f"unknown section (expected one of {sorted(known)})")
    sysd = raw.get("system")
    if not isinstance(sysd, dict):
        _fail(source, "system", "missing [system] table")
    for key in sysd:
        if key not in SYSTEM_KEYS:
            _fail(source, f"system.{key}", "unknown key")
    for key in SYSTEM_KEYS:
        if key not in sysd:
            _fail(source, f"system.{key}", "missing")
    mats = {}
    for key in SYSTEM_KEYS:
        mats[key] = _matrix(source, f"system.{key}", sysd[key], ndim=1 if key == "mu_x0" else 2)
    try:
        system = LinearGaussianSystem(**mats)
    except (IofSmpcError, ValueError) as exc:
        raise ConfigError(f"{source}: section 'system': {exc}") from None

    wd = raw.get("weights")
    if not isinstance(wd, dict):
        _fail(source, "weights", "missing [weights] table")
    for key in wd:
        if key not in ("Q", "R", "P"):
            _fail(source, f"weights.{key}", "unknown key")
    Q = _matrix(source, "weights.Q", wd.get("Q", np.eye(system.nx).tolist()))
    R = _matrix(source, "weights.R", wd.get("R", np.eye(system.nu).tolist()))
    P_spec = wd.get("P", "dare")
    if isinstance(P_spec, str):
        if P_spec != "dare":
            _fail(source, "weights.P", "must be a matrix or \"dare\"")
        P = synthesis.solve_dare(system.A, system.B, Q, R)
    else:
        P = _matrix(source, "weights.P", P_spec)
    try:
        weights = CostWeights(Q=Q, R=R, P=P)
    except (IofSmpcError, ValueError) as exc:
        raise ConfigError(f"{source}: section 'weights': {exc}") from None
    raw["weights"] = {"Q": _tolist(Q), "R": _tolist(R), "P": P_spec if isinstance(P_spec, str) else _tolist(P)}

    cons_raw = raw.get("constraints", [])
    if not isinstance(cons_raw, list):
        _fail(source, "constraints", "expected an array of tables [[constraints]]")
    constraints = []
    resolved_cons = []
    stationary = None
    for i, cd in enumerate(cons_raw):
        f = f"constraints[{i}]"
        for key in cd:
            if key not in ("kind", "h", "p", "normalize"):
                _fail(source, f"{f}.{key}", "unknown key")
        kind = cd.get("kind", "state")
        if kind not in ("state", "input"):
            _fail(source, f"{f}.kind", "must be 'state' or 'input'")
        if "h" not in cd or "p" not in cd:
            _fail(source, f, "needs h and p")
        h = _matrix(source, f"{f}.h", cd["h"], ndim=1)
        norm = cd.get("normalize")
        if norm is not None:
            if norm not in NORMALIZATIONS:
                _fail(source, f"{f}.normalize", f"must be one of {NORMALIZATIONS}")
            if kind != "state":
                _fail(source, f"{f}.normalize", "only state constraints can be normalized")
            if stationary is None:
                K = synthesis.lqr_gain(system.A, system.B, weights.P, weights.R)
                L, _ = synthesis.kalman_design(system.A, system.C, system.Sigma_wx, system.Sigma_wy)
                model = uncertainty.build_combined_error_model(system, K, L)
                stationary = synthesis.solve_dlyap(model.A_tilde, model.W)[:system.nx, :system.nx]
            h_eff = h / np.sqrt(float(h @ stationary @ h))
        else:
            h_eff = h
        try:
            constraints.append(HalfspaceChanceConstraint(h=h_eff, p=float(cd["p"]), kind=kind))
        except (IofSmpcError, ValueError, TypeError) as exc:
            raise ConfigError(f"{source}: {f}: {exc}") from None
        entry = {"kind": kind, "h": _tolist(h), "p": float(cd["p"])}
        if norm is not None:
            entry["normalize"] = norm
        resolved_cons.append(entry)
    raw["constraints"] = resolved_cons
    for c in constraints:
        dim = system.nx if c.kind == "state" else system.nu
        if c.h.size != dim:
            raise ConfigError(f"{source}: constraint h has length {c.h.size}, expected {dim}")

    ed = dict(EXPERIMENT_DEFAULTS)
    ed.update(raw.get("experiment", {}))
    allowed = set(EXPERIMENT_DEFAULTS) | {"aggressive_Q", "aggressive_R"}
    for key in ed:
        if key not in allowed:
            _fail(source, f"experiment.{key}", "unknown key")
    try:
        experiment = ExperimentConfig(
            horizon=ed["horizon"], sim_steps=ed["sim_steps"], num_trajectories=ed["num_trajectories"],
            master_seed=ed["master_seed"], controllers=tuple(ed["controllers"]),
            terminal_mode=ed["terminal_mode"], measure_at_t0=bool(ed["measure_at_t0"]),
            aggressive_Q=_weight_tuple(ed.get("aggressive_Q")),
            aggressive_R=_weight_tuple(ed.get("aggressive_R")),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: section 'experiment': {exc}") from None
    if any(c.endswith("aggressive") for c in experiment.controllers) and experiment.aggressive_Q is None:
        _fail(source, "experiment.aggressive_Q", "required by the aggressive controllers")
    ed["controllers"] = list(experiment.controllers)
    raw["experiment"] = ed
    raw["system"] = {k: (_tolist(mats[k])) for k in SYSTEM_KEYS}
    return RunConfig(system, weights, tuple(constraints), experiment, raw, source)


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("iofsmpc").joinpath("presets", f"{name}.toml").read_text()


def load_preset(name: str) -> RunConfig:
    return parse_config(preset_text(name), f"preset:{name}")


def with_overrides(cfg: RunConfig, **experiment) -> RunConfig:
    """Return the config with [experiment] keys replaced (None values are ignored)."""
    raw = copy.deepcopy(cfg.resolved)
    for key, val in experiment.items():
        if val is not None:
            raw["experiment"][key] = list(val) if isinstance(val, tuple) else val
    return from_dict(raw, cfg.source)


def resolved_toml(cfg: RunConfig) -> str:
    doc = copy.deepcopy(cfg.resolved)
    doc["experiment"] = {k: v for k, v in doc["experiment"].items() if v is not None}
    return tomli_w.dumps(doc)


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 of the canonical JSON form of the resolved configuration."""
    doc = json.dumps(cfg.resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(doc.encode()).hexdigest()
