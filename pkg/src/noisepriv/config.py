"""Experiment configuration: flat dotted keys, strict validation, digests.

A config file is YAML. Keys may be written flat (``schedule.rho: 0.5``) or
nested (``schedule: {rho: 0.5}``); both are flattened to dotted keys. Any key
not listed in ``SCHEMA`` is rejected.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Any, Callable

import yaml

from .distributions import Kind


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _as_float(key, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"{key}: must be finite, got {v!r}")
    return float(v)


def _as_int(key, v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{key}: expected an integer, got {v!r}")
    return v


def _listify(key, v, conv):
    items = v if isinstance(v, list) else [v]
    if not items:
        raise ConfigError(f"{key}: must not be empty")
    return [conv(key, x) for x in items]


def _check(pred, msg):
    def conv(key, v):
        if not pred(v):
            raise ConfigError(f"{key}: {msg}, got {v!r}")
        return v
    return conv


def _chain(*fs):
    def conv(key, v):
        for f in fs:
            v = f(key, v)
        return v
    return conv


def _choice(*options):
    def conv(key, v):
        if v not in options:
            raise ConfigError(f"{key}: must be one of {', '.join(options)}, got {v!r}")
        return v
    return conv


def _edges(key, v):
    if not isinstance(v, list) or not all(
            isinstance(e, list) and len(e) == 2 and all(isinstance(x, int) for x in e) for e in v):
        raise ConfigError(f"{key}: expected a list of [a, b] integer pairs")
    return [tuple(e) for e in v]


def _intervals(key, v):
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{key}: expected a non-empty list of [lo, hi] pairs")
    out = []
    for iv in v:
        if not isinstance(iv, list) or len(iv) != 2:
            raise ConfigError(f"{key}: expected [lo, hi] pairs, got {iv!r}")
        lo, hi = (float(x) if isinstance(x, (int, float)) and not isinstance(x, bool)
                  else _inf(key, x) for x in iv)
        if lo > hi:
            raise ConfigError(f"{key}: interval [{lo}, {hi}] has lo > hi")
        out.append((lo, hi))
    return out


def _inf(key, x):
    if x in ("-inf", "inf", "+inf"):
        return float(x)
    raise ConfigError(f"{key}: interval endpoints must be numbers or 'inf', got {x!r}")


def _x0_vector(key, v):
    if v == "random":
        return v
    return _listify(key, v, _as_float)


def _targets(key, v):
    if v == "all":
        return v
    return _listify(key, v, _chain(_as_int, _check(lambda x: x >= 0, "must be >= 0")))


positive = _chain(_as_float, _check(lambda x: x > 0, "must be > 0"))
nonneg = _chain(_as_float, _check(lambda x: x >= 0, "must be >= 0"))
FAMILIES = tuple(k.value for k in Kind)

# key -> (converter, default)
SCHEMA: dict[str, tuple[Callable[[str, Any], Any], Any]] = {
    "seed": (_chain(_as_int, _check(lambda x: x >= 0, "must be >= 0")), 0),
    "graph.kind": (_choice("random", "triangle", "star", "path", "complete", "explicit"), "random"),
    "graph.n": (_chain(_as_int, _check(lambda x: x >= 3, "must be >= 3")), 20),
    "graph.p": (_chain(_as_float, _check(lambda x: 0 <= x <= 1, "must lie in [0, 1]")), 0.2),
    "graph.edges": (_edges, None),
    "graph.hub": (_chain(_as_int, _check(lambda x: x >= 0, "must be >= 0")), 0),
    "weights.recipe": (_choice("metropolis"), "metropolis"),
    "schedule.kind": (_choice("independent", "telescoping"), "telescoping"),
    "schedule.family": (_choice(*FAMILIES), "gaussian"),
    "schedule.sigma0": (nonneg, 1.0),
    "schedule.rho": (_chain(_as_float, _check(lambda x: 0 < x < 1, "must lie in (0, 1)")), 0.5),
    "schedule.K": (_chain(_as_int, _check(lambda x: x >= 1, "must be >= 1")), 10),
    "simulate.T": (_chain(_as_int, _check(lambda x: x >= 0, "must be >= 0")), None),
    "simulate.x0": (_x0_vector, "random"),
    "noise.dist": (lambda k, v: _listify(k, v, _choice(*FAMILIES)), ["gaussian"]),
    "noise.sigma": (positive, None),
    "noise.scale": (positive, None),
    "domain.intervals": (_intervals, None),
    "privacy.eps": (lambda k, v: _listify(k, v, positive), [0.1]),
    "privacy.x0": (lambda k, v: _listify(k, v, _as_float), None),
    "privacy.mc_n": (_chain(_as_int, _check(lambda x: x == 0 or x >= 10_000,
                                            "must be 0 or >= 10000")), 0),
    "privacy.workers": (_chain(_as_int, _check(lambda x: x >= 1, "must be >= 1")), 1),
    "adversary.target": (_targets, [0]),
    "adversary.observer": (_chain(_as_int, _check(lambda x: x >= 0, "must be >= 0")), None),
    "adversary.k": (lambda k, v: _listify(k, v, _chain(_as_int, _check(lambda x: x >= 0,
                                                                        "must be >= 0"))), [0]),
    "adversary.regime": (_choice("independent", "partial", "full"), "independent"),
    "compare.families": (lambda k, v: _listify(k, v, _choice(*FAMILIES)), list(FAMILIES)),
    "compare.sigma": (positive, 1.0),
    "output.path": (_check(lambda x: isinstance(x, str) and x, "must be a path string"), None),
    "output.format": (_choice("csv", "json"), None),
    "output.plot": (_check(lambda x: isinstance(x, bool), "must be true or false"), False),
}


def flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in d.items():
        full = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, full + "."))
        else:
            out[full] = value
    return out


def resolve(raw: dict) -> dict:
    """Validate ``raw`` (flat or nested) and fill defaults."""
    flat = flatten(raw or {})
    unknown = sorted(set(flat) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown configuration key")
    cfg = {}
    for key, (conv, default) in SCHEMA.items():
        cfg[key] = conv(key, flat[key]) if key in flat else default
    if cfg["noise.sigma"] is not None and cfg["noise.scale"] is not None:
        raise ConfigError("noise.scale: give either noise.sigma or noise.scale, not both")
    if cfg["graph.kind"] == "explicit" and cfg["graph.edges"] is None:
        raise ConfigError("graph.edges: required when graph.kind is explicit")
    if cfg["simulate.T"] is not None and cfg["simulate.T"] < cfg["schedule.K"]:
        raise ConfigError(f"simulate.T: must be >= schedule.K={cfg['schedule.K']}, "
                          f"got {cfg['simulate.T']}")
    n = graph_size(cfg)
    if isinstance(cfg["simulate.x0"], list) and len(cfg["simulate.x0"]) != n:
        raise ConfigError(f"simulate.x0: expected {n} values, got {len(cfg['simulate.x0'])}")
    return cfg


def graph_size(cfg: dict) -> int:
    if cfg["graph.kind"] == "triangle":
        return 3
    if cfg["graph.kind"] == "explicit":
        nodes = {v for e in cfg["graph.edges"] for v in e}
        return max(cfg["graph.n"], max(nodes) + 1 if nodes else 0)
    return cfg["graph.n"]


def load(path) -> dict:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw


def digest(command: str, cfg: dict) -> str:
    """SHA-256 over the command and every resolved key."""
    blob = json.dumps({"command": command, "config": cfg}, sort_keys=True, default=list)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
