"""Experiment configuration: YAML loading, schema checks and presets.

A config file is a mapping with the blocks ``contract``, ``market``,
``mortality``, ``numerics``, ``solver``, ``sweep`` and ``output``; every block
is optional and unknown keys are rejected with the offending line number.

Resolution order for numerics is built-in defaults, then the preset, then
keys set explicitly in the file, then command-line seed overrides.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass

import yaml

from .equity import MarketParams
from .exceptions import ConfigError, InputError
from .fairfee import FeeSolveConfig
from .grid import TimeGrid
from .lsmc import DEATH_TIMINGS, ContractSpec
from .mlp import NetConfig
from .mortality import SCHEMES, MortalityParams
from .signature import signature_length

__all__ = [
    "PRESETS",
    "SWEEP_PARAMETERS",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "resolve",
]

# value: (python type(s), default)
SCHEMA = {
    "contract": {
        "T": (float, 20.0),
        "F0": (float, 100.0),
        "G": (float, 100.0),
        "kappa": (float, 0.002),
        "c": (float, 0.01),
        "n_min": (int, 1),
    },
    "market": {
        "S0": (float, 100.0),
        "V0": (float, MarketParams.V0),
        "gamma": (float, 0.1206),
        "theta": (float, 0.0721),
        "nu": (float, 0.2897),
        "rho": (float, -0.7445),
        "hurst": (float, 0.0286),
        "r": (float, 0.04),
    },
    "mortality": {
        "mu_x": (float, 0.018999),
        "lam": (float, 0.047780),
        "sigma": (float, 0.005023),
        "hurst": (float, 0.703932),
        "x": (int, 60),
        "life_table": (str, None),
        "calibrate": (bool, False),
        "calibration_horizon": (int, 40),
        "scheme": (str, "product"),
    },
    "numerics": {
        "paths": (int, 2**13),
        "test_paths": (int, None),
        "steps_per_year": (int, 12),
        "K": (int, 3),
        "xi": (float, 1e-3),
        "seed_train": (int, 11),
        "seed_test": (int, 22),
        "seed_net": (int, 3),
        "variance_scheme": (str, "fast"),
        "death_timing": (str, "end"),
        "batch_size": (int, 4096),
        "learning_rate": (float, 1e-3),
        "max_epochs": (int, 200),
        "patience": (int, 10),
        "validation_fraction": (float, 0.2),
        "dtype": (str, "float32"),
    },
    "solver": {
        "lower": (float, 0.0),
        "upper": (float, 0.03),
        "tol": (float, 1e-4),
        "max_expansions": (int, 3),
        "surrender": (bool, True),
        "no_surrender": (bool, True),
    },
    "sweep": {
        "parameter": (str, None),
        "values": (list, None),
    },
    "output": {
        "dir": (str, "out"),
        "dump_paths": (int, 0),
        "dump_soe": (bool, False),
        "dump_features": (int, 0),
    },
}

TOP_LEVEL = set(SCHEMA) | {"preset"}

PRESETS = {
    "desk": {"paths": 2**13},
    # hours per fee on one core; see README
    "paper": {"paths": 2**17},
}

# sweep name -> (block, key)
SWEEP_PARAMETERS = {
    "H_S": ("market", "hurst"),
    "H_m": ("mortality", "hurst"),
    "V0": ("market", "V0"),
    "nu": ("market", "nu"),
    "rho": ("market", "rho"),
    "theta": ("market", "theta"),
    "gamma": ("market", "gamma"),
    "r": ("market", "r"),
    "lam": ("mortality", "lam"),
    "sigma": ("mortality", "sigma"),
    "kappa": ("contract", "kappa"),
    "G": ("contract", "G"),
    "c": ("contract", "c"),
    "K": ("numerics", "K"),
    "paths": ("numerics", "paths"),
}


def _line(node) -> int:
    return node.start_mark.line + 1


_CONSTRUCTOR = yaml.SafeLoader("")


def _scalar(node, kind, where):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{where} must be a scalar", _line(node))
    value = _CONSTRUCTOR.construct_object(node)
    if value is None:
        return None
    # YAML 1.1 reads "1e-3" as a string; accept unquoted numeric text
    if kind in (float, int) and isinstance(value, str) and node.style is None:
        try:
            value = float(value) if kind is float else int(value)
        except ValueError:
            pass
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {node.value!r}", _line(node))
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {node.value!r}", _line(node))
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false, got {node.value!r}", _line(node))
        return value
    if not isinstance(value, str):
        raise ConfigError(f"{where} must be a string, got {node.value!r}", _line(node))
    return value


def parse_config(text: str, source: str = "<config>"):
    """Parse YAML text into ``(values, lines)``.

    ``values`` holds only the keys present in the file; ``lines`` maps
    ``"block.key"`` to its line number for later error messages.
    """
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"{source}: invalid YAML ({getattr(exc, 'problem', exc)})", mark.line + 1 if mark else None) from None
    values, lines = {}, {}
    if root is None:
        return values, lines
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError("top level must be a mapping", _line(root))
    for knode, vnode in root.value:
        block = knode.value
        if block not in TOP_LEVEL:
            raise ConfigError(f"unknown key {block!r} (allowed: {', '.join(sorted(TOP_LEVEL))})", _line(knode))
        if block in values:
            raise ConfigError(f"duplicate key {block!r}", _line(knode))
        lines[block] = _line(knode)
        if block == "preset":
            values["preset"] = _scalar(vnode, str, "preset")
            continue
        if not isinstance(vnode, yaml.MappingNode):
            raise ConfigError(f"block {block!r} must be a mapping", _line(vnode))
        schema = SCHEMA[block]
        out = {}
        for k, v in vnode.value:
            key = k.value
            where = f"{block}.{key}"
            if key not in schema:
                raise ConfigError(f"unknown key {where!r} (allowed: {', '.join(schema)})", _line(k))
            if key in out:
                raise ConfigError(f"duplicate key {where!r}", _line(k))
            kind = schema[key][0]
            if kind is list:
                if not isinstance(v, yaml.SequenceNode):
                    raise ConfigError(f"{where} must be a list", _line(v))
                out[key] = [_scalar(item, float, f"{where}[{i}]") for i, item in enumerate(v.value)]
            else:
                out[key] = _scalar(v, kind, where)
            lines[where] = _line(k)
        values[block] = out
    return values, lines


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment settings (every key present)."""

    data: dict
    lines: dict
    source: str = ""

    def __getitem__(self, block):
        return self.data[block]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the resolved config."""
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_value(self, block: str, key: str, value) -> "ExperimentConfig":
        data = copy.deepcopy(self.data)
        data[block][key] = value
        return _validated(data, self.lines, self.source)

    # typed views ------------------------------------------------------

    @property
    def market(self) -> MarketParams:
        return MarketParams(**self.data["market"])

    @property
    def mortality(self) -> MortalityParams:
        m = self.data["mortality"]
        return MortalityParams(mu_x=m["mu_x"], lam=m["lam"], sigma=m["sigma"], hurst=m["hurst"], x=float(m["x"]))

    @property
    def contract(self) -> ContractSpec:
        c = self.data["contract"]
        return ContractSpec(
            T=c["T"], x=float(self.data["mortality"]["x"]), F0=c["F0"], G=c["G"], kappa=c["kappa"], c=c["c"],
            n_min=c["n_min"],
        )

    @property
    def grid(self) -> TimeGrid:
        T = self.data["contract"]["T"]
        return TimeGrid(T, int(round(T * self.data["numerics"]["steps_per_year"])))

    @property
    def netcfg(self) -> NetConfig:
        n = self.data["numerics"]
        return NetConfig(
            input_width=signature_length(3, n["K"]) + 1,
            batch_size=n["batch_size"],
            learning_rate=n["learning_rate"],
            max_epochs=n["max_epochs"],
            patience=n["patience"],
            validation_fraction=n["validation_fraction"],
            dtype=n["dtype"],
        )

    @property
    def solver(self) -> FeeSolveConfig:
        s = self.data["solver"]
        return FeeSolveConfig(lower=s["lower"], upper=s["upper"], tol=s["tol"], max_expansions=s["max_expansions"])


def _fail(msg, lines, key):
    raise ConfigError(msg, lines.get(key))


def _validated(data, lines, source) -> ExperimentConfig:
    n = data["numerics"]
    if n["seed_train"] == n["seed_test"]:
        _fail(f"train and test seeds must differ (both {n['seed_train']})", lines, "numerics.seed_test")
    for key in ("paths", "steps_per_year", "K"):
        if n[key] < 1:
            _fail(f"numerics.{key} must be positive", lines, f"numerics.{key}")
    if n["test_paths"] is not None and n["test_paths"] < 1:
        _fail("numerics.test_paths must be positive", lines, "numerics.test_paths")
    if n["variance_scheme"] not in ("fast", "direct"):
        _fail("numerics.variance_scheme must be 'fast' or 'direct'", lines, "numerics.variance_scheme")
    if n["death_timing"] not in DEATH_TIMINGS:
        _fail(f"numerics.death_timing must be one of {DEATH_TIMINGS}", lines, "numerics.death_timing")
    m = data["mortality"]
    if m["scheme"] not in SCHEMES:
        _fail(f"mortality.scheme must be one of {SCHEMES}", lines, "mortality.scheme")
    if m["life_table"] is not None and not os.path.isfile(m["life_table"]):
        _fail(f"life table {m['life_table']!r} not found", lines, "mortality.life_table")
    if m["calibrate"] and m["life_table"] is None:
        _fail("mortality.calibrate needs mortality.life_table", lines, "mortality.calibrate")
    sw = data["sweep"]
    if (sw["parameter"] is None) != (sw["values"] is None):
        _fail("sweep needs both 'parameter' and 'values'", lines, "sweep")
    if sw["parameter"] is not None:
        if sw["parameter"] not in SWEEP_PARAMETERS:
            _fail(
                f"sweep parameter {sw['parameter']!r} not in {sorted(SWEEP_PARAMETERS)}", lines, "sweep.parameter"
            )
        if not sw["values"]:
            _fail("sweep.values must not be empty", lines, "sweep.values")
        block, key = SWEEP_PARAMETERS[sw["parameter"]]
        if SCHEMA[block][key][0] is int:
            if any(v != int(v) for v in sw["values"]):
                _fail(f"sweep over {sw['parameter']} needs integer values", lines, "sweep.values")
            sw["values"] = [int(v) for v in sw["values"]]
    cfg = ExperimentConfig(data, lines, source)
    # the domain objects run their own invariant checks
    for view in ("market", "mortality", "contract", "grid", "netcfg", "solver"):
        try:
            getattr(cfg, view)
        except ConfigError:
            raise
        except InputError as exc:
            raise ConfigError(f"{view}: {exc}", lines.get(view if view in SCHEMA else "numerics")) from None
    return cfg


def resolve(values: dict, lines: dict | None = None, preset: str | None = None, seed_train=None, seed_test=None,
            out_dir=None, source: str = "") -> ExperimentConfig:
    """Merge parsed values with defaults, preset and overrides."""
    lines = dict(lines or {})
    preset = preset or values.get("preset") or "desk"
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r} (choose from {', '.join(PRESETS)})", lines.get("preset"))
    data = {block: {k: d for k, (_, d) in schema.items()} for block, schema in SCHEMA.items()}
    data["numerics"].update(PRESETS[preset])
    for block, entries in values.items():
        if block == "preset":
            continue
        data[block].update(entries)
    if seed_train is not None:
        data["numerics"]["seed_train"] = int(seed_train)
        lines["numerics.seed_train"] = None
    if seed_test is not None:
        data["numerics"]["seed_test"] = int(seed_test)
        lines["numerics.seed_test"] = None
    if out_dir is not None:
        data["output"]["dir"] = str(out_dir)
    data["preset"] = preset
    return _validated(data, lines, source)


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read and resolve a YAML config; ``path=None`` gives the defaults."""
    if path is None:
        return resolve({}, {}, **overrides)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    values, lines = parse_config(text, str(path))
    return resolve(values, lines, source=str(path), **overrides)
