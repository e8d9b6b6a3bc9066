"""Run configuration: a single JSON document with a published schema.

Sections: array, grid, data, model, train, eval. A user config may give any
subset of keys; missing leaves take the desk-scale defaults below. Unknown
sections or keys are rejected. Dotted-path overrides (``data.seed=3``)
patch individual leaves; values parse as JSON, falling back to plain
strings.

Exclusive pairs: array.m | array.positions, data.k | data.k_set,
data.snr_db | data.snr_set. Supplying one side (in a config file or an
override) drops the other.

All config angles are degrees; everything serialized in radians carries a
``_rad`` suffix instead.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .arraymodel import AngleGrid, ArrayGeometry, WaveConfig, ula_half_wavelength
from .errors import ConfigError
from .model import ModelConfig
from .rng import derive_seed
from .scenario import SimConfig

DEFAULT_CONFIG: dict = {
    "array": {"m": 8, "f": 1000.0, "c": 340.0},
    "grid": {"delta_deg": 1.0},
    "data": {
        "k_set": [1, 2],
        "t": 50,
        "snr_db": 10.0,
        "coherent": False,
        "rho_err": 0.0,
        "on_grid": True,
        "samples": {"train": 2000, "val": 500, "test": 500},
        "seed": 7,
    },
    "model": {"e": 32, "t_train": 50, "seed": 0},
    "train": {"batch": 16, "lr": 0.009, "epochs": 30, "patience": 20},
    "eval": {"methods": ["beamformnet", "cbf", "mvdr", "music"], "threshold": 0.5},
}

_EXCLUSIVE = {
    "array": [("m", "positions")],
    "data": [("k", "k_set"), ("snr_db", "snr_set")],
}

KNOWN_METHODS = ("beamformnet", "cbf", "mvdr", "music")

SPLIT_INDEX = {"train": 0, "val": 1, "test": 2}


def _merge_section(base: dict, over: dict, section: str) -> dict:
    out = dict(base)
    for pair in _EXCLUSIVE.get(section, []):
        if any(k in over for k in pair):
            for k in pair:
                out.pop(k, None)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = {**out[key], **value}
        else:
            out[key] = value
    return out


def merge_config(user: dict) -> dict:
    """Overlay a (possibly partial) user config onto the defaults."""
    if not isinstance(user, dict):
        raise ConfigError("config document must be a JSON object")
    merged = copy.deepcopy(DEFAULT_CONFIG)
    for section, content in user.items():
        if section not in merged:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(content, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        merged[section] = _merge_section(merged[section], content, section)
    return merged


def apply_overrides(config: dict, assignments: list[str]) -> dict:
    """Apply ``section.key=value`` (or ``section.key.subkey=value``) patches."""
    out = copy.deepcopy(config)
    for text in assignments:
        if "=" not in text:
            raise ConfigError(f"override {text!r} is not of the form path=value")
        path, raw = text.split("=", 1)
        keys = path.split(".")
        if len(keys) < 2 or not all(keys):
            raise ConfigError(f"override path {path!r} must be section.key[.subkey]")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        section = keys[0]
        if section not in out:
            raise ConfigError(f"unknown config section {section!r}")
        for pair in _EXCLUSIVE.get(section, []):
            if keys[1] in pair:
                for k in pair:
                    out[section].pop(k, None)
        node = out[section]
        for key in keys[1:-1]:
            nxt = node.get(key)
            if not isinstance(nxt, dict):
                raise ConfigError(f"override path {path!r} does not name a leaf")
            node = nxt
        node[keys[-1]] = value
    return out


def _want(value, types, what: str):
    if types is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{what} must be true or false, got {value!r}")
        return value
    if types is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{what} must be an integer, got {value!r}")
        return value
    if types is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{what} must be a number, got {value!r}")
        return float(value)
    raise AssertionError(types)


def _check_keys(section: dict, allowed: set, name: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in section {name!r}")


@dataclass(frozen=True)
class TrainSection:
    batch: int
    lr: float
    epochs: int
    patience: int


@dataclass(frozen=True)
class EvalSection:
    methods: tuple[str, ...]
    threshold: float


class RunConfig:
    """A validated configuration; builders construct the domain objects."""

    def __init__(self, raw: dict):
        self.raw = raw
        self._validate()

    # -- validation ---------------------------------------------------------

    def _validate(self) -> None:
        _check_keys(self.raw, set(DEFAULT_CONFIG), "config")
        arr = self.raw["array"]
        _check_keys(arr, {"m", "positions", "f", "c"}, "array")
        if ("m" in arr) == ("positions" in arr):
            raise ConfigError("array needs exactly one of 'm' or 'positions'")
        if "m" in arr:
            _want(arr["m"], int, "array.m")
        else:
            pos = arr["positions"]
            if (
                not isinstance(pos, list)
                or not pos
                or any(
                    not isinstance(p, list)
                    or len(p) != 3
                    or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in p)
                    for p in pos
                )
            ):
                raise ConfigError("array.positions must be a list of [x, y, z] numbers")
        if _want(arr.get("f", 1000.0), float, "array.f") <= 0:
            raise ConfigError("array.f must be positive")
        if _want(arr.get("c", 340.0), float, "array.c") <= 0:
            raise ConfigError("array.c must be positive")

        _check_keys(self.raw["grid"], {"delta_deg"}, "grid")
        _want(self.raw["grid"]["delta_deg"], float, "grid.delta_deg")

        data = self.raw["data"]
        _check_keys(
            data,
            {
                "k",
                "k_set",
                "t",
                "snr_db",
                "snr_set",
                "coherent",
                "rho_err",
                "on_grid",
                "samples",
                "seed",
                "delta_theta_deg",
            },
            "data",
        )
        if ("k" in data) == ("k_set" in data):
            raise ConfigError("data needs exactly one of 'k' or 'k_set'")
        if "k" in data:
            if _want(data["k"], int, "data.k") < 1:
                raise ConfigError("data.k must be at least 1")
        elif not isinstance(data["k_set"], list) or not data["k_set"]:
            raise ConfigError("data.k_set must be a non-empty list of integers")
        else:
            for v in data["k_set"]:
                if _want(v, int, "data.k_set entries") < 1:
                    raise ConfigError("data.k_set entries must be at least 1")
        if ("snr_db" in data) == ("snr_set" in data):
            raise ConfigError("data needs exactly one of 'snr_db' or 'snr_set'")
        if "snr_db" in data:
            _want(data["snr_db"], float, "data.snr_db")
        elif not isinstance(data["snr_set"], list) or not data["snr_set"]:
            raise ConfigError("data.snr_set must be a non-empty list of numbers")
        else:
            for v in data["snr_set"]:
                _want(v, float, "data.snr_set entries")
        if _want(data["t"], int, "data.t") < 1:
            raise ConfigError("data.t must be at least 1")
        _want(data["coherent"], bool, "data.coherent")
        if _want(data["rho_err"], float, "data.rho_err") < 0:
            raise ConfigError("data.rho_err must be nonnegative")
        _want(data["on_grid"], bool, "data.on_grid")
        if "delta_theta_deg" in data and _want(
            data["delta_theta_deg"], float, "data.delta_theta_deg"
        ) <= 0:
            raise ConfigError("data.delta_theta_deg must be positive")
        samples = data["samples"]
        if not isinstance(samples, dict):
            raise ConfigError("data.samples must be an object")
        _check_keys(samples, set(SPLIT_INDEX), "data.samples")
        for split in SPLIT_INDEX:
            if _want(samples.get(split, 0), int, f"data.samples.{split}") < 0:
                raise ConfigError(f"data.samples.{split} must be nonnegative")
        if _want(data["seed"], int, "data.seed") < 0:
            raise ConfigError("data.seed must be nonnegative")

        mdl = self.raw["model"]
        _check_keys(
            mdl,
            {"e", "t_train", "enc_hidden", "align_hidden", "filt_hidden", "proj_hidden", "seed"},
            "model",
        )
        _want(mdl["e"], int, "model.e")
        _want(mdl["t_train"], int, "model.t_train")
        _want(mdl.get("seed", 0), int, "model.seed")
        for key in ("enc_hidden", "align_hidden", "filt_hidden", "proj_hidden"):
            if key in mdl and mdl[key] is not None:
                _want(mdl[key], int, f"model.{key}")

        tr = self.raw["train"]
        _check_keys(tr, {"batch", "lr", "epochs", "patience"}, "train")
        if _want(tr["batch"], int, "train.batch") < 1:
            raise ConfigError("train.batch must be >= 1")
        if _want(tr["lr"], float, "train.lr") <= 0:
            raise ConfigError("train.lr must be positive")
        if _want(tr["epochs"], int, "train.epochs") < 1:
            raise ConfigError("train.epochs must be >= 1")
        if _want(tr["patience"], int, "train.patience") < 0:
            raise ConfigError("train.patience must be >= 0")

        ev = self.raw["eval"]
        _check_keys(ev, {"methods", "threshold"}, "eval")
        methods = ev["methods"]
        if not isinstance(methods, list) or not methods:
            raise ConfigError("eval.methods must be a non-empty list")
        for m in methods:
            if m not in KNOWN_METHODS:
                raise ConfigError(
                    f"unknown eval method {m!r} (known: {', '.join(KNOWN_METHODS)})"
                )
        thr = _want(ev["threshold"], float, "eval.threshold")
        if not 0.0 <= thr < 1.0:
            raise ConfigError("eval.threshold must lie in [0, 1)")

    # -- builders -----------------------------------------------------------

    def wave(self) -> WaveConfig:
        arr = self.raw["array"]
        return WaveConfig(f_hz=float(arr.get("f", 1000.0)), c_mps=float(arr.get("c", 340.0)))

    def geometry(self) -> ArrayGeometry:
        arr = self.raw["array"]
        if "m" in arr:
            return ula_half_wavelength(arr["m"], self.wave())
        return ArrayGeometry.from_positions(np.array(arr["positions"], dtype=np.float64))

    def grid(self) -> AngleGrid:
        return AngleGrid(float(self.raw["grid"]["delta_deg"]))

    def sim_config(self) -> SimConfig:
        data = self.raw["data"]
        k_choices = (data["k"],) if "k" in data else tuple(data["k_set"])
        snr_choices = (
            (float(data["snr_db"]),)
            if "snr_db" in data
            else tuple(float(v) for v in data["snr_set"])
        )
        delta = data.get("delta_theta_deg")
        return SimConfig(
            geom=self.geometry(),
            wave=self.wave(),
            grid=self.grid(),
            t=data["t"],
            k_choices=k_choices,
            snr_choices=snr_choices,
            coherent=data["coherent"],
            rho_err=float(data["rho_err"]),
            on_grid=data["on_grid"],
            delta_theta_rad=math.radians(delta) if delta is not None else None,
        )

    def model_config(self) -> ModelConfig:
        mdl = self.raw["model"]
        return ModelConfig(
            m=self.geometry().m,
            r=self.grid().r,
            t_train=mdl["t_train"],
            e=mdl["e"],
            enc_hidden=mdl.get("enc_hidden"),
            align_hidden=mdl.get("align_hidden"),
            filt_hidden=mdl.get("filt_hidden"),
            proj_hidden=mdl.get("proj_hidden"),
            seed=mdl.get("seed", 0),
        )

    def train_section(self) -> TrainSection:
        tr = self.raw["train"]
        return TrainSection(
            batch=tr["batch"], lr=float(tr["lr"]), epochs=tr["epochs"], patience=tr["patience"]
        )

    def eval_section(self) -> EvalSection:
        ev = self.raw["eval"]
        return EvalSection(methods=tuple(ev["methods"]), threshold=float(ev["threshold"]))

    @property
    def data_seed(self) -> int:
        return self.raw["data"]["seed"]

    def sample_count(self, split: str) -> int:
        return self.raw["data"]["samples"].get(split, 0)

    def split_seed(self, split: str) -> int:
        """Deterministic per-split dataset seed: train/val/test are indices
        0/1/2 under the config's data seed."""
        if split not in SPLIT_INDEX:
            raise ConfigError(f"unknown split {split!r} (train, val, or test)")
        return derive_seed(self.data_seed, SPLIT_INDEX[split])


def load_config(path: Optional[str], overrides: Optional[list[str]] = None) -> RunConfig:
    """Read a config file (or take the in-repo desk defaults), apply dotted
    overrides, validate."""
    if path is None:
        merged = copy.deepcopy(DEFAULT_CONFIG)
    else:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        merged = merge_config(user)
    if overrides:
        merged = apply_overrides(merged, overrides)
    return RunConfig(merged)
