"""Checkpoints (``.lpanet``) and run configuration files.

Checkpoint layout::

    LPANET <version>\\n
    <one-line JSON header: dims, metadata, payload descriptor>\\n
    <payload: n_params little-endian float64 in network buffer order>

The version line is checked before anything else is parsed.

Run configs are flat TOML key/value files; see ``RUN_CONFIG_KEYS``.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import Dims, ResidualNetwork
from .rng import MASK64
from .surfaces import Domain, SurfaceId
from .training import TrainConfig, default_lambdas

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "FORMAT_VERSION",
    "CheckpointError",
    "UnsupportedVersionError",
    "PayloadLengthError",
    "CorruptCheckpointError",
    "save_checkpoint",
    "load_checkpoint",
    "ConfigError",
    "DataSpec",
    "RunConfig",
    "RUN_CONFIG_KEYS",
    "parse_run_config",
    "parse_run_config_text",
]

FORMAT_VERSION = 1
MAGIC = b"LPANET"
_PAYLOAD_DTYPE = "<f8"


class CheckpointError(ValueError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class PayloadLengthError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


def save_checkpoint(net: ResidualNetwork, meta: dict | None, path) -> None:
    path = Path(path)
    header = {
        "dims": net.dims.as_dict(),
        "meta": meta or {},
        "payload": {"dtype": _PAYLOAD_DTYPE, "count": net.dims.n_params},
    }
    blob = b"".join([
        MAGIC + b" " + str(FORMAT_VERSION).encode() + b"\n",
        json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n",
        net.theta.astype(_PAYLOAD_DTYPE).tobytes(),
    ])
    try:
        path.write_bytes(blob)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc.strerror or exc}") from exc


def load_checkpoint(path) -> tuple[ResidualNetwork, dict]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc

    nl = raw.find(b"\n")
    first = raw[:nl] if nl >= 0 else raw
    parts = first.split(b" ")
    if len(parts) != 2 or parts[0] != MAGIC or not parts[1].isdigit():
        raise CheckpointError(f"{path}: not an LPANET checkpoint")
    version = int(parts[1])
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {version} (expected {FORMAT_VERSION})")

    nl2 = raw.find(b"\n", nl + 1)
    if nl2 < 0:
        raise CheckpointError(f"{path}: missing header line")
    try:
        header = json.loads(raw[nl + 1:nl2])
        dims = Dims(**header["dims"])
        count = int(header["payload"]["count"])
        dtype = header["payload"]["dtype"]
        meta = header.get("meta", {})
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed header ({exc})") from None
    if dtype != _PAYLOAD_DTYPE:
        raise CheckpointError(f"{path}: unsupported payload dtype {dtype!r}")
    if count != dims.n_params:
        raise CheckpointError(f"{path}: header declares {count} parameters but dims need {dims.n_params}")

    payload = raw[nl2 + 1:]
    if len(payload) != 8 * count:
        raise PayloadLengthError(f"{path}: payload has {len(payload)} bytes, expected {8 * count}")
    theta = np.frombuffer(payload, dtype=_PAYLOAD_DTYPE).astype(np.float64)
    if not np.all(np.isfinite(theta)):
        raise CorruptCheckpointError(f"{path}: non-finite parameter values")
    return ResidualNetwork(dims, theta), meta


# -- run configuration ---------------------------------------------------------

class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataSpec:
    surface: SurfaceId
    seed: int = 0
    n_train: int = 10_000
    n_test: int = 10_000
    domain: Domain = Domain()


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    dims: Dims
    data: DataSpec


# key -> (expected type, description)
RUN_CONFIG_KEYS = {
    "surface": (str, "surface name, e.g. localized-stripes (required)"),
    "paradigm": (str, "e2e or lpa (required)"),
    "seed": (int, "seed for initialisation and batch order (default 0)"),
    "data_seed": (int, "training-set seed; the test set uses data_seed + 1 (default: seed)"),
    "n_train": (int, "training samples (default 10000)"),
    "n_test": (int, "test samples (default 10000)"),
    "domain": (list, "[xmin, xmax, ymin, ymax] (default [-1, 1, -1, 1])"),
    "n_blocks": (int, "residual blocks N (default 6)"),
    "width": (int, "residual stream width d (default 30)"),
    "hidden": (int, "hidden units per block (default 30)"),
    "lambda": (list, "per-depth loss weights, N entries (default 0.1, ..., 0.1, 1.0)"),
    "lr": (float, "Adam learning rate (default 1e-3)"),
    "adam_beta1": (float, "default 0.9"),
    "adam_beta2": (float, "default 0.999"),
    "adam_eps": (float, "default 1e-8"),
    "epochs": (int, "default 300"),
    "batch_size": (int, "default 128"),
}


def _typed(key, value):
    expected = RUN_CONFIG_KEYS[key][0]
    if expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif expected is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif expected is list:
        ok = isinstance(value, list) and all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        )
        value = [float(v) for v in value] if ok else value
    else:
        ok = isinstance(value, expected)
    if not ok:
        raise ConfigError(f"key {key!r}: expected {expected.__name__}, got {type(value).__name__} {value!r}")
    return value


def parse_run_config_text(text: str, source: str = "<config>") -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for key in raw:
        if key not in RUN_CONFIG_KEYS:
            raise ConfigError(f"{source}: unknown key {key!r}")
    cfg = {k: _typed(k, v) for k, v in raw.items()}
    for key in ("surface", "paradigm"):
        if key not in cfg:
            raise ConfigError(f"{source}: missing required key {key!r}")

    try:
        surface = SurfaceId.parse(cfg["surface"])
        seed = cfg.get("seed", 0)
        data_seed = cfg.get("data_seed", seed)
        for key, v in (("seed", seed), ("data_seed", data_seed)):
            if not 0 <= v <= MASK64:
                raise ConfigError(f"key {key!r}: must be a 64-bit unsigned integer, got {v}")
        dom = cfg.get("domain", [-1.0, 1.0, -1.0, 1.0])
        if len(dom) != 4:
            raise ConfigError(f"key 'domain': expected 4 numbers, got {len(dom)}")
        for key in ("n_train", "n_test"):
            if cfg.get(key, 1) < 1:
                raise ConfigError(f"key {key!r}: must be >= 1")
        dims = Dims(d_in=2, d=cfg.get("width", 30), hidden=cfg.get("hidden", 30), d_y=1,
                    n_blocks=cfg.get("n_blocks", 6))
        lam = cfg.get("lambda")
        if lam is not None and len(lam) != dims.n_blocks:
            raise ConfigError(f"key 'lambda': expected {dims.n_blocks} entries, got {len(lam)}")
        train = TrainConfig(
            paradigm=cfg["paradigm"],
            lambdas=tuple(lam) if lam is not None else default_lambdas(dims.n_blocks),
            lr=cfg.get("lr", 1e-3),
            adam_beta1=cfg.get("adam_beta1", 0.9),
            adam_beta2=cfg.get("adam_beta2", 0.999),
            adam_eps=cfg.get("adam_eps", 1e-8),
            epochs=cfg.get("epochs", 300),
            batch_size=cfg.get("batch_size", 128),
            seed=seed,
        )
        data = DataSpec(surface, data_seed, cfg.get("n_train", 10_000), cfg.get("n_test", 10_000), Domain(*dom))
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if not all(math.isfinite(v) for v in dom):
        raise ConfigError(f"{source}: key 'domain': bounds must be finite")
    return RunConfig(train=train, dims=dims, data=data)


def parse_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_run_config_text(text, source=str(path))
