"""Experiment config files: strict YAML schema, resolution and manifests.

A config has four sections plus a name::

    name: lorenz_st_iqtransformer
    output_dir: runs/lorenz_st_iqtransformer   # optional
    dataset:  {source: lorenz, T: 5, S: 1}
    model:    {kind: iqtransformer, n_qubits: 3, D: 9}
    training: {epochs: 50, batch_size: 128, lr: 0.0005, seeds: [0, 1, 2]}

Unknown keys at any level are rejected.  ``T``, ``S``, ``C`` and the target
channel index are owned by the dataset section and filled into the model
config during resolution.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from . import __version__
from .data import ITER_CHANNELS, LORENZ_CHANNELS, OPERATING_STATE, TIMESTAMP_NAMES, DataConfig, DataError
from .models import ConfigError, ModelConfig
from .train import LAST_EPOCHS, ExperimentSpec

MANIFEST_VERSION = 1
TOP_KEYS = {"name", "output_dir", "dataset", "model", "training"}
REQUIRED = ("name", "dataset", "model", "training")
DATA_OWNED = ("T", "S", "C", "target_channel")
TRAINING_KEYS = ("epochs", "batch_size", "lr", "seeds", "regime", "beta1", "beta2", "adam_eps", "eval_batch")


@dataclass
class ExperimentConfig:
    spec: ExperimentSpec
    output_dir: Path
    resolved: dict


def _section(doc: dict, key: str) -> dict:
    val = doc.get(key)
    if not isinstance(val, dict):
        raise ConfigError(f"section {key!r} must be a mapping, got {type(val).__name__}")
    return dict(val)


def _coerce_floats(d: dict, cls, where: str) -> dict:
    """YAML 1.1 reads ``1e-5`` as a string; accept it for float fields."""
    out = dict(d)
    for f in fields(cls):
        v = out.get(f.name)
        if isinstance(v, str) and "float" in str(f.type):
            try:
                out[f.name] = float(v)
            except ValueError as exc:
                raise ConfigError(f"{where}.{f.name} must be a number, got {v!r}") from exc
    return out


def _reject_unknown(d: dict, allowed, where: str):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}; allowed: {sorted(allowed)}")


def channel_names_for(cfg: DataConfig) -> list[str]:
    """Channel names a data config will produce, without loading the data."""
    if cfg.source == "lorenz":
        return list(LORENZ_CHANNELS)
    if cfg.schema:
        return list(cfg.schema)
    if cfg.source == "surrogate":
        return list(ITER_CHANNELS)
    try:
        with open(cfg.path, newline="") as fh:
            header = next(csv.reader(fh))
    except (OSError, StopIteration) as exc:
        raise DataError(f"cannot read header of {cfg.path}: {exc}") from exc
    return [h.strip() for h in header
            if h.strip().lower() not in TIMESTAMP_NAMES and h.strip() != OPERATING_STATE]


def parse_seeds(text: str) -> list[int]:
    """``"0-9"``, ``"0,3,5"`` or a mix like ``"0-2,7"``."""
    seeds = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            elif part:
                seeds.append(int(part))
    except ValueError as exc:
        raise ConfigError(f"cannot parse seeds {text!r}") from exc
    if not seeds:
        raise ConfigError(f"no seeds in {text!r}")
    return seeds


def resolve(doc: dict, seeds: list[int] | None = None, output_dir: str | None = None) -> ExperimentConfig:
    """Validate a raw config mapping and build the experiment spec."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping at the top level")
    if "manifest_version" in doc:
        doc = doc.get("config")
        if not isinstance(doc, dict):
            raise ConfigError("manifest has no 'config' mapping")
    _reject_unknown(doc, TOP_KEYS, "config")
    for key in REQUIRED:
        if key not in doc:
            raise ConfigError(f"missing required field {key!r}")
    name = doc["name"]
    if not isinstance(name, str) or not name:
        raise ConfigError("'name' must be a non-empty string")

    data_d = _section(doc, "dataset")
    _reject_unknown(data_d, [f.name for f in fields(DataConfig)], "dataset")
    try:
        data = DataConfig.from_dict(_coerce_floats(data_d, DataConfig, "dataset"))
        channels = channel_names_for(data)
    except (DataError, TypeError) as exc:
        raise ConfigError(f"dataset: {exc}") from exc

    model_d = _section(doc, "model")
    allowed = [f.name for f in fields(ModelConfig) if f.name not in DATA_OWNED]
    _reject_unknown(model_d, allowed, "model")
    if "kind" not in model_d:
        raise ConfigError("missing required field 'model.kind'")
    if data.target is not None and data.target not in channels:
        raise ConfigError(f"dataset.target {data.target!r} is not one of {channels}")
    target_idx = channels.index(data.target) if data.target is not None else None
    try:
        model = ModelConfig(**_coerce_floats(model_d, ModelConfig, "model"), T=data.T, S=data.S,
                            C=len(channels), target_channel=target_idx)
    except TypeError as exc:
        raise ConfigError(f"model: {exc}") from exc

    train_d = _section(doc, "training")
    _reject_unknown(train_d, TRAINING_KEYS, "training")
    if seeds is not None:
        train_d["seeds"] = list(seeds)
    train_d.setdefault("regime", "ST" if data.S == 1 else "LT")
    if "seeds" in train_d:
        s = train_d["seeds"]
        if not isinstance(s, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in s):
            raise ConfigError("training.seeds must be a list of integers")
    for key in ("lr", "beta1", "beta2", "adam_eps"):
        if key in train_d:
            try:
                train_d[key] = float(train_d[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"training.{key} must be a number") from exc
    spec = ExperimentSpec(name=name, model=model, data=data, **train_d)
    if spec.epochs < LAST_EPOCHS:
        raise ConfigError(f"training.epochs must be >= {LAST_EPOCHS}: summaries average the last {LAST_EPOCHS}")

    out = Path(output_dir or doc.get("output_dir") or Path("runs") / name)
    resolved = {
        "name": name,
        "output_dir": str(out),
        "dataset": data.to_dict(),
        "model": {k: v for k, v in model.to_dict().items() if k not in DATA_OWNED},
        "training": {k: getattr(spec, k) for k in TRAINING_KEYS},
    }
    return ExperimentConfig(spec, out, resolved)


def load_config(path: str | Path, seeds: list[int] | None = None,
                output_dir: str | None = None) -> ExperimentConfig:
    """Load a YAML config or a JSON manifest written by an earlier run."""
    try:
        with open(path) as fh:
            doc = json.load(fh) if str(path).endswith(".json") else yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return resolve(doc, seeds, output_dir)


def build_id() -> str:
    """Package version plus a digest of the package sources."""
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"qforecast-{__version__}+{h.hexdigest()[:12]}"


def manifest(cfg: ExperimentConfig) -> dict:
    return {
        "manifest_version": MANIFEST_VERSION,
        "build": build_id(),
        "seeds": list(cfg.spec.seeds),
        "config": cfg.resolved,
    }


def dump_json(obj, path: str | Path):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def run_is_current(cfg: ExperimentConfig) -> bool:
    """True if ``cfg.output_dir`` holds a finished run of exactly this config
    produced by the current build."""
    out = cfg.output_dir
    try:
        old = json.loads((out / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError):
        return False
    return old == manifest(cfg) and (out / "summary.json").is_file()
