"""Training loop, metrics and multi-seed aggregation."""
from __future__ import annotations

import io
import json
import logging
import math
import os
import time
import zipfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diff
from .data import DataConfig, DataError, Dataset, load_dataset
from .models import ConfigError, Forecaster, ModelConfig, build_model, count_parameters, select_target

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MAPE_EPS = 1e-8
LAST_EPOCHS = 10
WORKERS_ENV = "QFORECAST_WORKERS"
METRICS = ("mape", "mae", "rmse")


class RunFailure(RuntimeError):
    pass


@dataclass
class ExperimentSpec:
    name: str
    model: ModelConfig
    data: DataConfig
    epochs: int = 50
    batch_size: int = 128
    lr: float = 5e-4
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    regime: str = "ST"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_batch: int = 1024

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.regime not in ("ST", "LT"):
            raise ConfigError(f"regime must be ST or LT, got {self.regime!r}")
        if self.regime == "ST" and self.data.S != 1:
            raise ConfigError("ST regime requires S = 1")
        if self.regime == "LT" and self.data.S <= 1:
            raise ConfigError("LT regime requires S > 1")
        if self.model.S != self.data.S or self.model.T != self.data.T:
            raise ConfigError("model and data disagree on T / S")
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise ConfigError("need epochs >= 0, batch_size >= 1, lr > 0")
        if not self.seeds:
            raise ConfigError("need at least one seed")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["data"] = self.data.to_dict()
        return d


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    mape: float
    mae: float
    rmse: float
    seconds: float = field(default=0.0, compare=False)


@dataclass
class RunRecord:
    seed: int
    n_params: int
    initial: dict
    epochs: list[EpochStats] = field(default_factory=list)
    failed: bool = False
    error: str | None = None

    def final(self) -> dict[str, float]:
        """Mean of each metric over the last ``LAST_EPOCHS`` epochs."""
        if len(self.epochs) < LAST_EPOCHS:
            raise ValueError(f"need >= {LAST_EPOCHS} epochs to aggregate, have {len(self.epochs)}")
        tail = self.epochs[-LAST_EPOCHS:]
        return {m: float(np.mean([getattr(e, m) for e in tail])) for m in METRICS}

    def to_dict(self, with_timing: bool = True) -> dict:
        d = asdict(self)
        if not with_timing:
            for e in d["epochs"]:
                e.pop("seconds")
        return d


def mse_loss(pred, target) -> diff.Tensor:
    return diff.mse(diff.as_tensor(pred), target)


def metrics(pred: np.ndarray, target: np.ndarray) -> tuple[float, float, float]:
    """(MAPE as a fraction, MAE, RMSE) over all elements."""
    pred, target = np.asarray(pred, float), np.asarray(target, float)
    if pred.shape != target.shape:
        raise diff.ShapeError(f"metrics shapes {pred.shape} vs {target.shape}")
    err = np.abs(pred - target)
    mape = float(np.mean(err / (np.abs(target) + MAPE_EPS)))
    return mape, float(err.mean()), float(np.sqrt(np.mean(err ** 2)))


def predict(model: Forecaster, X: np.ndarray, batch: int = 1024) -> np.ndarray:
    tc = model.config.target_channel
    outs = []
    with diff.no_grad():
        for i in range(0, len(X), batch):
            outs.append(select_target(model(X[i:i + batch]), tc).data)
    return np.concatenate(outs) if outs else np.zeros((0, model.config.S, model.config.out_channels))


def evaluate(model: Forecaster, X: np.ndarray, Y: np.ndarray, batch: int = 1024) -> dict[str, float]:
    calls = diff.BACKWARD_CALLS
    pred = predict(model, X, batch)
    assert diff.BACKWARD_CALLS == calls, "backward ran during evaluation"
    mape, mae, rmse = metrics(pred, Y)
    return {"val_loss": float(np.mean((pred - Y) ** 2)), "mape": mape, "mae": mae, "rmse": rmse}


def model_config_for(spec: ExperimentSpec, dataset: Dataset) -> ModelConfig:
    cfg = ModelConfig.from_dict({**spec.model.to_dict(), "C": len(dataset.channel_names),
                                 "target_channel": dataset.target_channel})
    return cfg


def train_run(spec: ExperimentSpec, seed: int, dataset: Dataset | None = None,
              return_model: bool = False, model: Forecaster | None = None):
    """Train one seed.  Deterministic for a fixed (spec, seed).

    ``model`` overrides the one built from ``spec.model`` (used for
    oracle checks of the loop itself).
    """
    if dataset is None:
        dataset = load_dataset(spec.data)
    if model is None:
        model = build_model(model_config_for(spec, dataset), seed)
    cfg = model.config
    opt = diff.Adam(model.parameters(), lr=spec.lr, betas=(spec.beta1, spec.beta2), eps=spec.adam_eps)
    shuffle_rng = np.random.default_rng([seed, 1])
    Xtr, Ytr = dataset.train
    Xva, Yva = dataset.val
    record = RunRecord(seed, count_parameters(model), evaluate(model, Xva, Yva, spec.eval_batch))

    for epoch in range(1, spec.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(Xtr))
        total = 0.0
        for i in range(0, len(order), spec.batch_size):
            idx = order[i:i + spec.batch_size]
            opt.zero_grad()
            pred = select_target(model(Xtr[idx]), cfg.target_channel)
            loss = mse_loss(pred, Ytr[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                record.failed = True
                record.error = f"non-finite loss at epoch {epoch}"
                log.warning("seed %d: %s", seed, record.error)
                return (record, model) if return_model else record
            loss.backward()
            opt.step()
            total += value * len(idx)
        ev = evaluate(model, Xva, Yva, spec.eval_batch)
        record.epochs.append(EpochStats(epoch, total / len(order), ev["val_loss"], ev["mape"],
                                        ev["mae"], ev["rmse"], time.perf_counter() - t0))
        log.debug("seed %d epoch %d train %.3g val rmse %.4g", seed, epoch, total / len(order), ev["rmse"])
    return (record, model) if return_model else record


def _worker(args):
    spec, seed, dataset = args
    return train_run(spec, seed, dataset, return_model=True)


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_seeds(spec: ExperimentSpec, dataset: Dataset | None = None, workers: int | None = None):
    """Train every seed; returns [(RunRecord, model)] in seed order."""
    if dataset is None:
        dataset = load_dataset(spec.data)
    workers = workers or n_workers()
    jobs = [(spec, s, dataset) for s in spec.seeds]
    if workers == 1 or len(jobs) == 1:
        return [_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_worker, jobs))


def aggregate(records: list[RunRecord]) -> dict:
    """Last-10-epoch mean per seed, then mean and (population) sd over seeds."""
    if not records:
        raise ValueError("no records to aggregate")
    ok = [r for r in records if not r.failed]
    out = {"n_seeds": len(records), "n_failed": len(records) - len(ok)}
    if not ok:
        out.update({m: {"mean": None, "sd": None} for m in METRICS})
        return out
    finals = [r.final() for r in ok]
    for m in METRICS:
        vals = np.array([f[m] for f in finals])
        out[m] = {"mean": float(vals.mean()), "sd": float(vals.std()), "per_seed": vals.tolist()}
    best = min(range(len(ok)), key=lambda i: finals[i]["rmse"])
    out["best_seed"] = ok[best].seed
    return out


def summarize(spec: ExperimentSpec, records: list[RunRecord], breakdown: dict[str, int]) -> dict:
    from .models import DISPLAY_NAMES

    agg = aggregate(records)
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": spec.name,
        "model": spec.model.kind,
        "display_name": DISPLAY_NAMES[spec.model.kind],
        "regime": spec.regime,
        "dataset": spec.data.source,
        "T": spec.data.T,
        "S": spec.data.S,
        "n_params": int(sum(breakdown.values())),
        "param_breakdown": breakdown,
        "epochs": spec.epochs,
        "batch_size": spec.batch_size,
        "optimizer": {"name": "adam", "lr": spec.lr, "beta1": spec.beta1, "beta2": spec.beta2,
                      "eps": spec.adam_eps},
        "seeds": list(spec.seeds),
        **agg,
    }


# ---------------------------------------------------------------------------
# checkpoints: .npz with one array per parameter plus a JSON header

HEADER_KEY = "__config__"
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_checkpoint(path, params: dict[str, np.ndarray], header: dict):
    """Write an ``np.load``-compatible archive with fixed zip timestamps."""
    arrays = {**params, HEADER_KEY: np.array(json.dumps(header, sort_keys=True))}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH), buf.getvalue())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if HEADER_KEY not in arrays:
        raise DataError(f"{path} has no {HEADER_KEY} header")
    header = json.loads(str(arrays.pop(HEADER_KEY)))
    return header, arrays
