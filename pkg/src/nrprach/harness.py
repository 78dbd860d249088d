"""Experiment harness: datasets, training, evaluation reports and sweeps.

An :class:`ExperimentSpec` names the training channels, the test channel,
the SNR grid, dataset sizes and seeds.  Running it generates (or reuses)
the record files, trains (or reuses) the RAPID and TA models, decodes the
test set with all four receivers and writes an :class:`EvalReport`.

Generated files are cached under ``out_dir`` by a key derived from exactly
the settings that produced them, so scenarios that share a training set
share the trained models too.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dataset as ds
from .channel import parse_channel
from .corr_rx import CorrelationReceiver
from .nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .nn.train import train
from .receivers import build_model, features, labels, nn_decode_batch, train_config

log = logging.getLogger(__name__)

RECEIVERS = ("corr_rapid", "corr_ta", "nn_rapid", "nn_ta")
DEFAULT_SNRS = (-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
MIXED_CHANNELS = ("tdlc10", "tdlc150", "tdlc300")


class MissingCheckpointError(FileNotFoundError):
    pass


def parse_snr_grid(text: str) -> list[float]:
    """``"-15:20:5"`` (inclusive range), ``"inf"`` or a comma list such as ``"0,10,inf"``."""
    out: list[float] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            bits = part.split(":")
            if len(bits) != 3:
                raise ValueError(f"SNR range must be start:stop:step, got {part!r}")
            start, stop, step = (float(b) for b in bits)
            if step <= 0 or stop < start:
                raise ValueError(f"bad SNR range {part!r}")
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            out.extend(start + i * step for i in range(n))
        else:
            out.append(float(part))
    if not out:
        raise ValueError("empty SNR grid")
    return out


def _digest(obj, n=16) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:n]


def derived_seed(*parts) -> int:
    """Stable 31-bit seed from integers and strings."""
    ints = [int.from_bytes(hashlib.sha256(str(p).encode()).digest()[:4], "little") for p in parts]
    return int(np.random.SeedSequence(ints).generate_state(1, np.uint32)[0] >> 1)


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    train_channels: list = field(default_factory=lambda: ["tdlc300"])
    test_channel: str = "tdlc300"
    snr_grid: list = field(default_factory=lambda: list(DEFAULT_SNRS))
    train_count_per_snr: int = 1000
    test_count_per_snr: int = 500
    data_seed: int = 1
    test_seed: int = 2
    model_seed: int = 0
    models: list = field(default_factory=lambda: ["rapid", "ta"])
    val_fraction: float = 0.3
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    # per-task training overrides, e.g. {"rapid": {"batch_size": 32}}
    task_overrides: dict = field(default_factory=dict)
    out_dir: str = "runs"

    def __post_init__(self):
        if isinstance(self.train_channels, str):
            self.train_channels = [c for c in self.train_channels.split(",") if c]
        if isinstance(self.snr_grid, str):
            self.snr_grid = parse_snr_grid(self.snr_grid)
        if isinstance(self.models, str):
            self.models = [m for m in self.models.split(",") if m]
        self.snr_grid = [float(s) for s in self.snr_grid]
        for c in [*self.train_channels, self.test_channel]:
            parse_channel(c)
        bad = set(self.models) - {"rapid", "ta"}
        if bad:
            raise ValueError(f"unknown models {sorted(bad)}")
        for name in ("train_count_per_snr", "test_count_per_snr", "batch_size", "max_epochs", "patience"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown spec keys {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        return _digest(d)

    def train_settings(self, task: str) -> dict:
        s = {"batch_size": self.batch_size, "max_epochs": self.max_epochs, "patience": self.patience,
             "seed": self.model_seed}
        s.update(self.task_overrides.get(task, {}))
        return s


def load_spec_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        return yaml.safe_load(text) or {}
    return json.loads(text)


# ---------------------------------------------------------------- datasets

def dataset_path(out_dir, channel: str, role: str, snr_grid, count: int, seed: int) -> Path:
    key = _digest({"snr": [float(s) for s in snr_grid], "count": count, "seed": seed,
                   "format": ds.FORMAT_VERSION}, 10)
    return Path(out_dir) / "data" / f"{channel}_{role}_{key}.prch"


def ensure_dataset(out_dir, channel: str, role: str, snr_grid, count: int, seed: int) -> ds.PrachDataset:
    """Load the cached record file for these settings, generating it first if needed."""
    path = dataset_path(out_dir, channel, role, snr_grid, count, seed)
    if path.exists() and ds.manifest_path(path).exists():
        man = json.loads(ds.manifest_path(path).read_text())
        if man.get("sha256") == ds.file_digest(path):
            return ds.load(path)
        log.warning("%s does not match its manifest; regenerating", path)
    log.info("generating %s (%d per SNR, seed %d)", path.name, count, seed)
    data = ds.generate_dataset(ds.DatasetRequest(channel, snr_grid, count, seed))
    ds.save(data, path)
    return ds.load(path)


def data_seed_for(spec: ExperimentSpec, channel: str, role: str) -> int:
    base = spec.data_seed if role == "train" else spec.test_seed
    return derived_seed(base, channel, role)


def training_set(spec: ExperimentSpec) -> ds.PrachDataset:
    parts = [ensure_dataset(spec.out_dir, c, "train", spec.snr_grid, spec.train_count_per_snr,
                            data_seed_for(spec, c, "train")) for c in spec.train_channels]
    return parts[0] if len(parts) == 1 else ds.concat(parts)


def test_set(spec: ExperimentSpec) -> ds.PrachDataset:
    c = spec.test_channel
    return ensure_dataset(spec.out_dir, c, "test", spec.snr_grid, spec.test_count_per_snr,
                          data_seed_for(spec, c, "test"))


# ---------------------------------------------------------------- training

def model_key(spec: ExperimentSpec, task: str) -> str:
    return _digest({"task": task, "train_channels": list(spec.train_channels), "snr": spec.snr_grid,
                    "count": spec.train_count_per_snr, "data_seed": spec.data_seed,
                    "val_fraction": spec.val_fraction, "train": spec.train_settings(task)}, 12)


def model_path(spec: ExperimentSpec, task: str) -> Path:
    tag = "+".join(spec.train_channels)
    return Path(spec.out_dir) / "models" / f"{tag}_{model_key(spec, task)}" / f"{task}.prnn"


def train_task(task: str, data: ds.PrachDataset, settings: dict, val_fraction: float = 0.3,
               out_path=None, on_epoch=None):
    """Train one receiver model on ``data``; returns ``(model, history)``.

    Validation is carved from ``data`` per SNR stratum.  When ``out_path``
    is given the checkpoint and a JSON-lines log are written next to it.
    """
    settings = dict(settings)
    seed = int(settings.get("seed", 0))
    model = build_model(task, seed)
    cfg = train_config(model, **settings)
    tr, va, _ = ds.split(len(data), (1 - val_fraction, val_fraction, 0.0), seed=seed, strata=data.snr_db)
    grids = data.grids
    x_tr, x_va = features(model, grids[tr]), features(model, grids[va])
    y_all = labels(model, data.records)
    log.info("training %s model on %d records (%d validation)", task, len(tr), len(va))
    model, history, opt = train(model, x_tr, y_all[tr], x_va, y_all[va], cfg, on_epoch)
    if out_path is not None:
        out_path = Path(out_path)
        save_checkpoint(out_path, model, cfg.to_dict(), opt.state(),
                        meta={"records": len(data), "train": len(tr), "val": len(va)})
        with open(out_path.with_suffix(".log.jsonl"), "w") as f:
            for rec in history:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
    return model, history


def ensure_models(spec: ExperimentSpec, data: ds.PrachDataset | None = None) -> dict:
    """Trained models for ``spec.models``, loading cached checkpoints when present."""
    models = {}
    for task in spec.models:
        path = model_path(spec, task)
        if path.exists():
            try:
                models[task] = load_checkpoint(path)[0]
                continue
            except CheckpointError as exc:
                log.warning("ignoring unreadable checkpoint %s: %s", path, exc)
        if data is None:
            data = training_set(spec)
        models[task] = train_task(task, data, spec.train_settings(task), spec.val_fraction, path)[0]
    return models


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalReport:
    scenario: str
    train_channels: list
    test_channel: str
    snr_grid: list
    accuracy: dict          # (snr, receiver) -> accuracy
    counts: dict            # snr -> number of test instances
    confusion: dict         # receiver -> square integer matrix, rows true class, columns decoded class
    fingerprint: str
    config: dict = field(default_factory=dict)

    def rows(self):
        for snr in self.snr_grid:
            for rx in RECEIVERS:
                if (snr, rx) in self.accuracy:
                    yield snr, rx, "accuracy", self.accuracy[(snr, rx)]

    def table(self) -> str:
        lines = [f"# scenario={self.scenario} train={'+'.join(self.train_channels)} "
                 f"test={self.test_channel} fingerprint={self.fingerprint}",
                 "snr_db\treceiver\tmetric\tvalue"]
        lines += [f"{_fmt_snr(s)}\t{rx}\t{m}\t{v:.6f}" for s, rx, m, v in self.rows()]
        return "\n".join(lines) + "\n"

    def confusion_text(self) -> str:
        out = [f"# scenario={self.scenario} fingerprint={self.fingerprint}"]
        for rx, mat in self.confusion.items():
            out.append(f"[{rx}] rows=true columns=decoded total={int(mat.sum())}")
            out.extend(" ".join(f"{int(v):d}" for v in row) for row in mat)
        return "\n".join(out) + "\n"

    def mean_accuracy(self, receiver: str) -> float:
        vals = [v for (s, rx), v in self.accuracy.items() if rx == receiver]
        return float(np.mean(vals)) if vals else float("nan")

    def write(self, out_dir) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"table": out_dir / f"{self.scenario}.tsv",
                 "confusion": out_dir / f"{self.scenario}.confusion.txt",
                 "meta": out_dir / f"{self.scenario}.json"}
        paths["table"].write_text(self.table())
        paths["confusion"].write_text(self.confusion_text())
        meta = {"scenario": self.scenario, "train_channels": self.train_channels,
                "test_channel": self.test_channel, "fingerprint": self.fingerprint,
                "counts": {_fmt_snr(s): n for s, n in self.counts.items()}, "config": self.config}
        paths["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return paths


def _fmt_snr(s: float) -> str:
    return "inf" if math.isinf(s) else f"{s:g}"


def confusion_matrix(true, pred, n: int) -> np.ndarray:
    m = np.zeros((n, n), dtype=np.int64)
    np.add.at(m, (np.asarray(true), np.asarray(pred)), 1)
    return m


def evaluate(test: ds.PrachDataset, models: dict, scenario: str = "eval",
             train_channels: Sequence[str] = (), test_channel: str = "", fingerprint: str = "",
             config: dict | None = None) -> EvalReport:
    """Decode ``test`` with the correlation receiver and whichever NN models are given."""
    grids = np.asarray(test.grids)
    rapid, ta, snr = test.rapid, test.ta, test.snr_db
    preds = {}
    preds["corr_rapid"], preds["corr_ta"] = CorrelationReceiver().decode_batch(grids)
    if "rapid" in models and "ta" in models:
        preds["nn_rapid"], preds["nn_ta"] = nn_decode_batch(models["rapid"], models["ta"], grids)
    else:
        for task in ("rapid", "ta"):
            if task in models:
                m = models[task]
                preds[f"nn_{task}"] = m.predict(features(m, grids)).argmax(axis=1)
    grid = sorted({float(s) for s in snr}, key=lambda s: (math.isinf(s), s))
    acc, counts = {}, {}
    for s in grid:
        sel = snr == s
        counts[s] = int(sel.sum())
        for rx, p in preds.items():
            truth = rapid if rx.endswith("rapid") else ta
            acc[(s, rx)] = float(np.mean(p[sel] == truth[sel]))
    conf = {}
    for rx in RECEIVERS:
        if rx in preds:
            if rx.endswith("rapid"):
                conf[rx] = confusion_matrix(rapid, preds[rx], 10)
            else:
                # class 12 holds correlation peaks that fell in the slack region; its row is empty
                conf[rx] = confusion_matrix(ta, preds[rx], ds.N_TA_CLASSES + 1)
    return EvalReport(scenario, list(train_channels), test_channel, grid, acc, counts, conf,
                      fingerprint, config or {})


def run_experiment(spec: ExperimentSpec, write: bool = True) -> EvalReport:
    models = ensure_models(spec)
    missing = {"rapid", "ta"} - set(models)
    if missing:
        # evaluation needs both receivers; fall back to cached checkpoints
        for task in sorted(missing):
            path = model_path(spec, task)
            if not path.exists():
                raise MissingCheckpointError(f"no {task} checkpoint at {path}")
            models[task] = load_checkpoint(path)[0]
    report = evaluate(test_set(spec), models, spec.name, spec.train_channels, spec.test_channel,
                      spec.fingerprint(), {k: v for k, v in spec.to_dict().items() if k != "out_dir"})
    if write:
        report.write(Path(spec.out_dir) / "reports")
    return report


# ---------------------------------------------------------------- sweeps

def sweep_specs(base: ExperimentSpec) -> list[ExperimentSpec]:
    """The four generalization scenarios, sharing every other setting with ``base``."""
    d = base.to_dict()
    out = []
    for name, train_ch, test_ch in [
        ("same-tdlc150", ["tdlc150"], "tdlc150"),
        ("same-tdlc300", ["tdlc300"], "tdlc300"),
        ("mixed-to-tdlc150", list(MIXED_CHANNELS), "tdlc150"),
        ("tdlc300-to-tdlc150", ["tdlc300"], "tdlc150"),
    ]:
        out.append(ExperimentSpec.from_dict({**d, "name": name, "train_channels": train_ch,
                                             "test_channel": test_ch}))
    return out


@dataclass
class SweepResult:
    reports: dict
    failures: dict

    def combined_table(self) -> str:
        lines = ["scenario\tsnr_db\treceiver\tmetric\tvalue"]
        for name, rep in self.reports.items():
            lines += [f"{name}\t{_fmt_snr(s)}\t{rx}\t{m}\t{v:.6f}" for s, rx, m, v in rep.rows()]
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        rows = [(rep.mean_accuracy(rx), name, rx) for name, rep in self.reports.items()
                for rx in RECEIVERS if any(k[1] == rx for k in rep.accuracy)]
        rows.sort(key=lambda r: (-r[0], r[1], r[2]))
        lines = ["scenario\treceiver\tmean_accuracy"]
        lines += [f"{name}\t{rx}\t{acc:.6f}" for acc, name, rx in rows]
        lines += [f"# failed {name}: {err}" for name, err in sorted(self.failures.items())]
        return "\n".join(lines) + "\n"


def run_sweep(base: ExperimentSpec, write: bool = True) -> SweepResult:
    reports, failures = {}, {}
    for spec in sweep_specs(base):
        try:
            reports[spec.name] = run_experiment(spec, write)
        except Exception as exc:  # noqa: BLE001 - one failed scenario must not stop the rest
            log.exception("scenario %s failed", spec.name)
            failures[spec.name] = f"{type(exc).__name__}: {exc}"
    result = SweepResult(reports, failures)
    if write:
        out = Path(base.out_dir) / "reports"
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.tsv").write_text(result.combined_table())
        (out / "summary.tsv").write_text(result.summary())
    return result
