"""Command line entry point: ``nrprach generate|train|evaluate|sweep|inspect``.

Every subcommand exits 0 on success.  Failures print one JSON object on
stderr (``{"error": kind, "message": ...}``) and exit with a code that
identifies the kind of failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import harness as hx
from .channel import parse_channel
from .nn.checkpoint import CheckpointError, load_checkpoint, read_checkpoint

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_DATA = 4
EXIT_TRAIN = 5
EXIT_PARTIAL = 6

log = logging.getLogger("nrprach")


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int):
        super().__init__(message)
        self.kind, self.code = kind, code


def _models_arg(text: str) -> list[str]:
    models = [m.strip() for m in text.split(",") if m.strip()]
    if not models or set(models) - {"rapid", "ta"}:
        raise argparse.ArgumentTypeError("--models takes rapid, ta or rapid,ta")
    return models


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nrprach", description="NR PRACH dataset, receivers and experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a labelled record file")
    g.add_argument("--channel", required=True, help="awgn, tdlcNNN (delay spread in ns)")
    g.add_argument("--snr", default="-15:20:5", help="start:stop:step, a comma list, or inf")
    g.add_argument("--count-per-snr", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, type=Path)

    t = sub.add_parser("train", help="train receiver models on record files")
    t.add_argument("--data", nargs="+", required=True, type=Path)
    t.add_argument("--out", required=True, type=Path, help="directory for checkpoints and logs")
    t.add_argument("--models", type=_models_arg, default=["rapid", "ta"])
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--patience", type=int, default=10)
    t.add_argument("--batch-size", type=int, default=256)
    t.add_argument("--val-fraction", type=float, default=0.3)

    e = sub.add_parser("evaluate", help="score both receivers on a test file")
    e.add_argument("--data", required=True, type=Path)
    e.add_argument("--models", required=True, type=Path, help="directory holding rapid.prnn and ta.prnn")
    e.add_argument("--out", required=True, type=Path)
    e.add_argument("--name", default="eval")
    e.add_argument("--train-channel", default=None, help="label for the training channel(s)")

    s = sub.add_parser("sweep", help="run the four generalization scenarios")
    s.add_argument("--spec", type=Path, help="JSON or YAML experiment spec")
    s.add_argument("--out", type=Path)
    s.add_argument("--snr")
    s.add_argument("--train-count", type=int)
    s.add_argument("--test-count", type=int)
    s.add_argument("--seed", type=int, help="model seed")
    s.add_argument("--data-seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--batch-size", type=int)

    i = sub.add_parser("inspect", help="describe a record file or checkpoint")
    i.add_argument("path", type=Path)
    i.add_argument("--record", type=int, default=None)
    return p


def cmd_generate(a) -> int:
    try:
        parse_channel(a.channel)
        snrs = hx.parse_snr_grid(a.snr)
    except ValueError as exc:
        raise CliError("bad-argument", str(exc), EXIT_USAGE) from exc
    data = ds.generate_dataset(ds.DatasetRequest(a.channel, snrs, a.count_per_snr, a.seed))
    path = ds.save(data, a.out)
    print(json.dumps({"path": str(path), "records": len(data), "sha256": ds.file_digest(path)}))
    return 0


def _load_data(path):
    try:
        return ds.load(path)
    except FileNotFoundError as exc:
        raise CliError("missing-file", str(exc), EXIT_INPUT) from exc
    except (ds.CorruptFileError, ds.VersionMismatchError) as exc:
        raise CliError("bad-data-file", str(exc), EXIT_DATA) from exc


def cmd_train(a) -> int:
    parts = [_load_data(p) for p in a.data]
    data = parts[0] if len(parts) == 1 else ds.concat(parts)
    settings = {"batch_size": a.batch_size, "max_epochs": a.epochs, "patience": a.patience, "seed": a.seed}
    out = {}
    for task in a.models:
        path = a.out / f"{task}.prnn"
        try:
            hx.train_task(task, data, settings, a.val_fraction, path)
        except Exception as exc:
            raise CliError("training-failed", f"{task}: {exc}", EXIT_TRAIN) from exc
        out[task] = str(path)
    print(json.dumps({"checkpoints": out, "records": len(data)}))
    return 0


def cmd_evaluate(a) -> int:
    test = _load_data(a.data)
    models = {}
    for task in ("rapid", "ta"):
        path = a.models / f"{task}.prnn"
        if not path.exists():
            raise CliError("missing-checkpoint", f"no {task} checkpoint at {path}", EXIT_INPUT)
        try:
            models[task] = load_checkpoint(path)[0]
        except CheckpointError as exc:
            raise CliError("bad-checkpoint", str(exc), EXIT_DATA) from exc
    test_ch = ",".join(test.channel_names)
    train_ch = a.train_channel.split(",") if a.train_channel else []
    fp = hx._digest({"data": test.manifest.get("sha256"),
                     "models": [ds.file_digest(a.models / f"{t}.prnn") for t in ("rapid", "ta")]})
    report = hx.evaluate(test, models, a.name, train_ch, test_ch, fp)
    paths = report.write(a.out)
    print(json.dumps({k: str(v) for k, v in paths.items()}))
    return 0


def cmd_sweep(a) -> int:
    d = hx.load_spec_file(a.spec) if a.spec else {}
    overrides = {"out_dir": a.out and str(a.out), "snr_grid": a.snr, "train_count_per_snr": a.train_count,
                 "test_count_per_snr": a.test_count, "model_seed": a.seed, "data_seed": a.data_seed,
                 "max_epochs": a.epochs, "patience": a.patience, "batch_size": a.batch_size}
    d.update({k: v for k, v in overrides.items() if v is not None})
    try:
        spec = hx.ExperimentSpec.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise CliError("bad-spec", str(exc), EXIT_USAGE) from exc
    result = hx.run_sweep(spec)
    sys.stdout.write(result.summary())
    if result.failures:
        raise CliError("partial-failure", json.dumps(result.failures, sort_keys=True), EXIT_PARTIAL)
    return 0


def cmd_inspect(a) -> int:
    path = a.path
    if not path.exists():
        raise CliError("missing-file", f"{path} does not exist", EXIT_INPUT)
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == ds.MAGIC:
        data = _load_data(path)
        info = {"kind": "records", "records": len(data), "manifest": data.manifest}
        if a.record is not None:
            if not 0 <= a.record < len(data):
                raise CliError("bad-argument", f"record {a.record} out of range", EXIT_USAGE)
            r = data.records[a.record]
            info["record"] = {"seed": int(r["seed"]), "rapid": int(r["rapid"]), "ta": int(r["ta"]),
                              "delay": int(r["delay"]), "snr_db": float(r["snr_db"]),
                              "channel": int(r["channel"]),
                              "grid_power": float(np.mean(np.abs(r["grid"]) ** 2))}
    else:
        try:
            header, _ = read_checkpoint(path)
        except CheckpointError as exc:
            raise CliError("unknown-file", f"{path} is neither a record file nor a checkpoint: {exc}",
                           EXIT_DATA) from exc
        info = {"kind": "checkpoint", **{k: header[k] for k in ("model", "train", "meta", "trained")}}
    print(json.dumps(info, indent=2, sort_keys=True, default=str))
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep, "inspect": cmd_inspect}


def _join_negative_values(argv):
    # "--snr -15:20:5" would otherwise be read as an unknown option
    out, it = [], iter(argv)
    for tok in it:
        if tok == "--snr":
            nxt = next(it, None)
            out.append(tok if nxt is None else f"--snr={nxt}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = _join_negative_values(sys.argv[1:] if argv is None else list(argv))
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[a.command](a)
    except CliError as exc:
        sys.stderr.write(json.dumps({"error": exc.kind, "message": str(exc)}) + "\n")
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
