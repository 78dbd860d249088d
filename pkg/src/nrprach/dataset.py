"""Labeled PRACH instances, the binary record file and batch iteration.

Record file layout (little-endian)::

    header   magic b"PRCH" | version u16 | record_count u64
    record   snr_db f32 | channel u8 | rapid u8 | ta u8 | delay u16 | seed u64
             | grid complex64[l_ra][n_symbols]   (row-major, subcarrier-major)

A JSON manifest sits next to every record file as ``<name>.manifest.json``.
Each record's ``seed`` alone reproduces the instance: it seeds the draw of
the RAPID, the delay, the channel taps and the noise, in that order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .channel import (ChannelConfig, add_awgn, apply_channel, channel_from_code,
                      channel_name, realize_channel)
from .waveform import WaveformConfig, apply_delay, demodulate_extract, modulate
from .zc import ZcConfig, num_rapids, preamble_spectrum

log = logging.getLogger(__name__)

MAGIC = b"PRCH"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHQ")
N_TA_CLASSES = 12
PAPER_SPLIT = (0.525, 0.225, 0.25)  # 75/25 train/test, then 30% of train held out


class CorruptFileError(ValueError):
    pass


class VersionMismatchError(ValueError):
    pass


def record_dtype(l_ra: int = 139, n_symbols: int = 2) -> np.dtype:
    return np.dtype([
        ("snr_db", "<f4"),
        ("channel", "u1"),
        ("rapid", "u1"),
        ("ta", "u1"),
        ("delay", "<u2"),
        ("seed", "<u8"),
        ("grid", "<c8", (l_ra, n_symbols)),
    ])


def samples_per_ta(zcfg: ZcConfig = ZcConfig(), wcfg: WaveformConfig = WaveformConfig()) -> float:
    return wcfg.n_fft / zcfg.l_ra


def ta_label(delay_samples: int, zcfg: ZcConfig = ZcConfig(),
             wcfg: WaveformConfig = WaveformConfig()) -> int:
    # exact integer form of floor(delay / (n_fft / l_ra))
    return (int(delay_samples) * zcfg.l_ra) // wcfg.n_fft


def max_delay(zcfg: ZcConfig = ZcConfig(), wcfg: WaveformConfig = WaveformConfig(),
              n_ta: int = N_TA_CLASSES) -> int:
    """Largest integer delay whose TA label is still ``n_ta - 1``."""
    return -(-n_ta * wcfg.n_fft // zcfg.l_ra) - 1


@dataclass
class PrachInstance:
    grid: np.ndarray
    rapid_label: int
    ta_label: int
    delay_samples: int
    snr_db: float
    channel_profile: int
    seed: int


def generate_instance(rapid: int, snr_db: float, channel: ChannelConfig, delay_samples: int,
                      rng: np.random.Generator, zcfg: ZcConfig = ZcConfig(),
                      wcfg: WaveformConfig = WaveformConfig(), seed: int = 0) -> PrachInstance:
    dmax = max_delay(zcfg, wcfg)
    if not 0 <= delay_samples <= dmax:
        raise ValueError(f"delay {delay_samples} outside [0, {dmax}]")
    sig = apply_delay(modulate(preamble_spectrum(zcfg, rapid), wcfg), delay_samples)
    sig = apply_channel(sig, realize_channel(channel, rng, wcfg.sample_rate))
    occupied = sig.samples[delay_samples:delay_samples + wcfg.frame_len]
    # per-resource-element SNR: time-domain power scaled by the occupied bandwidth fraction
    p_ref = float(np.mean(np.abs(occupied) ** 2)) * wcfg.n_fft / zcfg.l_ra
    if np.isfinite(snr_db):
        sig = add_awgn(sig, snr_db, p_ref, rng)
    grid = demodulate_extract(sig, wcfg)
    return PrachInstance(grid, rapid, ta_label(delay_samples, zcfg, wcfg), delay_samples,
                         float(snr_db), channel.code, seed)


def instance_seed(generator_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([generator_seed, index]).generate_state(1, np.uint64)[0])


def instance_from_seed(seed: int, snr_db: float, channel: ChannelConfig,
                       zcfg: ZcConfig = ZcConfig(), wcfg: WaveformConfig = WaveformConfig()
                       ) -> PrachInstance:
    rng = np.random.default_rng(seed)
    rapid = int(rng.integers(num_rapids(zcfg)))
    delay = int(rng.integers(max_delay(zcfg, wcfg) + 1))
    return generate_instance(rapid, snr_db, channel, delay, rng, zcfg, wcfg, seed)


@dataclass
class DatasetRequest:
    channel: str = "awgn"
    snr_grid: Sequence[float] = (-15, -10, -5, 0, 5, 10, 15, 20)
    count_per_snr: int = 1000
    generator_seed: int = 0

    def __post_init__(self):
        if self.count_per_snr < 1 or not len(self.snr_grid):
            raise ValueError("need at least one SNR and one instance per SNR")


@dataclass
class PrachDataset:
    records: np.ndarray
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    @property
    def grids(self) -> np.ndarray:
        return self.records["grid"]

    @property
    def rapid(self) -> np.ndarray:
        return self.records["rapid"].astype(np.int64)

    @property
    def ta(self) -> np.ndarray:
        return self.records["ta"].astype(np.int64)

    @property
    def snr_db(self) -> np.ndarray:
        return self.records["snr_db"].astype(np.float64)

    @property
    def channel_names(self) -> list[str]:
        return sorted({channel_name(*channel_from_code(int(c))) for c in np.unique(self.records["channel"])})

    def subset(self, idx: np.ndarray) -> "PrachDataset":
        return PrachDataset(self.records[np.asarray(idx)], dict(self.manifest))

    def instance(self, i: int) -> PrachInstance:
        r = self.records[i]
        return PrachInstance(np.array(r["grid"], dtype=np.complex128), int(r["rapid"]), int(r["ta"]),
                             int(r["delay"]), float(r["snr_db"]), int(r["channel"]), int(r["seed"]))


def concat(datasets: Sequence[PrachDataset]) -> PrachDataset:
    recs = np.concatenate([d.records for d in datasets])
    manifest = {"record_count": len(recs), "sources": [d.manifest for d in datasets]}
    return PrachDataset(recs, manifest)


def generate_dataset(req: DatasetRequest, zcfg: ZcConfig = ZcConfig(),
                     wcfg: WaveformConfig = WaveformConfig()) -> PrachDataset:
    from .channel import parse_channel

    chan = parse_channel(req.channel)
    dtype = record_dtype(zcfg.l_ra, wcfg.n_symbols)
    n = len(req.snr_grid) * req.count_per_snr
    recs = np.zeros(n, dtype=dtype)
    i = 0
    for snr in req.snr_grid:
        for _ in range(req.count_per_snr):
            seed = instance_seed(req.generator_seed, i)
            inst = instance_from_seed(seed, float(snr), chan, zcfg, wcfg)
            recs[i] = (inst.snr_db, inst.channel_profile, inst.rapid_label, inst.ta_label,
                       inst.delay_samples, seed, inst.grid)
            i += 1
    manifest = {
        "format_version": FORMAT_VERSION,
        "record_count": n,
        "generator_seed": req.generator_seed,
        "channel_profiles": [chan.name],
        "snr_grid": [float(s) for s in req.snr_grid],
        "count_per_snr": req.count_per_snr,
        "split": list(PAPER_SPLIT),
        "counts_per_stratum": {_snr_key(s): req.count_per_snr for s in req.snr_grid},
        "l_ra": zcfg.l_ra,
        "u": zcfg.u,
        "n_cs": zcfg.n_cs,
        "n_fft": wcfg.n_fft,
        "n_symbols": wcfg.n_symbols,
        "cp_len": wcfg.cp_len,
        "max_delay": max_delay(zcfg, wcfg),
    }
    return PrachDataset(recs, manifest)


def _snr_key(s: float) -> str:
    return "inf" if math.isinf(s) else f"{float(s):g}"


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def save(ds: PrachDataset, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, FORMAT_VERSION, len(ds.records)))
        f.write(np.ascontiguousarray(ds.records).tobytes())
    manifest = dict(ds.manifest)
    manifest["record_count"] = len(ds.records)
    manifest["sha256"] = file_digest(path)
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load(path: str | Path, mmap: bool = True) -> PrachDataset:
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(HEADER.size)
    if len(head) < HEADER.size:
        raise CorruptFileError(f"{path}: truncated header")
    magic, version, count = HEADER.unpack(head)
    if magic != MAGIC:
        raise CorruptFileError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    manifest = {}
    if manifest_path(path).exists():
        manifest = json.loads(manifest_path(path).read_text())
    dtype = record_dtype(manifest.get("l_ra", 139), manifest.get("n_symbols", 2))
    expected = HEADER.size + count * dtype.itemsize
    size = path.stat().st_size
    if size != expected:
        raise CorruptFileError(f"{path}: {size} bytes, header promises {expected}")
    if count == 0:
        recs = np.zeros(0, dtype=dtype)
    elif mmap:
        recs = np.memmap(path, dtype=dtype, mode="r", offset=HEADER.size, shape=(count,))
    else:
        recs = np.fromfile(path, dtype=dtype, offset=HEADER.size, count=count)
    return PrachDataset(recs, manifest)


def split(n_or_ds, fractions: Sequence[float] = PAPER_SPLIT, seed: int = 0,
          strata: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint (train, val, test) index arrays covering ``range(n)``.

    ``fractions`` are final (train, val, test) shares.  With ``strata`` the
    split is done separately inside each stratum (e.g. per SNR).
    """
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr < 0) or not np.isclose(fr.sum(), 1.0):
        raise ValueError(f"fractions must be three non-negative shares summing to 1, got {fractions}")
    if isinstance(n_or_ds, PrachDataset):
        n = len(n_or_ds)
    else:
        n = int(n_or_ds)
    rng = np.random.default_rng(seed)
    if strata is None:
        groups = [np.arange(n)]
    else:
        strata = np.asarray(strata)
        groups = [np.flatnonzero(strata == s) for s in np.unique(strata)]
    parts = ([], [], [])
    for g in groups:
        perm = g[rng.permutation(len(g))]
        n_test = int(round(len(g) * fr[2]))
        n_val = int(round(len(g) * fr[1]))
        n_val = min(n_val, len(g) - n_test)
        parts[2].append(perm[:n_test])
        parts[1].append(perm[n_test:n_test + n_val])
        parts[0].append(perm[n_test + n_val:])
    out = tuple(np.sort(np.concatenate(p)).astype(np.int64) if p else np.zeros(0, np.int64)
                for p in parts)
    for name, idx in zip(("train", "val", "test"), out):
        if fr[("train", "val", "test").index(name)] > 0 and len(idx) == 0:
            log.warning("split left the %s part empty", name)
    return out


def raw_features(grids: np.ndarray) -> np.ndarray:
    """(n, l_ra, n_sym) complex -> (n, l_ra, n_sym, 2) float32 real/imag planes."""
    g = np.asarray(grids)
    return np.stack([g.real, g.imag], axis=-1).astype(np.float32)


def idft_features(grids: np.ndarray) -> np.ndarray:
    """Per-symbol l_ra-point inverse DFT (1/l_ra scaled), as real/imag planes."""
    return raw_features(np.fft.ifft(np.asarray(grids, dtype=np.complex128), axis=-2))


FEATURES = {"raw_freq": raw_features, "idft_139": idft_features}


def iterate_batches(ds: PrachDataset, batch_size: int, shuffle_seed: int | None = None,
                    features: str = "raw_freq", label: str = "rapid"
                    ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(ds)
    order = np.arange(n)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(n)
    transform = FEATURES[features]
    labels = ds.records[label].astype(np.int64)
    for s in range(0, n, batch_size):
        idx = order[s:s + batch_size]
        yield transform(ds.records["grid"][idx]), labels[idx]


__all__ = [
    "PrachInstance", "PrachDataset", "DatasetRequest", "generate_instance", "generate_dataset",
    "save", "load", "split", "iterate_batches", "raw_features", "idft_features", "ta_label",
    "max_delay", "concat", "WaveformConfig",
]
