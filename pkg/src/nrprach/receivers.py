"""The two neural PRACH receivers and their decode interface.

The RAPID model classifies the raw received grid into 10 classes and is
trained with SGD at 1e-2; the TA model classifies the per-symbol 139-point
inverse DFT of the same grid into 12 classes and is trained with Adam at
1e-3.  The two models share only their input, so they can be evaluated in
either order or concurrently.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .corr_rx import Detection
from .dataset import FEATURES, N_TA_CLASSES
from .nn.model import ModelConfig, ResidualClassifier
from .nn.train import TrainConfig
from .zc import ZcConfig, num_rapids

RAPID_BINDING = {"task": "rapid", "label": "rapid", "optimizer": "sgd", "learning_rate": 1e-2}
TA_BINDING = {"task": "ta", "label": "ta", "optimizer": "adam", "learning_rate": 1e-3}


class UntrainedModelError(RuntimeError):
    pass


def _build(n_out, transform, binding, seed, overrides):
    cfg = ModelConfig(n_out=n_out, input_transform=transform, seed=seed, extra=dict(binding))
    if overrides:
        cfg = replace(cfg, **overrides)
    return ResidualClassifier(cfg)


def build_rapid_model(seed: int = 0, zcfg: ZcConfig = ZcConfig(), **overrides) -> ResidualClassifier:
    return _build(num_rapids(zcfg), "raw_freq", RAPID_BINDING, seed, overrides)


def build_ta_model(seed: int = 0, **overrides) -> ResidualClassifier:
    return _build(N_TA_CLASSES, "idft_139", TA_BINDING, seed, overrides)


def build_model(task: str, seed: int = 0, **overrides) -> ResidualClassifier:
    if task == "rapid":
        return build_rapid_model(seed, **overrides)
    if task == "ta":
        return build_ta_model(seed, **overrides)
    raise ValueError(f"unknown task {task!r}; expected 'rapid' or 'ta'")


def task_of(model: ResidualClassifier) -> str:
    return model.cfg.extra.get("task", "rapid")


def train_config(model: ResidualClassifier, **kw) -> TrainConfig:
    """Training configuration carrying the model's optimizer binding."""
    extra = model.cfg.extra
    kw.setdefault("optimizer", extra.get("optimizer", "adam"))
    kw.setdefault("learning_rate", extra.get("learning_rate", 1e-3))
    return TrainConfig(**kw)


def features(model: ResidualClassifier, grids) -> np.ndarray:
    """Input tensor for ``model`` from complex grids of shape (n, l_ra, n_symbols)."""
    return FEATURES[model.cfg.input_transform](grids)


def labels(model: ResidualClassifier, records) -> np.ndarray:
    return records[model.cfg.extra.get("label", task_of(model))].astype(np.int64)


def _check_trained(model, allow_untrained):
    if not allow_untrained and not getattr(model, "trained", False):
        raise UntrainedModelError(f"{task_of(model)} model has not been trained or loaded")


def nn_decode_batch(rapid_model: ResidualClassifier, ta_model: ResidualClassifier, grids,
                    batch_size: int = 512, allow_untrained: bool = False
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Decode many grids; returns ``(rapids, tas)``."""
    _check_trained(rapid_model, allow_untrained)
    _check_trained(ta_model, allow_untrained)
    grids = np.asarray(grids)
    if grids.ndim != 3 or grids.shape[1:] != tuple(rapid_model.cfg.input_shape[:2]):
        raise ValueError(f"grids must be (n, {rapid_model.cfg.input_shape[0]}, "
                         f"{rapid_model.cfg.input_shape[1]}), got {grids.shape}")
    rapids, tas = [], []
    for s in range(0, len(grids), batch_size):
        g = grids[s:s + batch_size]
        rapids.append(rapid_model.forward(features(rapid_model, g)).argmax(axis=1))
        tas.append(ta_model.forward(features(ta_model, g)).argmax(axis=1))
    if not rapids:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(rapids).astype(np.int64), np.concatenate(tas).astype(np.int64)


def nn_decode(rapid_model: ResidualClassifier, ta_model: ResidualClassifier, rx,
              allow_untrained: bool = False) -> Detection:
    """Decode one ``(l_ra, n_symbols)`` grid into a :class:`Detection`."""
    r, t = nn_decode_batch(rapid_model, ta_model, np.asarray(rx)[None], allow_untrained=allow_untrained)
    return Detection(int(r[0]), int(t[0]))
