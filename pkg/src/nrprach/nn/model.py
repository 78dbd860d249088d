"""The residual convolutional classifier used by both PRACH receivers.

Graph (channels-last, spatial shape preserved throughout)::

    x -> BN -> LReLU ---------------------------+
           -> [conv(F) -> BN -> LReLU] x n_conv  |
           -> conv(C_in) ------------------- add +
           -> flatten -> dropout -> dense(hidden) -> ReLU -> dense(n_out) -> softmax
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import (Add, BatchNorm, BatchNormLeakyReLU, Conv2D, Dense, Dropout, Flatten,
                     LeakyReLU, ReLU, SoftmaxCrossEntropy, softmax)


@dataclass
class ModelConfig:
    input_shape: tuple = (139, 2, 2)
    n_out: int = 10
    filters: int = 64
    n_conv: int = 3
    kernel: tuple = (3, 2)
    hidden: int = 128
    dropout: float = 0.4
    slope: float = 0.01
    bn_momentum: float = 0.9
    bn_eps: float = 1e-3
    fused: bool = True
    seed: int = 0
    dtype: str = "float32"
    input_transform: str = "raw_freq"
    # feature scaling is a model-side transform; recorded here with the model
    input_scale: float = 1.0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["kernel"] = list(self.kernel)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["input_shape"] = tuple(d["input_shape"])
        d["kernel"] = tuple(d["kernel"])
        return cls(**d)


class ResidualClassifier:
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        # set by the training loop or when loading a checkpoint of a trained model
        self.trained = False
        rng = np.random.default_rng(cfg.seed)
        dt = np.dtype(cfg.dtype)
        H, W, C = cfg.input_shape

        def bn_act(ch):
            if cfg.fused:
                return [BatchNormLeakyReLU(ch, cfg.slope, cfg.bn_momentum, cfg.bn_eps, dt)]
            return [BatchNorm(ch, cfg.bn_momentum, cfg.bn_eps, dt), LeakyReLU(cfg.slope)]

        self.stem = bn_act(C)
        self.body = []
        ch = C
        for _ in range(cfg.n_conv):
            self.body.append(Conv2D(ch, cfg.filters, cfg.kernel, rng, dt))
            self.body.extend(bn_act(cfg.filters))
            ch = cfg.filters
        self.body.append(Conv2D(ch, C, cfg.kernel, rng, dt))
        self.add = Add()
        self.head = [
            Flatten(),
            # dropout mask stream is independent of the init stream
            Dropout(cfg.dropout, np.random.default_rng([cfg.seed, 1])),
            Dense(H * W * C, cfg.hidden, rng, dt),
            ReLU(),
            Dense(cfg.hidden, cfg.n_out, rng, dt),
        ]
        self.out = SoftmaxCrossEntropy()

    @property
    def layers(self):
        return [*self.stem, *self.body, self.add, *self.head, self.out]

    def named_layers(self):
        return [(f"{i:02d}_{layer.kind}", layer) for i, layer in enumerate(self.layers)]

    # parameters are exposed as flat dicts "<layer>/<name>" -> array (shared, not copied)
    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{n}/{k}": v for n, layer in self.named_layers() for k, v in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{n}/{k}": v for n, layer in self.named_layers() for k, v in layer.grads.items()}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{n}/{k}": v for n, layer in self.named_layers() for k, v in layer.buffers.items()}

    def load_state(self, params: dict, buffers: dict | None = None):
        own = {**self.parameters(), **self.buffers()}
        for k, v in {**params, **(buffers or {})}.items():
            if k not in own:
                raise KeyError(f"unknown parameter {k}")
            if own[k].shape != np.shape(v):
                raise ValueError(f"{k}: shape {np.shape(v)} != {own[k].shape}")
            own[k][...] = v

    def state(self) -> tuple[dict, dict]:
        return ({k: v.copy() for k, v in self.parameters().items()},
                {k: v.copy() for k, v in self.buffers().items()})

    def n_params(self) -> int:
        return sum(v.size for v in self.parameters().values())

    def _check_input(self, x):
        if tuple(x.shape[1:]) != tuple(self.cfg.input_shape):
            raise ValueError(f"input shape {x.shape[1:]} != {self.cfg.input_shape}")

    def logits(self, x, train=False):
        self._check_input(x)
        x = np.asarray(x, dtype=self.cfg.dtype)
        if self.cfg.input_scale != 1.0:
            x = x * np.asarray(self.cfg.input_scale, dtype=x.dtype)
        h = x
        for layer in self.stem:
            h = layer.forward(h, train)
        skip = h
        for layer in self.body:
            h = layer.forward(h, train)
        h = self.add.forward(h, skip, train)
        for layer in self.head:
            h = layer.forward(h, train)
        return h

    def forward(self, x, train=False):
        """Class probabilities, shape (B, n_out)."""
        return softmax(self.logits(x, train))

    def loss(self, x, target, train=True):
        return self.out.loss(self.logits(x, train), target)

    def backward(self):
        """Backpropagate the last ``loss`` call; fills every layer's ``grads``."""
        g = self.out.backward()
        for layer in reversed(self.head):
            g = layer.backward(g)
        g_body, g_skip = self.add.backward(g)
        g = g_body
        for layer in reversed(self.body):
            g = layer.backward(g)
        g = g + g_skip
        for layer in reversed(self.stem):
            g = layer.backward(g)
        return g

    def loss_and_grads(self, x, target):
        loss = self.loss(x, target, train=True)
        self.backward()
        return loss, self.gradients()

    def predict(self, x, batch_size=512):
        out = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.cfg.n_out))

    def spec(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]
