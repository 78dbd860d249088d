"""SGD and Adam, updating parameter arrays in place."""

from __future__ import annotations

import numpy as np


class SGD:
    name = "sgd"

    def __init__(self, lr=1e-2):
        if not lr >= 0:
            raise ValueError("learning rate must be non-negative")
        self.lr = lr

    def step(self, params: dict, grads: dict):
        for k, p in params.items():
            p -= np.asarray(self.lr * grads[k], dtype=p.dtype)

    def state(self) -> dict:
        return {}

    def load_state(self, state: dict):
        pass

    def config(self) -> dict:
        return {"optimizer": self.name, "lr": self.lr}


class Adam:
    name = "adam"

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if not lr >= 0:
            raise ValueError("learning rate must be non-negative")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def state(self) -> dict:
        out = {"t": np.array(self.t, dtype=np.int64)}
        for k in self.m:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    def load_state(self, state: dict):
        self.t = int(state.get("t", 0))
        self.m = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("m/")}
        self.v = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("v/")}

    def config(self) -> dict:
        return {"optimizer": self.name, "lr": self.lr, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps}


def step_sgd(params: dict, grads: dict, lr: float) -> dict:
    SGD(lr).step(params, grads)
    return params


def step_adam(params: dict, grads: dict, state: Adam | None = None, lr: float = 1e-3,
              beta1=0.9, beta2=0.999, eps=1e-8):
    state = state or Adam(lr, beta1, beta2, eps)
    state.step(params, grads)
    return params, state


def make_optimizer(name: str, lr: float):
    name = name.lower()
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")
