"""Compare the compiled and numpy kernel backends.

Times each hot kernel at the shapes met during training (batch 256, a
139x2 grid, 64 channels), checks the two backends agree, then times one
full training step of the receiver model under each backend.  The step
timing runs in a subprocess because the backend is fixed at import.

    python benchmarks/bench_kernels.py [--batch 256] [--repeat 7]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from nrprach.nn import kernels


def kernel_cases(batch, rng):
    z = rng.standard_normal((batch, 139, 2, 64)).astype(np.float32)
    x2 = rng.standard_normal((batch, 139, 2, 2)).astype(np.float32)
    g = (1 + 0.1 * rng.standard_normal(64)).astype(np.float32)
    b = (0.1 * rng.standard_normal(64)).astype(np.float32)
    dy = rng.standard_normal(z.shape).astype(np.float32)

    def prep(mod):
        y, xhat, mean, var = mod.bn_act_forward(z, g, b, 1e-3, 0.01)
        cols = mod.im2col(z, 3, 2)
        return y, xhat, var, cols

    return {
        "im2col (64 ch)": lambda mod, st: mod.im2col(z, 3, 2),
        "im2col (2 ch)": lambda mod, st: mod.im2col(x2, 3, 2),
        "col2im (64 ch)": lambda mod, st: mod.col2im(st[3], z.shape, 3, 2),
        "bn_act_forward": lambda mod, st: mod.bn_act_forward(z, g, b, 1e-3, 0.01),
        "bn_act_apply": lambda mod, st: mod.bn_act_apply(z, b, g, g, b, 1e-3, 0.01),
        "bn_act_backward": lambda mod, st: mod.bn_act_backward(dy, st[0], st[1], g, st[2], 1e-3, 0.01),
        "leaky_relu": lambda mod, st: mod.leaky_relu(z, 0.01),
        "leaky_relu_backward": lambda mod, st: mod.leaky_relu_backward(dy, z, 0.01),
    }, prep


def _first(out):
    return out[0] if isinstance(out, tuple) else out


def bench_kernels(batch, repeat):
    rng = np.random.default_rng(0)
    cases, prep = kernel_cases(batch, rng)
    mods = kernels.backends()
    states = {name: prep(mod) for name, mod in mods.items()}
    rows = []
    for case, fn in cases.items():
        times = {}
        for name, mod in mods.items():
            st = states[name]
            fn(mod, st)
            times[name] = min(timeit.repeat(lambda fn=fn, mod=mod, st=st: fn(mod, st), number=1, repeat=repeat))
        if len(mods) == 2:
            a, c = _first(cases[case](mods["python"], states["python"])), _first(cases[case](mods["cython"], states["cython"]))
            np.testing.assert_allclose(a, c, rtol=2e-4, atol=2e-4)
        rows.append((case, times))
    return rows


STEP_SNIPPET = """
import json, time, numpy as np
from nrprach.nn import kernels
from nrprach.nn.model import ModelConfig, ResidualClassifier
from nrprach.nn.optim import SGD
b = {batch}
m = ResidualClassifier(ModelConfig())
x = np.random.default_rng(0).standard_normal((b, 139, 2, 2)).astype(np.float32)
y = np.arange(b) % 10
opt, params = SGD(1e-2), m.parameters()
m.loss_and_grads(x, y)
ts = []
for _ in range({repeat}):
    t = time.perf_counter()
    _, g = m.loss_and_grads(x, y)
    opt.step(params, g)
    ts.append(time.perf_counter() - t)
t = time.perf_counter()
m.predict(x)
print(json.dumps({{"backend": kernels.BACKEND, "step": min(ts), "predict": time.perf_counter() - t}}))
"""


def bench_step(batch, repeat, pure_python):
    env = dict(os.environ)
    env["NRPRACH_PURE_PYTHON"] = "1" if pure_python else ""
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(batch=batch, repeat=repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--repeat", type=int, default=7)
    a = p.parse_args(argv)

    print(f"available backends: {', '.join(kernels.backends())} (active: {kernels.BACKEND})")
    print(f"\nkernel timings, batch {a.batch}, best of {a.repeat} (ms)")
    print(f"{'kernel':<22}{'python':>10}{'cython':>10}{'speedup':>9}")
    for case, t in bench_kernels(a.batch, a.repeat):
        py, cy = t["python"] * 1e3, t.get("cython", float("nan")) * 1e3
        print(f"{case:<22}{py:>10.2f}{cy:>10.2f}{py / cy:>8.1f}x")

    print(f"\nfull training step, batch {a.batch} (ms)")
    results = [bench_step(a.batch, a.repeat, pure) for pure in (True, False)]
    for r in results:
        print(f"{r['backend']:<10} step {r['step'] * 1e3:8.1f}  per sample {r['step'] * 1e3 / a.batch:6.3f}"
              f"  inference {r['predict'] * 1e3:7.1f}")
    if len(results) == 2 and results[0]["backend"] != results[1]["backend"]:
        print(f"training step speedup: {results[0]['step'] / results[1]['step']:.2f}x")


if __name__ == "__main__":
    main()
