"""Pure-numpy versions of the hot kernels.

Same signatures and results as the compiled ``_ckernels`` module; used when
the extension is not built or ``NRPRACH_PURE_PYTHON=1`` is set.

Activations are channels-last ``(B, H, W, C)``.  Convolutions use "same"
padding: ``(kh-1)//2`` rows above, the rest below, and likewise for columns.
"""

import numpy as np


def _pads(kh, kw):
    return (kh - 1) // 2, kh - 1 - (kh - 1) // 2, (kw - 1) // 2, kw - 1 - (kw - 1) // 2


def im2col(x, kh, kw):
    """(B, H, W, C) -> (B*H*W, kh*kw*C) patch matrix, zero-padded at the borders."""
    B, H, W, C = x.shape
    top, bottom, left, right = _pads(kh, kw)
    xp = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    cols = np.empty((B, H, W, kh, kw, C), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + H, j:j + W, :]
    return cols.reshape(B * H * W, kh * kw * C)


def col2im(cols, shape, kh, kw):
    """Adjoint of :func:`im2col`: scatter-add patch gradients back to (B, H, W, C)."""
    B, H, W, C = shape
    top, bottom, left, right = _pads(kh, kw)
    cols = cols.reshape(B, H, W, kh, kw, C)
    dxp = np.zeros((B, H + top + bottom, W + left + right, C), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + H, j:j + W, :] += cols[:, :, :, i, j, :]
    return dxp[:, top:top + H, left:left + W, :]


def bn_act_forward(z, gamma, beta, eps, slope):
    """Batch-statistics normalisation followed by leaky ReLU, per channel (last axis).

    Returns ``(y, xhat, mean, var)`` with the biased batch variance.
    """
    C = z.shape[-1]
    z2 = z.reshape(-1, C)
    mean = z2.mean(axis=0)
    var = z2.var(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (z - mean) * inv
    u = xhat * gamma + beta
    y = np.where(u > 0, u, slope * u)
    return y.astype(z.dtype, copy=False), xhat.astype(z.dtype, copy=False), mean, var


def bn_act_apply(z, mean, var, gamma, beta, eps, slope):
    """Inference path: fixed statistics, then leaky ReLU."""
    u = (z - mean) * (gamma / np.sqrt(var + eps)) + beta
    return np.where(u > 0, u, slope * u).astype(z.dtype, copy=False)


def bn_act_backward(dy, y, xhat, gamma, var, eps, slope):
    """Gradients of :func:`bn_act_forward`: ``(dz, dgamma, dbeta)``.

    ``y > 0`` identifies the positive branch of the activation (gamma-scaled
    values and outputs share sign under leaky ReLU).
    """
    C = dy.shape[-1]
    du = np.where(y > 0, dy, slope * dy)
    du2 = du.reshape(-1, C)
    xh2 = xhat.reshape(-1, C)
    m = du2.shape[0]
    dbeta = du2.sum(axis=0)
    dgamma = (du2 * xh2).sum(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    dz = (gamma * inv / m) * (m * du - dbeta - xhat * dgamma)
    return dz.astype(dy.dtype, copy=False), dgamma, dbeta


def leaky_relu(x, slope):
    return np.where(x > 0, x, slope * x)


def leaky_relu_backward(dy, x, slope):
    return np.where(x > 0, dy, slope * dy)

