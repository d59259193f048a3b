"""Pure-numpy implementations of the hot kernels.

This is the fallback backend: every function here has a signature-compatible
twin in the compiled extension (`_ckernels`). Convolutions are valid-mode
(no padding), stride 1. State buffers for the quantum kernels are complex128
arrays of shape [batch, 2**n_qubits] and are mutated in place.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross-correlate x[B,C,H,W] with kernels w[F,C,KH,KW] plus bias b[F]."""
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # [B,C,OH,OW,KH,KW]
    y = np.tensordot(win, w, axes=[(1, 4, 5), (1, 2, 3)])  # [B,OH,OW,F]
    y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    y += b.reshape(1, -1, 1, 1)
    return y


def conv2d_backward_input(w: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Gradient of conv2d_forward w.r.t. its input (full correlation)."""
    kh, kw = w.shape[2], w.shape[3]
    gy_pad = np.pad(gy, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    w_rot = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d_forward(gy_pad, w_rot, np.zeros(w_rot.shape[0]))


def conv2d_backward_kernels(x: np.ndarray, gy: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Gradient of conv2d_forward w.r.t. the kernel bank."""
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # [B,C,OH,OW,KH,KW]
    gw = np.tensordot(gy, win, axes=[(0, 2, 3), (0, 2, 3)])  # [F,C,KH,KW]
    return np.ascontiguousarray(gw)


def maxpool2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 non-overlapping max pool; trailing odd row/column dropped.

    Returns (pooled, argmax) where argmax holds the row-major index 0..3 of
    the window maximum (first maximum wins on ties).
    """
    bsz, ch, h, w = x.shape
    oh, ow = h // 2, w // 2
    t = x[:, :, : oh * 2, : ow * 2].reshape(bsz, ch, oh, 2, ow, 2)
    t = np.ascontiguousarray(t.transpose(0, 1, 2, 4, 3, 5)).reshape(bsz, ch, oh, ow, 4)
    arg = t.argmax(axis=-1)
    y = np.take_along_axis(t, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), arg.astype(np.int64)


def maxpool2_backward(gy: np.ndarray, arg: np.ndarray, h: int, w: int) -> np.ndarray:
    gx = np.zeros(gy.shape[:2] + (h, w))
    bi, ci, oi, oj = np.indices(arg.shape, sparse=True)
    gx[bi, ci, 2 * oi + arg // 2, 2 * oj + arg % 2] = gy
    return gx


def ry_rows(amps: np.ndarray, qubit: int, half_angles: np.ndarray) -> None:
    """Apply ry(angle_k) on `qubit` to each row k of amps, in place.

    half_angles holds angle/2 per row; qubit 0 is the least significant bit.
    """
    c = np.cos(half_angles)[:, None, None]
    s = np.sin(half_angles)[:, None, None]
    view = amps.reshape(amps.shape[0], -1, 2, 1 << qubit)
    a0 = view[:, :, 0, :].copy()
    a1 = view[:, :, 1, :].copy()
    view[:, :, 0, :] = c * a0 - s * a1
    view[:, :, 1, :] = s * a0 + c * a1


def cnot_rows(amps: np.ndarray, control: int, target: int) -> None:
    """Apply CNOT(control, target) to every row of amps, in place."""
    dim = amps.shape[1]
    idx = np.arange(dim)
    src = idx[((idx >> control) & 1 == 1) & ((idx >> target) & 1 == 0)]
    dst = src | (1 << target)
    tmp = amps[:, src].copy()
    amps[:, src] = amps[:, dst]
    amps[:, dst] = tmp


def z_expectations_rows(amps: np.ndarray, n_qubits: int) -> np.ndarray:
    """Per-qubit <Z> of each row: +1 weight for bit 0, -1 for bit 1."""
    probs = amps.real**2 + amps.imag**2
    idx = np.arange(amps.shape[1])
    signs = 1.0 - 2.0 * ((idx[:, None] >> np.arange(n_qubits)[None, :]) & 1)
    return probs @ signs
