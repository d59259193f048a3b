"""Statevector simulation of the hybrid model's quantum layer.

The layer circuit, for n qubits and a feature vector f:

  1. start in |0...0>,
  2. encoding rotations ry(pi * tanh(f_i)) on each qubit i,
  3. trainable rotations ry(theta) on even-indexed qubits and ry(phi) on
     odd-indexed qubits,
  4. entangling CNOT(i, i+1) for i = 0..n-2,
  5. read out <Z_i> per qubit, each in [-1, 1].

Basis ordering is little-endian: qubit 0 is the least significant bit of the
amplitude index. Gradients use the two-term parameter-shift rule per gate
occurrence, (E(a + pi/2) - E(a - pi/2)) / 2; a parameter appearing on several
qubits accumulates one shift term per occurrence. Encoding angles chain
through d(pi*tanh f)/df = pi * (1 - tanh^2 f).

theta / phi may be scalars (shared across qubits, the default) or vectors
with one entry per occurrence (per-qubit mode).
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels

ENCODING_SCALE = math.pi


class QuantumError(ValueError):
    pass


class StateVector:
    """2**n_qubits complex amplitudes; gates mutate the buffer in place."""

    __slots__ = ("n_qubits", "amps")

    def __init__(self, n_qubits: int):
        if n_qubits < 1:
            raise QuantumError("n_qubits must be >= 1")
        self.n_qubits = n_qubits
        self.amps = np.zeros(1 << n_qubits, dtype=np.complex128)
        self.amps[0] = 1.0

    @classmethod
    def from_amplitudes(cls, amps) -> "StateVector":
        arr = np.asarray(amps, dtype=np.complex128)
        n = arr.size.bit_length() - 1
        if arr.size != 1 << n or n < 1:
            raise QuantumError(f"amplitude count {arr.size} is not a power of two >= 2")
        norm = float(np.sum(arr.real**2 + arr.imag**2))
        if abs(norm - 1.0) > 1e-9:
            raise QuantumError(f"state norm^2 = {norm}, expected 1")
        sv = cls(n)
        sv.amps = arr.copy()
        return sv

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.amps.real**2 + self.amps.imag**2)))

    def copy(self) -> "StateVector":
        sv = StateVector(self.n_qubits)
        sv.amps = self.amps.copy()
        return sv


class QuantumLayerParams:
    """Trainable rotation angles of the layer.

    theta drives even-indexed qubits, phi odd-indexed ones. Scalars are
    shared across their qubits; 1-d arrays give one angle per occurrence.
    """

    __slots__ = ("theta", "phi", "n_qubits")

    def __init__(self, theta, phi, n_qubits: int):
        if n_qubits < 1:
            raise QuantumError("n_qubits must be >= 1")
        self.theta = np.asarray(theta, dtype=np.float64)
        self.phi = np.asarray(phi, dtype=np.float64)
        self.n_qubits = n_qubits
        n_even = (n_qubits + 1) // 2
        n_odd = n_qubits // 2
        for name, arr, count in (("theta", self.theta, n_even), ("phi", self.phi, n_odd)):
            if not np.all(np.isfinite(arr)):
                raise QuantumError(f"{name} must be finite")
            if arr.ndim not in (0, 1) or (arr.ndim == 1 and arr.size != count):
                raise QuantumError(f"{name} must be a scalar or a vector of length {count}")


def _check_qubit(n_qubits: int, qubit: int, what: str = "qubit") -> None:
    if not 0 <= qubit < n_qubits:
        raise QuantumError(f"{what} index {qubit} out of range for {n_qubits} qubits")


def apply_ry(state: StateVector, qubit: int, angle: float) -> StateVector:
    """Rotate `qubit` by [[cos(a/2), -sin(a/2)], [sin(a/2), cos(a/2)]]."""
    _check_qubit(state.n_qubits, qubit)
    buf = state.amps.reshape(1, -1)
    kernels.ry_rows(buf, qubit, np.array([angle / 2.0]))
    return state

def apply_cnot(state: StateVector, control: int, target: int) -> StateVector:
    """Flip `target` where `control` is 1."""
    _check_qubit(state.n_qubits, control, "control")
    _check_qubit(state.n_qubits, target, "target")
    if control == target:
        raise QuantumError("control and target must differ")
    kernels.cnot_rows(state.amps.reshape(1, -1), control, target)
    return state


def z_expectations(state: StateVector) -> np.ndarray:
    """Per-qubit <Z> readout of one state."""
    return kernels.z_expectations_rows(state.amps.reshape(1, -1), state.n_qubits)[0]


# ---------------------------------------------------------------------------
# batched layer evaluation
#
# The training/attack hot path evaluates the circuit for a whole batch of
# feature rows at once on a [B, 2**n] buffer; the single-sample API above is
# the same code with B = 1.


def _occurrence_angle(params: QuantumLayerParams, qubit: int) -> float:
    arr = params.theta if qubit % 2 == 0 else params.phi
    return float(arr) if arr.ndim == 0 else float(arr[qubit // 2])


def _run_circuit_rows(enc_half: np.ndarray, params: QuantumLayerParams) -> np.ndarray:
    """Evolve |0..0> per row; enc_half holds encoding half-angles [B, n]."""
    bsz, n = enc_half.shape
    amps = np.zeros((bsz, 1 << n), dtype=np.complex128)
    amps[:, 0] = 1.0
    for q in range(n):
        kernels.ry_rows(amps, q, np.ascontiguousarray(enc_half[:, q]))
    for q in range(n):
        half = _occurrence_angle(params, q) / 2.0
        kernels.ry_rows(amps, q, np.full(bsz, half))
    for q in range(n - 1):
        kernels.cnot_rows(amps, q, q + 1)
    return amps


def _expectations_rows(enc_half: np.ndarray, params: QuantumLayerParams) -> np.ndarray:
    amps = _run_circuit_rows(enc_half, params)
    return kernels.z_expectations_rows(amps, enc_half.shape[1])


def _shifted_expectations(
    enc_half: np.ndarray, params: QuantumLayerParams, kind: str, qubit: int, delta: float
) -> np.ndarray:
    """Expectations with one gate occurrence's angle shifted by delta."""
    if kind == "enc":
        shifted = enc_half.copy()
        shifted[:, qubit] += delta / 2.0
        return _expectations_rows(shifted, params)
    theta, phi = params.theta.copy(), params.phi.copy()
    target = theta if qubit % 2 == 0 else phi
    if target.ndim == 0:
        # temporarily promote to per-occurrence vector so only one gate shifts
        count = (params.n_qubits + 1) // 2 if qubit % 2 == 0 else params.n_qubits // 2
        target = np.full(count, float(target))
    target[qubit // 2] += delta
    if qubit % 2 == 0:
        theta = target
    else:
        phi = target
    shifted = QuantumLayerParams(theta, phi, params.n_qubits)
    return _expectations_rows(enc_half, shifted)


def layer_forward_rows(features: np.ndarray, params: QuantumLayerParams) -> np.ndarray:
    """<Z> readouts for a batch of feature rows [B, n] -> [B, n]."""
    if features.ndim != 2 or features.shape[1] != params.n_qubits:
        raise QuantumError(
            f"features shape {features.shape} does not match n_qubits={params.n_qubits}"
        )
    if not np.all(np.isfinite(features)):
        raise QuantumError("features must be finite")
    enc_half = ENCODING_SCALE * np.tanh(features) / 2.0
    return _expectations_rows(enc_half, params)


def layer_gradients_rows(
    features: np.ndarray,
    params: QuantumLayerParams,
    upstream: np.ndarray,
    need: tuple[bool, bool, bool] = (True, True, True),
) -> tuple[np.ndarray | None, np.ndarray | None, np.ndarray | None]:
    """Parameter-shift gradients contracted with `upstream` [B, n].

    Returns (d_features [B, n], d_theta, d_phi); entries are None where the
    corresponding `need` flag is False. d_theta / d_phi are summed over the
    batch and match the parameter's shape.
    """
    if upstream.shape != features.shape:
        raise QuantumError(
            f"upstream shape {upstream.shape} does not match features {features.shape}"
        )
    n = params.n_qubits
    tanh_f = np.tanh(features)
    enc_half = ENCODING_SCALE * tanh_f / 2.0

    def occurrence_grad(kind: str, qubit: int) -> np.ndarray:
        plus = _shifted_expectations(enc_half, params, kind, qubit, math.pi / 2.0)
        minus = _shifted_expectations(enc_half, params, kind, qubit, -math.pi / 2.0)
        de = (plus - minus) / 2.0  # dE/d(angle of this occurrence), [B, n]
        return (de * upstream).sum(axis=1)  # [B]

    d_features = None
    if need[0]:
        d_features = np.empty_like(features)
        for q in range(n):
            d_features[:, q] = occurrence_grad("enc", q) * (
                ENCODING_SCALE * (1.0 - tanh_f[:, q] ** 2)
            )

    def trainable_grad(first_qubit: int, param: np.ndarray) -> np.ndarray:
        per_occ = [occurrence_grad("train", q).sum() for q in range(first_qubit, n, 2)]
        if param.ndim == 0:
            return np.asarray(sum(per_occ), dtype=np.float64)
        return np.asarray(per_occ, dtype=np.float64)

    d_theta = trainable_grad(0, params.theta) if need[1] else None
    d_phi = trainable_grad(1, params.phi) if need[2] else None
    return d_features, d_theta, d_phi


def quantum_layer_forward(features, params: QuantumLayerParams) -> np.ndarray:
    """Single-sample layer evaluation: vector[n] -> <Z> vector[n]."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 1:
        raise QuantumError(f"features must be a vector, got shape {f.shape}")
    return layer_forward_rows(f[None, :], params)[0]


def quantum_layer_gradients(features, params: QuantumLayerParams, upstream):
    """Single-sample (d_features, d_theta, d_phi) for an upstream vector[n]."""
    f = np.asarray(features, dtype=np.float64)
    u = np.asarray(upstream, dtype=np.float64)
    if f.ndim != 1 or u.shape != f.shape:
        raise QuantumError("features and upstream must be equal-length vectors")
    df, dth, dph = layer_gradients_rows(f[None, :], params, u[None, :])
    return df[0], dth, dph


def make_layer_hook(n_qubits: int):
    """(fwd, bwd) pair for a tensor-graph custom node.

    The node takes (features [B,n], theta, phi) and returns expectations
    [B,n]; backward injects the parameter-shift gradients.
    """

    def fwd(features: np.ndarray, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
        params = QuantumLayerParams(theta, phi, n_qubits)
        return layer_forward_rows(features, params)

    def bwd(g, xs, y, need):
        features, theta, phi = xs
        params = QuantumLayerParams(theta, phi, n_qubits)
        df, dth, dph = layer_gradients_rows(features, params, g, need=tuple(need))
        return (df, dth, dph)

    return fwd, bwd
