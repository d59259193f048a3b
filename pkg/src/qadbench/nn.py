"""The hybrid model: CNN feature extractor, quantum layer, head, training.

Architecture (fixed): conv 8@3x3 -> relu -> maxpool2 -> conv 16@3x3 -> relu
-> maxpool2 -> flatten(400) -> fc 400->64 -> relu -> fc 64->n_qubits ->
quantum layer -> concat(features, expectations) -> affine head ->
log_softmax. Inputs are [B, 1, 28, 28] with pixels in [0, 1].

Weights initialize uniformly in +-1/sqrt(fan_in) from the model seed; the
rotation angles theta/phi initialize uniformly in (-pi, pi). Training is Adam
on the mean negative log-likelihood with one seeded shuffle per epoch, so a
fixed (model seed, train seed) pair reproduces runs bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qsim
from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat,
    conv2d,
    custom,
    evaluate,
    log_softmax,
    matmul,
    maxpool2,
    mul,
    relu,
    reshape,
    sum_all,
    value_and_seeded_gradient,
    var,
)

CONV1_FILTERS = 8
CONV2_FILTERS = 16
KERNEL = 3
FLAT_FEATURES = 400  # 16 filters * 5 * 5 after two conv+pool stages on 28x28
HIDDEN = 64
IMAGE_SHAPE = (1, 28, 28)


class ModelError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 10
    learning_rate: float = 0.001
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ModelError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ModelError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ModelError("learning_rate must be > 0")


class AdamState:
    """Per-parameter first/second moments and the shared step counter."""

    __slots__ = ("m", "v", "t")

    def __init__(self, m: dict[str, np.ndarray], v: dict[str, np.ndarray], t: int = 0):
        self.m = m
        self.v = v
        self.t = t

    @classmethod
    def initialize(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            {k: np.zeros_like(p.a) for k, p in params.items()},
            {k: np.zeros_like(p.a) for k, p in params.items()},
        )


class HybridModel:
    """Classical feature extractor + quantum layer + classification head.

    Parameters live in `self.params` (name -> Tensor) in a fixed order; the
    expression graph is rebuilt per instance and shared by all forward,
    loss, and attack computations. n_features always equals n_qubits.
    """

    def __init__(
        self,
        n_qubits: int,
        n_classes: int,
        seed: int = 0,
        per_qubit_angles: bool = False,
    ):
        if n_qubits < 1:
            raise ModelError("n_qubits must be >= 1")
        if n_classes < 2:
            raise ModelError("n_classes must be >= 2")
        self.n_qubits = n_qubits
        self.n_classes = n_classes
        self.per_qubit_angles = per_qubit_angles
        self.params = self._init_params(np.random.default_rng(seed))
        self._build_graph()

    @classmethod
    def from_params(cls, params: dict[str, Tensor]) -> "HybridModel":
        """Rebuild a model around an existing parameter set (checkpoints)."""
        model = cls.__new__(cls)
        model.n_qubits = params["fc2_b"].dims[0]
        model.n_classes = params["head_b"].dims[0]
        model.per_qubit_angles = params["theta"].a.ndim == 1
        expected = {
            name: shape
            for name, shape in cls._param_shapes(
                model.n_qubits, model.n_classes, model.per_qubit_angles
            )
        }
        if set(params) != set(expected):
            raise ModelError(f"parameter names {sorted(params)} != {sorted(expected)}")
        for name, shape in expected.items():
            if params[name].dims != shape:
                raise ModelError(f"{name} has shape {params[name].dims}, expected {shape}")
        model.params = dict(params)
        model._build_graph()
        return model

    @staticmethod
    def _param_shapes(n_qubits: int, n_classes: int, per_qubit: bool):
        theta_shape = ((n_qubits + 1) // 2,) if per_qubit else ()
        phi_shape = (n_qubits // 2,) if per_qubit else ()
        return [
            ("conv1_w", (CONV1_FILTERS, 1, KERNEL, KERNEL)),
            ("conv1_b", (CONV1_FILTERS,)),
            ("conv2_w", (CONV2_FILTERS, CONV1_FILTERS, KERNEL, KERNEL)),
            ("conv2_b", (CONV2_FILTERS,)),
            ("fc1_w", (FLAT_FEATURES, HIDDEN)),
            ("fc1_b", (HIDDEN,)),
            ("fc2_w", (HIDDEN, n_qubits)),
            ("fc2_b", (n_qubits,)),
            ("theta", theta_shape),
            ("phi", phi_shape),
            ("head_w", (2 * n_qubits, n_classes)),
            ("head_b", (n_classes,)),
        ]

    def _init_params(self, rng: np.random.Generator) -> dict[str, Tensor]:
        fan_in = {
            "conv1": 1 * KERNEL * KERNEL,
            "conv2": CONV1_FILTERS * KERNEL * KERNEL,
            "fc1": FLAT_FEATURES,
            "fc2": HIDDEN,
            "head": 2 * self.n_qubits,
        }
        params: dict[str, Tensor] = {}
        for name, shape in self._param_shapes(
            self.n_qubits, self.n_classes, self.per_qubit_angles
        ):
            if name in ("theta", "phi"):
                params[name] = Tensor(rng.uniform(-np.pi, np.pi, size=shape))
            else:
                bound = 1.0 / np.sqrt(fan_in[name.split("_")[0]])
                params[name] = Tensor(rng.uniform(-bound, bound, size=shape))
        return params

    def _build_graph(self) -> None:
        x = var("x")
        h = relu(conv2d(x, var("conv1_w"), var("conv1_b")))
        h = maxpool2(h)
        h = relu(conv2d(h, var("conv2_w"), var("conv2_b")))
        h = maxpool2(h)
        h = reshape(h, (-1, FLAT_FEATURES))
        h = relu(add(matmul(h, var("fc1_w")), var("fc1_b")))
        feats = add(matmul(h, var("fc2_w")), var("fc2_b"))
        fwd, bwd = qsim.make_layer_hook(self.n_qubits)
        expectations = custom(fwd, bwd, (feats, var("theta"), var("phi")), "quantum_layer")
        logits = add(matmul(concat(feats, expectations), var("head_w")), var("head_b"))
        self.logprob_node = log_softmax(logits)
        # scalar objective sum(log_probs * obj_w); NLL binds obj_w = -onehot/B
        self.objective_node = sum_all(mul(self.logprob_node, var("obj_w")))

    @property
    def param_names(self) -> list[str]:
        return [name for name, _ in self._param_shapes(self.n_qubits, self.n_classes, self.per_qubit_angles)]

    def clone(self) -> "HybridModel":
        return HybridModel.from_params({k: p.copy() for k, p in self.params.items()})

    def _check_batch(self, x: np.ndarray) -> None:
        if x.ndim != 4 or x.shape[1:] != IMAGE_SHAPE:
            raise ShapeError(f"expected batch of shape [B, 1, 28, 28], got {x.shape}")
        if x.min() < -1e-9 or x.max() > 1.0 + 1e-9:
            raise ModelError(
                f"pixels out of [0, 1]: min={x.min():.6g} max={x.max():.6g}"
            )

    def _bindings(self, x: np.ndarray, obj_w: np.ndarray | None = None) -> dict[str, Tensor]:
        b = dict(self.params)
        b["x"] = Tensor._wrap(x)
        if obj_w is not None:
            b["obj_w"] = Tensor._wrap(obj_w)
        return b

    def log_probs(self, x: np.ndarray) -> np.ndarray:
        """Per-row log-probabilities for a [B, 1, 28, 28] pixel batch."""
        self._check_batch(x)
        return evaluate(self.logprob_node, self._bindings(x)).a

    def nll_input_grad(self, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Gradient of the mean NLL w.r.t. the input pixels."""
        return self.weighted_logprob_input_grad(x, nll_weights(labels, self.n_classes))

    def weighted_logprob_input_grad(self, x: np.ndarray, obj_w: np.ndarray) -> np.ndarray:
        """Gradient of sum(log_probs * obj_w) w.r.t. the input pixels."""
        _, grad = self.log_probs_and_weighted_input_grad(x, lambda lp: obj_w)
        return grad

    def log_probs_and_weighted_input_grad(self, x: np.ndarray, weights_fn):
        """(log_probs, d sum(log_probs * W)/dx) with W = weights_fn(log_probs).

        One shared forward pass; W may depend on the freshly computed
        log-probabilities (the CW attack picks its competitor class there).
        """
        self._check_batch(x)
        lp, grads = value_and_seeded_gradient(
            self.logprob_node,
            self._bindings(x),
            frozenset(("x",)),
            lambda value: weights_fn(value.a),
        )
        return lp.a, grads["x"].a

    def loss_and_param_grads(
        self, x: np.ndarray, labels: np.ndarray
    ) -> tuple[float, dict[str, Tensor]]:
        """Mean NLL and its gradients for every parameter, one graph pass."""
        self._check_batch(x)
        weights = nll_weights(labels, self.n_classes)
        lp, grads = value_and_seeded_gradient(
            self.logprob_node,
            self._bindings(x),
            frozenset(self.param_names),
            lambda value: weights,
        )
        return float((lp.a * weights).sum()), grads


def nll_weights(labels: np.ndarray, n_classes: int) -> np.ndarray:
    """Weight matrix turning the weighted-logprob objective into mean NLL."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ModelError(f"labels must be a vector, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ModelError(f"label out of range [0, {n_classes})")
    w = np.zeros((labels.size, n_classes))
    w[np.arange(labels.size), labels] = -1.0 / max(labels.size, 1)
    return w


def forward_hybrid(model: HybridModel, batch: Tensor) -> Tensor:
    """Full pipeline to per-row log-probabilities."""
    return Tensor._wrap(model.log_probs(batch.a))


def nll_loss(log_probs, labels) -> float:
    """Mean over the batch of -log_probs[i, labels[i]]."""
    lp = log_probs.a if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    labels = np.asarray(labels)
    if lp.ndim != 2:
        raise ShapeError(f"log_probs must be [B, n_classes], got {lp.shape}")
    if labels.shape != (lp.shape[0],):
        raise ModelError(
            f"batch-size mismatch: {lp.shape[0]} rows vs {labels.shape} labels"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= lp.shape[1]):
        raise ModelError(f"label out of range [0, {lp.shape[1]})")
    return float(-lp[np.arange(labels.size), labels].mean())


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, Tensor],
    state: AdamState,
    config: TrainConfig,
) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update; replaces tensors in `params`."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name].a
        if g.shape != p.a.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter {p.a.shape} for {name}")
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / corr1
        v_hat = state.v[name] / corr2
        params[name] = Tensor._wrap(
            p.a - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps_hat)
        )
    return params, state


def train(model: HybridModel, data, config: TrainConfig):
    """Adam training over seeded shuffled mini-batches.

    Returns (model, per-epoch mean batch loss). The model is updated in
    place; epochs = 0 leaves it untouched and returns an empty curve.
    """
    n = len(data)
    if n == 0:
        raise ModelError("training dataset is empty")
    rng = np.random.default_rng(config.seed)
    state = AdamState.initialize(model.params)
    curve: list[float] = []
    images = data.images.a
    labels = np.asarray(data.labels)
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss, grads = model.loss_and_param_grads(images[idx], labels[idx])
            adam_step(model.params, grads, state, config)
            batch_losses.append(loss)
        curve.append(float(np.mean(batch_losses)))
    return model, curve


def evaluate_accuracy(model: HybridModel, data, batch_size: int = 500) -> tuple[float, float]:
    """(accuracy, mean NLL) over a dataset; argmax ties go to the lowest class."""
    n = len(data)
    if n == 0:
        raise ModelError("evaluation dataset is empty")
    images = data.images.a
    labels = np.asarray(data.labels)
    correct = 0
    loss_sum = 0.0
    for start in range(0, n, batch_size):
        lp = model.log_probs(images[start : start + batch_size])
        y = labels[start : start + batch_size]
        correct += int((lp.argmax(axis=1) == y).sum())
        loss_sum += float(-lp[np.arange(y.size), y].sum())
    return correct / n, loss_sum / n
