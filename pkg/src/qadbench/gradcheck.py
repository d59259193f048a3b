"""Finite-difference verification of the full hybrid-model loss gradient.

Central differences with step h on the mean NLL of a small synthetic batch,
checked against the reverse-mode gradients for every parameter tensor, the
rotation angles, and the input pixels. Large tensors are spot-checked on a
seeded sample of coordinates; small ones exhaustively.

The relative error for a coordinate is |ad - fd| / max(|ad|, |fd|, floor)
with floor = 1e-3, so near-zero gradients are compared absolutely at a
scale finite differences can resolve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import data as data_mod
from .nn import HybridModel, nll_weights
from .tensor import Tensor, evaluate

REL_ERR_FLOOR = 1e-3
MAX_COORDS_PER_TENSOR = 256


@dataclass
class GradcheckResult:
    max_rel_err: dict[str, float]
    passed: bool
    threshold: float


def _loss(model: HybridModel, x: np.ndarray, obj_w: np.ndarray) -> float:
    bindings = model._bindings(x, obj_w)
    return evaluate(model.objective_node, bindings).item()


def _coords(rng: np.random.Generator, size: int) -> np.ndarray:
    if size <= MAX_COORDS_PER_TENSOR:
        return np.arange(size)
    return np.sort(rng.choice(size, size=MAX_COORDS_PER_TENSOR, replace=False))


def run_gradcheck(
    seed: int = 12,
    h: float = 1e-5,
    threshold: float = 1e-5,
    n_qubits: int = 3,
    batch: int = 4,
) -> GradcheckResult:
    rng = np.random.default_rng(seed)
    ds = data_mod.synthetic_digits(seed, batch, n_qubits)
    # keep x +- h strictly inside [0, 1] so the pixel-range check stays happy
    x = 0.02 + 0.96 * ds.images.a
    labels = ds.labels
    model = HybridModel(n_qubits=n_qubits, n_classes=n_qubits, seed=seed)
    obj_w = nll_weights(labels, model.n_classes)

    loss0, param_grads = model.loss_and_param_grads(x, labels)
    input_grad = model.nll_input_grad(x, labels)

    max_rel_err: dict[str, float] = {}

    def check(name: str, base: np.ndarray, ad_grad: np.ndarray, write_back) -> None:
        flat = base.reshape(-1)
        ad = ad_grad.reshape(-1)
        worst = 0.0
        for i in _coords(rng, flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = write_back()
            flat[i] = orig - h
            f_minus = write_back()
            flat[i] = orig
            write_back()
            fd = (f_plus - f_minus) / (2.0 * h)
            err = abs(ad[i] - fd) / max(abs(ad[i]), abs(fd), REL_ERR_FLOOR)
            worst = max(worst, err)
        max_rel_err[name] = worst

    for name in model.param_names:
        base = model.params[name].a.copy()
        original = model.params[name]

        def write_back(name=name, base=base):
            model.params[name] = Tensor._wrap(base)
            return _loss(model, x, obj_w)

        check(name, base, param_grads[name].a, write_back)
        model.params[name] = original

    x_work = x.copy()
    check("x", x_work, input_grad, lambda: _loss(model, x_work, obj_w))

    passed = bool(loss0 >= 0.0 and max(max_rel_err.values()) < threshold)
    return GradcheckResult(max_rel_err=max_rel_err, passed=passed, threshold=threshold)
