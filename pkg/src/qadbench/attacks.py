"""White-box gradient attacks: FGSM, PGD, CW-L2, and ordered chains of them.

Attacks only need gradient access, not model internals: any object with

    log_probs(x)                   -> [B, n_classes] log-probabilities
    nll_input_grad(x, labels)      -> dLoss/dx, same shape as x
    log_probs_and_weighted_input_grad(x, weights_fn)
                                   -> (log_probs, d sum(log_probs * W)/dx)
                                      with W = weights_fn(log_probs)

can be attacked (HybridModel provides all three). All images live in [0, 1];
every attack returns outputs in [0, 1].

Chain semantics: attacks run in list order, each starting from the previous
output, and every epsilon-constrained attack projects onto the L-infinity
ball around the chain's ORIGINAL input, so the compounded perturbation never
exceeds the constituent budgets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

KINDS = ("fgsm", "pgd", "cw")

# keeps arctanh finite at saturated pixels; round-trip error stays < 1e-9
_TANH_MARGIN = 1e-10


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    """Parameters for one attack. Fields irrelevant to `kind` are ignored."""

    kind: str
    epsilon: float = 0.2  # L-inf budget in pixel units (fgsm/pgd)
    alpha: float = 0.02  # pgd step size
    steps: int = 40  # pgd/cw iteration count
    random_start: bool = True  # pgd: seeded uniform start in the eps-ball
    c: float = 1.0  # cw margin weight
    kappa: float = 0.0  # cw confidence
    lr: float = 0.01  # cw descent rate
    seed: int = 0
    targeted: bool = False  # cw only
    target_class: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AttackError(f"unknown attack kind {self.kind!r}")
        if self.epsilon < 0:
            raise AttackError("epsilon must be >= 0")
        if self.alpha <= 0:
            raise AttackError("alpha must be > 0")
        if self.steps < 0:
            raise AttackError("steps must be >= 0")
        if self.c < 0 or self.kappa < 0 or self.lr <= 0:
            raise AttackError("cw settings must satisfy c >= 0, kappa >= 0, lr > 0")
        if self.targeted and self.target_class is None:
            raise AttackError("targeted attack needs target_class")


def fgsm_spec(epsilon: float = 0.2, seed: int = 0) -> AttackSpec:
    return AttackSpec("fgsm", epsilon=epsilon, seed=seed)


def pgd_spec(
    epsilon: float = 0.2,
    alpha: float = 0.02,
    steps: int = 40,
    random_start: bool = True,
    seed: int = 0,
) -> AttackSpec:
    return AttackSpec(
        "pgd", epsilon=epsilon, alpha=alpha, steps=steps, random_start=random_start, seed=seed
    )


def cw_spec(
    c: float = 1.0,
    kappa: float = 0.0,
    lr: float = 0.01,
    steps: int = 100,
    seed: int = 0,
    targeted: bool = False,
    target_class: int | None = None,
) -> AttackSpec:
    return AttackSpec(
        "cw",
        steps=steps,
        c=c,
        kappa=kappa,
        lr=lr,
        seed=seed,
        targeted=targeted,
        target_class=target_class,
    )


@dataclass(frozen=True)
class AttackChain:
    """Ordered attack composition; evaluation order is list order."""

    name: str
    specs: tuple[AttackSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.specs:
            raise AttackError(f"chain {self.name!r} is empty")


def _check_inputs(x: np.ndarray, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.shape != (x.shape[0],):
        raise AttackError(f"labels shape {labels.shape} != batch of {x.shape[0]}")


def _project(x: np.ndarray, anchor: np.ndarray, eps: float) -> np.ndarray:
    return np.clip(np.clip(x, anchor - eps, anchor + eps), 0.0, 1.0)


def fgsm(model, x: Tensor, labels, eps: float, anchor: np.ndarray | None = None) -> Tensor:
    """x + eps * sign(dLoss/dx), clipped to [0, 1] (sign(0) = 0)."""
    arr = x.a
    _check_inputs(arr, labels)
    if eps < 0:
        raise AttackError("epsilon must be >= 0")
    if eps == 0.0:
        return x.copy()
    g = model.nll_input_grad(arr, np.asarray(labels))
    out = np.clip(arr + eps * np.sign(g), 0.0, 1.0)
    if anchor is not None:
        out = _project(out, anchor, eps)
    return Tensor._wrap(out)


def pgd(
    model,
    x: Tensor,
    labels,
    spec: AttackSpec,
    anchor: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Iterated sign-gradient ascent projected into the eps-ball each step."""
    if spec.kind != "pgd":
        raise AttackError(f"pgd called with spec kind {spec.kind!r}")
    arr = x.a
    _check_inputs(arr, labels)
    labels = np.asarray(labels)
    x0 = arr if anchor is None else anchor
    if spec.epsilon == 0.0:
        return Tensor._wrap(_project(arr, x0, 0.0))
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    cur = arr.copy()
    if spec.random_start:
        cur = _project(cur + rng.uniform(-spec.epsilon, spec.epsilon, size=arr.shape), x0, spec.epsilon)
    for _ in range(spec.steps):
        g = model.nll_input_grad(cur, labels)
        cur = _project(cur + spec.alpha * np.sign(g), x0, spec.epsilon)
    return Tensor._wrap(cur)


def _margins(lp: np.ndarray, labels: np.ndarray, target: int | None):
    """Per-row (margin, competitor index).

    Untargeted: margin = lp[true] - max lp[other]; driving it below -kappa
    means misclassified with confidence. Targeted (toward `target`): margin =
    max lp[other] - lp[target]. Log-prob differences equal logit differences.
    """
    n = lp.shape[0]
    rows = np.arange(n)
    anchor_class = np.full(n, target) if target is not None else labels
    masked = lp.copy()
    masked[rows, anchor_class] = -np.inf
    other = masked.argmax(axis=1)
    diff = lp[rows, anchor_class] - lp[rows, other]
    if target is not None:
        diff = -diff
    return diff, other, anchor_class


def cw_l2(model, x: Tensor, labels, spec: AttackSpec) -> Tensor:
    """Carlini-Wagner L2 with the tanh box change of variables.

    Minimizes ||delta||^2 + c * max(margin, -kappa) by plain gradient descent
    in tanh space; returns each sample's best iterate by objective value.
    """
    if spec.kind != "cw":
        raise AttackError(f"cw_l2 called with spec kind {spec.kind!r}")
    arr = x.a
    _check_inputs(arr, labels)
    labels = np.asarray(labels)
    if spec.steps == 0:
        return x.copy()

    x0 = arr
    w = np.arctanh(2.0 * np.clip(x0, _TANH_MARGIN, 1.0 - _TANH_MARGIN) - 1.0)
    best_obj = np.full(arr.shape[0], np.inf)
    best_x = x0.copy()
    target = spec.target_class if spec.targeted else None
    axes = tuple(range(1, arr.ndim))
    rows = np.arange(arr.shape[0])
    sign = 1.0 if target is None else -1.0
    side = {}

    def margin_weights(lp: np.ndarray) -> np.ndarray:
        margin, other, anchor_class = _margins(lp, labels, target)
        side["margin"] = margin
        # margin subgradient is zero once the hinge saturates at -kappa
        active = margin > -spec.kappa
        wmat = np.zeros_like(lp)
        wmat[rows, anchor_class] = sign * spec.c * active
        wmat[rows, other] = -sign * spec.c * active
        return wmat

    def track_best(cur: np.ndarray, margin: np.ndarray) -> None:
        hinge = np.maximum(margin, -spec.kappa)
        obj = ((cur - x0) ** 2).sum(axis=axes) + spec.c * hinge
        better = obj < best_obj
        best_obj[better] = obj[better]
        best_x[better] = cur[better]

    for _ in range(spec.steps):
        cur = (np.tanh(w) + 1.0) / 2.0
        _, g = model.log_probs_and_weighted_input_grad(cur, margin_weights)
        track_best(cur, side["margin"])
        g_total = 2.0 * (cur - x0) + g
        w = w - spec.lr * g_total * 0.5 * (1.0 - np.tanh(w) ** 2)

    final = (np.tanh(w) + 1.0) / 2.0
    track_best(final, _margins(model.log_probs(final), labels, target)[0])
    return Tensor._wrap(best_x)


def apply_chain(chain: AttackChain, model, x: Tensor, labels) -> Tensor:
    """Sequential composition anchored at the original input."""
    x0 = x.a
    cur = x
    for spec in chain.specs:
        if spec.kind == "fgsm":
            cur = fgsm(model, cur, labels, spec.epsilon, anchor=x0)
        elif spec.kind == "pgd":
            cur = pgd(model, cur, labels, spec, anchor=x0)
        else:
            cur = cw_l2(model, cur, labels, spec)
    return Tensor._wrap(np.clip(cur.a, 0.0, 1.0))
