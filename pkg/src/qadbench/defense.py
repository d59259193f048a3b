"""Adversarial-training defense: attack the training set, merge, retrain.

The defended model starts from the trained weights (retraining, not
reinitialization) and sees the clean and adversarial samples as one combined
dataset under the same optimizer settings. Post-defense evaluation attacks
are regenerated against the retrained model by the experiment layer; nothing
here replays pre-defense perturbations.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from .attacks import AttackChain, apply_chain
from .data import DataError, Dataset
from .tensor import Tensor

log = logging.getLogger("qadbench.defense")


@dataclass
class AugmentedDataset(Dataset):
    """Combined clean + adversarial dataset with per-sample origin tags."""

    origin: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        self.origin = np.asarray(self.origin)
        if self.origin.shape != (len(self),):
            raise DataError("origin tags must cover every sample")
        bad = set(np.unique(self.origin)) - {"clean", "adversarial"}
        if bad:
            raise DataError(f"unknown origin tags: {sorted(bad)}")


def generate_adversarial_dataset(
    model, data: Dataset, chain: AttackChain, batch_size: int = 256
) -> Dataset:
    """One adversarial sample per clean sample, labels preserved."""
    if len(data) == 0:
        raise DataError("cannot attack an empty dataset")
    images = data.images.a
    out = np.empty_like(images)
    for start in range(0, len(data), batch_size):
        stop = start + batch_size
        batch = Tensor._wrap(images[start:stop])
        out[start:stop] = apply_chain(chain, model, batch, data.labels[start:stop]).a
    return Dataset(Tensor._wrap(out), data.labels.copy(), data.n_classes)


def combine_datasets(clean: Dataset, adversarial: Dataset) -> AugmentedDataset:
    """Concatenate clean-first, tagging each sample's origin."""
    if clean.images.a.shape[1:] != adversarial.images.a.shape[1:]:
        raise DataError(
            f"image shape mismatch: {clean.images.a.shape[1:]} vs "
            f"{adversarial.images.a.shape[1:]}"
        )
    images = np.concatenate([clean.images.a, adversarial.images.a])
    labels = np.concatenate([clean.labels, adversarial.labels])
    origin = np.array(["clean"] * len(clean) + ["adversarial"] * len(adversarial))
    n_classes = max(clean.n_classes, adversarial.n_classes)
    return AugmentedDataset(Tensor._wrap(images), labels, n_classes, origin=origin)


def adversarial_training(
    model: nn.HybridModel,
    clean: Dataset,
    chain: AttackChain,
    config: nn.TrainConfig,
    retrain_epochs: int | None = None,
) -> tuple[nn.HybridModel, list[float]]:
    """Defend an already-trained model; returns (defended model, loss curve).

    The input model is left untouched. Retraining reuses the optimizer
    settings; `retrain_epochs` overrides the epoch count (default: same as
    the original training).
    """
    adversarial = generate_adversarial_dataset(model, clean, chain)
    combined = combine_datasets(clean, adversarial)
    log.info(
        "adversarial training: %d clean + %d adversarial = %d samples",
        len(clean),
        len(adversarial),
        len(combined),
    )
    retrain_config = dataclasses.replace(
        config, epochs=config.epochs if retrain_epochs is None else retrain_epochs
    )
    defended = model.clone()
    _, curve = nn.train(defended, combined, retrain_config)
    return defended, curve
