"""Experiment orchestration: configs, end-to-end runs, reports, checkpoints.

Configs are plain-text `key = value` lines with `#` comments and dotted key
namespaces; unknown or duplicate keys are errors. Attack chains use a small
one-line syntax, attacks separated by `|`:

    chain.fgsm_pgd = fgsm eps=0.2 | pgd eps=0.2 alpha=0.02 steps=40

Every run is a pure function of (config, seed): data subsampling, weight
init, shuffling, and attack randomness all derive from the config seed, so
repeated runs produce byte-identical reports and checkpoints.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import defense, nn
from .attacks import AttackChain, AttackSpec
from .data import DataError, Dataset
from .nn import HybridModel, TrainConfig
from .tensor import Tensor

log = logging.getLogger("qadbench.experiment")

DATA_DIR_ENV = "QADBENCH_DATA_DIR"

CSV_HEADER = (
    "dataset,attack,clean_acc,no_def_attack_acc,def_attack_acc,"
    "clean_loss,no_def_attack_loss,def_attack_loss"
)

CHECKPOINT_MAGIC = b"QADB"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class ExperimentError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    seed: int = 7
    dataset_name: str = "synthetic"
    classes: tuple[int, ...] = (0, 1)
    train_size: int = 2000
    test_size: int = 500
    data_dir: str = "data"
    n_qubits: int = 2
    n_classes: int = 2
    per_qubit_angles: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    retrain_epochs: int | None = None
    attack_batch: int = 250
    # False: defended model is scored on the attacked test set generated
    # against the undefended model (the attacked data is one fixed dataset,
    # matching the reported defended accuracies). True: regenerate the attack
    # against the retrained weights instead (strictly adaptive evaluation).
    fresh_eval_attack: bool = False
    chains: dict[str, AttackChain] = field(default_factory=dict)

    def __post_init__(self):
        if self.dataset_name not in ("mnist", "emnist_digits", "synthetic"):
            raise ConfigError(f"unknown dataset {self.dataset_name!r}")
        if self.n_qubits < 1:
            raise ConfigError("model.n_qubits must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("model.n_classes must be >= 2")
        if self.dataset_name != "synthetic" and len(self.classes) != self.n_classes:
            raise ConfigError(
                f"model.n_classes={self.n_classes} does not match "
                f"{len(self.classes)} configured classes"
            )
        if self.attack_batch < 1:
            raise ConfigError("attack.batch_size must be >= 1")

    def resolved_data_dir(self) -> str:
        return os.environ.get(DATA_DIR_ENV) or self.data_dir


def parse_config_text(text: str) -> dict[str, str]:
    """`key = value` lines into a dict; comments, blanks, duplicates handled."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = stripped.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def parse_chain(name: str, text: str) -> AttackChain:
    """One-line chain syntax: `kind k=v k=v | kind k=v ...`."""
    specs = []
    for part in text.split("|"):
        tokens = part.split()
        if not tokens:
            raise ConfigError(f"chain {name!r}: empty attack segment")
        kind = tokens[0].lower()
        fields: dict[str, object] = {}
        for tok in tokens[1:]:
            if "=" not in tok:
                raise ConfigError(f"chain {name!r}: expected k=v, got {tok!r}")
            k, v = tok.split("=", 1)
            k = {"eps": "epsilon"}.get(k, k)
            try:
                if k in ("steps", "seed", "target_class"):
                    fields[k] = int(v)
                elif k in ("random_start", "targeted"):
                    fields[k] = v.lower() in ("1", "true", "yes", "on")
                elif k in ("epsilon", "alpha", "c", "kappa", "lr"):
                    fields[k] = float(v)
                else:
                    raise ConfigError(f"chain {name!r}: unknown attack field {k!r}")
            except ValueError as exc:
                raise ConfigError(f"chain {name!r}: bad value for {k}: {v!r}") from exc
        if kind == "cw" and "steps" not in fields:
            fields["steps"] = 100
        try:
            specs.append(AttackSpec(kind, **fields))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"chain {name!r}: {exc}") from exc
    return AttackChain(name, tuple(specs))


_INT_KEYS = {
    "seed": "seed",
    "dataset.train_size": "train_size",
    "dataset.test_size": "test_size",
    "model.n_qubits": "n_qubits",
    "model.n_classes": "n_classes",
    "attack.batch_size": "attack_batch",
    "defense.retrain_epochs": "retrain_epochs",
}
_TRAIN_INT = {"train.batch_size": "batch_size", "train.epochs": "epochs"}
_TRAIN_FLOAT = {
    "train.learning_rate": "learning_rate",
    "train.beta1": "beta1",
    "train.beta2": "beta2",
    "train.eps": "eps_hat",
}


def config_from_text(text: str, seed_override: int | None = None) -> ExperimentConfig:
    raw = parse_config_text(text)
    kwargs: dict[str, object] = {}
    train_kwargs: dict[str, object] = {}
    chains: dict[str, AttackChain] = {}
    for key, value in raw.items():
        try:
            if key in _INT_KEYS:
                kwargs[_INT_KEYS[key]] = int(value)
            elif key in _TRAIN_INT:
                train_kwargs[_TRAIN_INT[key]] = int(value)
            elif key in _TRAIN_FLOAT:
                train_kwargs[_TRAIN_FLOAT[key]] = float(value)
            elif key == "dataset.name":
                kwargs["dataset_name"] = value
            elif key == "dataset.classes":
                kwargs["classes"] = tuple(int(c) for c in value.split(",") if c.strip())
            elif key == "dataset.dir":
                kwargs["data_dir"] = value
            elif key == "model.per_qubit_angles":
                kwargs["per_qubit_angles"] = value.lower() in ("1", "true", "yes", "on")
            elif key == "defense.fresh_eval_attack":
                kwargs["fresh_eval_attack"] = value.lower() in ("1", "true", "yes", "on")
            elif key.startswith("chain."):
                name = key[len("chain.") :]
                chains[name] = parse_chain(name, value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc
    if seed_override is not None:
        kwargs["seed"] = seed_override
    try:
        train = TrainConfig(**train_kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    config = ExperimentConfig(train=train, chains=chains, **kwargs)
    # shuffling reuses the experiment seed unless the config pins one
    config.train.seed = config.seed + 1
    return config


_COMMON_CHAINS = """\
chain.fgsm_cw = fgsm eps={eps} | cw c=1.0 kappa=0.0 lr=0.01 steps=100
chain.fgsm_pgd = fgsm eps={eps} | pgd eps={eps} alpha=0.02 steps=40 seed=11
chain.cw_pgd = cw c=1.0 kappa=0.0 lr=0.01 steps=100 | pgd eps=0.05 alpha=0.01 steps=40 seed=12
"""

PRESETS: dict[str, str] = {
    # Table-4 fidelity: full binary MNIST subset, 10 epochs
    "paper-binary": (
        """\
seed = 7
dataset.name = mnist
dataset.classes = 0,1
dataset.train_size = 12665
dataset.test_size = 2115
model.n_qubits = 2
model.n_classes = 2
train.batch_size = 64
train.epochs = 10
train.learning_rate = 0.001
"""
        + _COMMON_CHAINS.format(eps=0.2)
    ),
    # scaled-down run for desk/CI use
    "desk": (
        """\
seed = 7
dataset.name = mnist
dataset.classes = 0,1
dataset.train_size = 2000
dataset.test_size = 500
model.n_qubits = 2
model.n_classes = 2
train.batch_size = 64
train.epochs = 3
train.learning_rate = 0.001
"""
        + _COMMON_CHAINS.format(eps=0.2)
    ),
    # dataset-free twin of `desk` (synthetic digit glyphs)
    "desk-synthetic": (
        """\
seed = 7
dataset.name = synthetic
dataset.train_size = 2000
dataset.test_size = 500
model.n_qubits = 2
model.n_classes = 2
train.batch_size = 64
train.epochs = 3
train.learning_rate = 0.001
"""
        + _COMMON_CHAINS.format(eps=0.2)
    ),
}


def config_from_preset(name: str, seed_override: int | None = None) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r} (have: {', '.join(sorted(PRESETS))})")
    return config_from_text(PRESETS[name], seed_override)


# ---------------------------------------------------------------------------
# data / model assembly


def load_experiment_data(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if config.dataset_name == "synthetic":
        train = data_mod.synthetic_digits(config.seed + 2, config.train_size, config.n_classes)
        test = data_mod.synthetic_digits(config.seed + 3, config.test_size, config.n_classes)
        return train, test
    data_dir = config.resolved_data_dir()
    if not data_mod.dataset_available(data_dir, config.dataset_name):
        raise DataError(
            f"{config.dataset_name} IDX files not found under {data_dir!r} "
            f"(set {DATA_DIR_ENV} or dataset.dir)"
        )
    out = []
    for split, size, sub_seed in (
        ("train", config.train_size, config.seed + 2),
        ("test", config.test_size, config.seed + 3),
    ):
        images_path, labels_path = data_mod.idx_paths(data_dir, config.dataset_name, split)
        ds = data_mod.load_idx_dataset(images_path, labels_path)
        ds = data_mod.filter_classes(ds, config.classes)
        if 0 < size < len(ds):
            ds = data_mod.subsample_stratified(ds, size, sub_seed)
        elif size > len(ds):
            raise DataError(f"requested {size} {split} samples, only {len(ds)} available")
        out.append(ds)
    return out[0], out[1]


def build_model(config: ExperimentConfig) -> HybridModel:
    return HybridModel(
        config.n_qubits,
        config.n_classes,
        seed=config.seed,
        per_qubit_angles=config.per_qubit_angles,
    )


def _get_chain(config: ExperimentConfig, chain_name: str) -> AttackChain:
    if chain_name not in config.chains:
        raise ConfigError(
            f"unknown chain {chain_name!r} (have: {', '.join(config.chains) or 'none'})"
        )
    return config.chains[chain_name]


# ---------------------------------------------------------------------------
# report rows


@dataclass
class ReportRow:
    dataset: str
    attack: str
    clean_acc: float
    no_def_acc: float
    clean_loss: float
    no_def_loss: float
    def_acc: float | None = None
    def_loss: float | None = None

    def validate(self) -> None:
        for name in ("clean_acc", "no_def_acc", "def_acc"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ExperimentError(f"{name}={v} outside [0, 1]")
        for name in ("clean_loss", "no_def_loss", "def_loss"):
            v = getattr(self, name)
            if v is not None and v < 0.0:
                raise ExperimentError(f"{name}={v} negative")


def _fmt(v: float | None) -> str:
    return "" if v is None else format(v, ".6g")


def rows_to_csv(rows: list[ReportRow]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        r.validate()
        lines.append(
            ",".join(
                [
                    r.dataset,
                    r.attack,
                    _fmt(r.clean_acc),
                    _fmt(r.no_def_acc),
                    _fmt(r.def_acc),
                    _fmt(r.clean_loss),
                    _fmt(r.no_def_loss),
                    _fmt(r.def_loss),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def rows_to_json(rows: list[ReportRow]) -> str:
    def jval(v):
        # mirror the CSV's 6-significant-digit values exactly
        return None if v is None else float(format(v, ".6g"))

    payload = [
        {
            "dataset": r.dataset,
            "attack": r.attack,
            "clean_acc": jval(r.clean_acc),
            "no_def_attack_acc": jval(r.no_def_acc),
            "def_attack_acc": jval(r.def_acc),
            "clean_loss": jval(r.clean_loss),
            "no_def_attack_loss": jval(r.no_def_loss),
            "def_attack_loss": jval(r.def_loss),
        }
        for r in rows
    ]
    for r in rows:
        r.validate()
    return json.dumps(payload, indent=2) + "\n"


def parse_report_csv(text: str) -> list[ReportRow]:
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != CSV_HEADER:
        raise ExperimentError("report CSV header mismatch")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 8:
            raise ExperimentError(f"report CSV row with {len(parts)} fields: {ln!r}")
        opt = lambda s: None if s == "" else float(s)
        rows.append(
            ReportRow(
                dataset=parts[0],
                attack=parts[1],
                clean_acc=float(parts[2]),
                no_def_acc=float(parts[3]),
                def_acc=opt(parts[4]),
                clean_loss=float(parts[5]),
                no_def_loss=float(parts[6]),
                def_loss=opt(parts[7]),
            )
        )
    return rows


def parse_report_json(text: str) -> list[ReportRow]:
    rows = []
    for item in json.loads(text):
        rows.append(
            ReportRow(
                dataset=item["dataset"],
                attack=item["attack"],
                clean_acc=item["clean_acc"],
                no_def_acc=item["no_def_attack_acc"],
                def_acc=item["def_attack_acc"],
                clean_loss=item["clean_loss"],
                no_def_loss=item["no_def_attack_loss"],
                def_loss=item["def_attack_loss"],
            )
        )
    return rows


def emit_report(rows: list[ReportRow], fmt: str, path) -> None:
    """Write rows as CSV or JSON; refuses empty row lists."""
    if not rows:
        raise ExperimentError("emit_report called with no rows")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown report format {fmt!r}")
    text = rows_to_csv(rows) if fmt == "csv" else rows_to_json(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def write_loss_curve(path, curve: list[float]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["epoch,mean_loss"]
    lines += [f"{i},{format(v, '.6g')}" for i, v in enumerate(curve, start=1)]
    path.write_text("\n".join(lines) + "\n")


def write_loss_chart_svg(path, curve: list[float], title: str) -> None:
    """Minimal deterministic SVG line chart of per-epoch loss."""
    width, height, pad = 640, 400, 50
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not curve:
        path.write_text(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
            f'<text x="20" y="30">{title}: empty curve</text></svg>\n'
        )
        return
    lo, hi = min(curve), max(curve)
    span = (hi - lo) or 1.0
    xs = np.linspace(pad, width - pad, num=len(curve))
    ys = [height - pad - (v - lo) / span * (height - 2 * pad) for v in curve]
    points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        f'<text x="{pad}" y="25" font-size="16">{title}</text>\n'
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>\n'
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>\n'
        f'<text x="4" y="{pad}" font-size="11">{format(hi, ".4g")}</text>\n'
        f'<text x="4" y="{height - pad}" font-size="11">{format(lo, ".4g")}</text>\n'
        f'<polyline fill="none" stroke="steelblue" stroke-width="2" points="{points}"/>\n'
        "</svg>\n"
    )
    path.write_text(svg)


# ---------------------------------------------------------------------------
# checkpoints
#
# format: b"QADB" | u32le version | records of
#   u32le name length | name utf-8 | u32le rank | u64le dims... | f64le data


def save_checkpoint(model: HybridModel, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    for name in model.param_names:
        arr = model.params[name].a
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        blob += struct.pack("<I", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<Q", dim)
        blob += arr.astype("<f8", copy=False).tobytes()
    path.write_bytes(bytes(blob))


def load_checkpoint(path) -> HybridModel:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ExperimentError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ExperimentError(f"{path}: unknown checkpoint version {version}")
    offset = 8
    params: dict[str, Tensor] = {}
    while offset < len(raw):
        try:
            (name_len,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            name = raw[offset : offset + name_len].decode("utf-8")
            if len(raw[offset : offset + name_len]) != name_len:
                raise struct.error("name out of bounds")
            offset += name_len
            (rank,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}Q", raw, offset)
            offset += 8 * rank
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            payload = raw[offset : offset + 8 * count]
            if len(payload) != 8 * count:
                raise struct.error("payload out of bounds")
            offset += 8 * count
        except struct.error as exc:
            raise ExperimentError(f"{path}: truncated checkpoint record ({exc})") from exc
        params[name] = Tensor._wrap(np.frombuffer(payload, dtype="<f8").reshape(dims))
    try:
        return HybridModel.from_params(params)
    except (ValueError, KeyError) as exc:
        raise ExperimentError(f"{path}: invalid parameter set ({exc})") from exc


# ---------------------------------------------------------------------------
# pipelines


class _StepLogger:
    """Numbered step boundaries with failure attribution."""

    def __init__(self, total: int, tag: str):
        self.total = total
        self.tag = tag
        self.index = 0

    def step(self, message: str) -> None:
        self.index += 1
        log.info("[%s] step %d/%d: %s", self.tag, self.index, self.total, message)

    def fail(self, exc: Exception) -> ExperimentError:
        return ExperimentError(
            f"{self.tag}: step {self.index}/{self.total} failed: {exc}"
        )


def _attack_test_set(model, test: Dataset, chain: AttackChain, config) -> Dataset:
    return defense.generate_adversarial_dataset(
        model, test, chain, batch_size=config.attack_batch
    )


def _artifact_paths(out_dir, chain_name: str):
    out = Path(out_dir)
    return {
        "train_curve": out / "curves" / f"{chain_name}__train.csv",
        "retrain_curve": out / "curves" / f"{chain_name}__retrain.csv",
        "train_svg": out / "curves" / f"{chain_name}__train.svg",
        "retrain_svg": out / "curves" / f"{chain_name}__retrain.svg",
        "trained_ckpt": out / "checkpoints" / f"{chain_name}__trained.ckpt",
        "defended_ckpt": out / "checkpoints" / f"{chain_name}__defended.ckpt",
    }


def run_no_defense(
    config: ExperimentConfig,
    chain_name: str,
    out_dir=None,
    plot: bool = False,
) -> tuple[ReportRow, list[float]]:
    """Eleven-step pipeline: train, measure clean, attack, measure attacked."""
    chain = _get_chain(config, chain_name)
    steps = _StepLogger(11, f"no-defense/{chain_name}")
    paths = _artifact_paths(out_dir, chain_name) if out_dir else None
    try:
        steps.step(f"load dataset ({config.dataset_name}, classes {list(config.classes)})")
        train_ds, test_ds = load_experiment_data(config)

        steps.step(
            f"define quantum circuit ({config.n_qubits} qubits, "
            "ry encoding + alternating theta/phi + cnot chain)"
        )

        steps.step(f"create hybrid model and attack chain {chain_name!r}")
        model = build_model(config)

        steps.step("fit hybrid model toward lowest loss")
        model, curve = nn.train(model, train_ds, config.train)

        steps.step("emit loss chart data")
        if paths:
            write_loss_curve(paths["train_curve"], curve)
            if plot:
                write_loss_chart_svg(paths["train_svg"], curve, f"{chain_name} training loss")

        steps.step("register trained model (no defense applied)")
        if paths:
            save_checkpoint(model, paths["trained_ckpt"])

        steps.step("evaluate hybrid model on clean test data")
        clean_acc, clean_loss = nn.evaluate_accuracy(model, test_ds)

        steps.step(f"pre-attack prediction accuracy = {clean_acc:.4f} (loss {clean_loss:.4g})")

        steps.step(f"apply compounded attack {chain_name!r} against the model")
        attacked = _attack_test_set(model, test_ds, chain, config)

        steps.step("evaluate hybrid model on attacked test data")
        adv_acc, adv_loss = nn.evaluate_accuracy(model, attacked)

        steps.step(f"post-attack prediction accuracy = {adv_acc:.4f} (loss {adv_loss:.4g})")
    except ExperimentError:
        raise
    except Exception as exc:
        raise steps.fail(exc) from exc

    row = ReportRow(
        dataset=config.dataset_name,
        attack=chain_name,
        clean_acc=clean_acc,
        no_def_acc=adv_acc,
        clean_loss=clean_loss,
        no_def_loss=adv_loss,
    )
    row.validate()
    return row, curve


def run_with_defense(
    config: ExperimentConfig,
    chain_name: str,
    out_dir=None,
    plot: bool = False,
) -> tuple[ReportRow, tuple[list[float], list[float]], dict[str, float]]:
    """Sixteen-step pipeline: no-defense measurements plus adversarial training.

    Returns (complete row, (training curve, retraining curve), extras) where
    extras carries the defended model's clean accuracy/loss.
    """
    chain = _get_chain(config, chain_name)
    steps = _StepLogger(16, f"defense/{chain_name}")
    paths = _artifact_paths(out_dir, chain_name) if out_dir else None
    try:
        steps.step(
            f"define quantum circuit ({config.n_qubits} qubits, "
            "ry encoding + alternating theta/phi + cnot chain)"
        )

        steps.step(f"create hybrid model and compounded attack chain {chain_name!r}")
        model = build_model(config)

        steps.step(f"load dataset ({config.dataset_name}) as the normal sample")
        train_ds, test_ds = load_experiment_data(config)

        steps.step("fit hybrid model toward lowest loss")
        model, curve = nn.train(model, train_ds, config.train)

        steps.step("emit loss chart data")
        if paths:
            write_loss_curve(paths["train_curve"], curve)
            if plot:
                write_loss_chart_svg(paths["train_svg"], curve, f"{chain_name} training loss")

        steps.step("register trained model")
        if paths:
            save_checkpoint(model, paths["trained_ckpt"])

        steps.step(f"apply compounded attack {chain_name!r} against the trained model")
        clean_acc, clean_loss = nn.evaluate_accuracy(model, test_ds)
        attacked_test = _attack_test_set(model, test_ds, chain, config)
        no_def_acc, no_def_loss = nn.evaluate_accuracy(model, attacked_test)
        log.info(
            "[defense/%s] undefended: clean %.4f / attacked %.4f",
            chain_name,
            clean_acc,
            no_def_acc,
        )

        steps.step("generate adversarial sample set from the training data")
        adv_train = defense.generate_adversarial_dataset(
            model, train_ds, chain, batch_size=config.attack_batch
        )

        steps.step("combine normal and adversarial samples into one dataset")
        combined = defense.combine_datasets(train_ds, adv_train)

        steps.step("load combined dataset and refit toward lowest loss")
        retrain_config = TrainConfig(
            batch_size=config.train.batch_size,
            epochs=config.retrain_epochs
            if config.retrain_epochs is not None
            else config.train.epochs,
            learning_rate=config.train.learning_rate,
            seed=config.train.seed + 1,
            beta1=config.train.beta1,
            beta2=config.train.beta2,
            eps_hat=config.train.eps_hat,
        )
        defended = model.clone()
        defended, retrain_curve = nn.train(defended, combined, retrain_config)
        if paths:
            write_loss_curve(paths["retrain_curve"], retrain_curve)
            if plot:
                write_loss_chart_svg(
                    paths["retrain_svg"], retrain_curve, f"{chain_name} retraining loss"
                )

        steps.step("register retrained model (defense applied)")
        if paths:
            save_checkpoint(defended, paths["defended_ckpt"])

        steps.step("evaluate defended model on clean test data")
        def_clean_acc, def_clean_loss = nn.evaluate_accuracy(defended, test_ds)

        steps.step(f"defended pre-attack accuracy = {def_clean_acc:.4f}")

        if config.fresh_eval_attack:
            steps.step(
                f"apply compounded attack {chain_name!r} regenerated against the defended model"
            )
            attacked_defended = _attack_test_set(defended, test_ds, chain, config)
        else:
            steps.step(
                f"apply compounded attack {chain_name!r} (attacked test data from the "
                "undefended model)"
            )
            attacked_defended = attacked_test

        steps.step("evaluate defended model on attacked test data")
        def_acc, def_loss = nn.evaluate_accuracy(defended, attacked_defended)

        steps.step(f"defended post-attack accuracy = {def_acc:.4f} (loss {def_loss:.4g})")
    except ExperimentError:
        raise
    except Exception as exc:
        raise steps.fail(exc) from exc

    row = ReportRow(
        dataset=config.dataset_name,
        attack=chain_name,
        clean_acc=clean_acc,
        no_def_acc=no_def_acc,
        clean_loss=clean_loss,
        no_def_loss=no_def_loss,
        def_acc=def_acc,
        def_loss=def_loss,
    )
    row.validate()
    extras = {"defended_clean_acc": def_clean_acc, "defended_clean_loss": def_clean_loss}
    return row, (curve, retrain_curve), extras


def run_table5(
    config: ExperimentConfig, out_dir, fmt: str = "csv", plot: bool = False
) -> list[ReportRow]:
    """Full grid: every configured chain through the 16-step defense pipeline."""
    if not config.chains:
        raise ConfigError("config defines no attack chains")
    rows = []
    for chain_name in config.chains:
        row, _, _ = run_with_defense(config, chain_name, out_dir=out_dir, plot=plot)
        rows.append(row)
    out = Path(out_dir)
    emit_report(rows, "csv", out / "report.csv")
    emit_report(rows, "json", out / "report.json")
    if fmt == "json":
        log.info("report written to %s", out / "report.json")
    else:
        log.info("report written to %s", out / "report.csv")
    return rows
