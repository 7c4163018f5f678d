"""Run configuration: one serializable description per experiment.

A RunSpec nests the architecture, schedule, loss, and dataset choices plus
the artifact plumbing (output directory, cadences, evaluation seed). It
round-trips through JSON as a fixpoint, so a run directory's config
snapshot can be re-parsed and re-serialized byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, is_dataclass
from pathlib import Path

from .data import AugmentSpec, load_cifar_binary, make_synthetic
from .errors import ConfigError
from .models import WrnConfig
from .trainer import LossConfig, TrainConfig

DATASET_KINDS = ("synthetic", "cifar")


@dataclass
class DatasetSpec:
    """Dataset selector: a synthetic generator or a CIFAR binary directory,
    plus the train-split augmentation switches."""

    kind: str = "synthetic"
    num_classes: int = 4
    n_per_class: int = 200
    size: int = 16
    seed: int = 0
    noise: float = 0.25
    path: str = ""
    classes_subset: tuple | None = None
    downscale: int = 1
    pad: int = 4
    random_crop: bool = False
    horizontal_flip: bool = False

    def problems(self) -> list:
        out = []
        if self.kind not in DATASET_KINDS:
            out.append(f"kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.kind == "synthetic":
            if self.num_classes < 2:
                out.append(f"num_classes must be >= 2, got {self.num_classes}")
            if self.n_per_class < 2:
                out.append(f"n_per_class must be >= 2, got {self.n_per_class}")
            if self.size < 8:
                out.append(f"size must be >= 8, got {self.size}")
            if self.noise < 0:
                out.append(f"noise must be >= 0, got {self.noise}")
        if self.kind == "cifar":
            if not self.path:
                out.append("cifar dataset needs a path")
            if self.downscale < 1:
                out.append(f"downscale must be >= 1, got {self.downscale}")
        if self.pad < 0:
            out.append(f"pad must be >= 0, got {self.pad}")
        return out

    def validate(self) -> "DatasetSpec":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self


def build_dataset(spec: DatasetSpec):
    """Materialize (train, test) handles for a DatasetSpec."""
    spec.validate()
    augment = AugmentSpec(pad=spec.pad, random_crop=spec.random_crop,
                          horizontal_flip=spec.horizontal_flip, seed=spec.seed)
    if spec.kind == "synthetic":
        train, test = make_synthetic(spec.num_classes, spec.n_per_class,
                                     size=spec.size, seed=spec.seed,
                                     noise=spec.noise)
    else:
        subset = list(spec.classes_subset) if spec.classes_subset else None
        train = load_cifar_binary(spec.path, split="train",
                                  classes_subset=subset, downscale=spec.downscale)
        test = load_cifar_binary(spec.path, split="test",
                                 classes_subset=subset, downscale=spec.downscale)
    train.augment = augment
    return train, test


@dataclass
class RunSpec:
    """Everything one run needs; see module docstring."""

    teacher: WrnConfig
    student: WrnConfig
    train: TrainConfig
    losses: LossConfig
    dataset: DatasetSpec
    out_dir: str
    teacher_checkpoint: str = ""
    metric_every: int = 1
    checkpoint_every: int = 0
    eval_seed: int = 0

    def validate(self) -> "RunSpec":
        problems = []
        for label, cfg in (("teacher", self.teacher), ("student", self.student),
                           ("train", self.train), ("losses", self.losses)):
            try:
                cfg.validate()
            except ConfigError as exc:
                problems += [f"{label}: {v}" for v in exc.violations]
        problems += [f"dataset: {v}" for v in self.dataset.problems()]
        if not self.out_dir:
            problems.append("out_dir must be non-empty")
        if self.metric_every < 0:
            problems.append(f"metric_every must be >= 0, got {self.metric_every}")
        if self.checkpoint_every < 0:
            problems.append(
                f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if self.dataset.kind == "synthetic":
            for label, cfg in (("teacher", self.teacher), ("student", self.student)):
                if cfg.input_size != self.dataset.size:
                    problems.append(
                        f"{label}: input_size {cfg.input_size} does not match "
                        f"dataset size {self.dataset.size}")
            for label, cfg in (("teacher", self.teacher), ("student", self.student)):
                if cfg.num_classes != self.dataset.num_classes:
                    problems.append(
                        f"{label}: num_classes {cfg.num_classes} does not match "
                        f"dataset num_classes {self.dataset.num_classes}")
        if problems:
            raise ConfigError(problems)
        return self


# -- serialization -----------------------------------------------------------------------


def spec_to_dict(spec: RunSpec) -> dict:
    return asdict(spec)


def spec_from_dict(raw: dict) -> RunSpec:
    """Rebuild a RunSpec from plain nested dicts (JSON shapes accepted)."""
    try:
        teacher = WrnConfig(**raw["teacher"])
        student = WrnConfig(**raw["student"])
        train_raw = dict(raw["train"])
        train_raw["lr_milestones"] = tuple(
            (int(e), float(f)) for e, f in train_raw.get("lr_milestones", ()))
        train = TrainConfig(**train_raw)
        losses_raw = dict(raw["losses"])
        losses_raw["positions"] = tuple(losses_raw.get("positions", ()))
        losses = LossConfig(**losses_raw)
        dataset_raw = dict(raw["dataset"])
        if dataset_raw.get("classes_subset") is not None:
            dataset_raw["classes_subset"] = tuple(dataset_raw["classes_subset"])
        dataset = DatasetSpec(**dataset_raw)
        extra = {k: raw[k] for k in ("teacher_checkpoint", "metric_every",
                                     "checkpoint_every", "eval_seed") if k in raw}
        spec = RunSpec(teacher=teacher, student=student, train=train,
                       losses=losses, dataset=dataset,
                       out_dir=raw["out_dir"], **extra)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError([f"malformed run config: {exc}"]) from exc
    problems = _leaf_type_problems(spec)
    if problems:
        raise ConfigError(problems)
    return spec


def _leaf_type_problems(spec: RunSpec) -> list:
    """JSON input can put a string or list where a number belongs, and
    dataclasses do not enforce their annotations; check every leaf against
    a reference instance so validators can assume sane types."""
    reference = RunSpec(teacher=WrnConfig(16, 2, 10), student=WrnConfig(16, 2, 10),
                        train=TrainConfig(), losses=LossConfig(),
                        dataset=DatasetSpec(), out_dir="runs")
    out = []
    for f in fields(reference):
        got, want = getattr(spec, f.name), getattr(reference, f.name)
        if is_dataclass(want):
            out += [f"{f.name}: {g.name} {p}" for g in fields(want)
                    if (p := _leaf_problem(getattr(got, g.name),
                                           getattr(want, g.name)))]
        elif problem := _leaf_problem(got, want):
            out.append(f"{f.name} {problem}")
    return out


def _leaf_problem(got, want) -> str:
    # bool subclasses int, so flags are matched first and never count as numbers
    if isinstance(want, bool):
        return "" if isinstance(got, bool) else f"must be a boolean, got {got!r}"
    if isinstance(want, int):
        ok = isinstance(got, int) and not isinstance(got, bool)
        return "" if ok else f"must be an integer, got {got!r}"
    if isinstance(want, float):
        ok = isinstance(got, (int, float)) and not isinstance(got, bool)
        return "" if ok else f"must be a number, got {got!r}"
    if isinstance(want, str):
        return "" if isinstance(got, str) else f"must be a string, got {got!r}"
    if isinstance(want, tuple):
        return "" if isinstance(got, tuple) else f"must be a list, got {got!r}"
    if want is None:
        ok = got is None or isinstance(got, tuple)
        return "" if ok else f"must be a list or null, got {got!r}"
    return ""


def spec_to_json(spec: RunSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2, sort_keys=True) + "\n"


def spec_to_file(spec: RunSpec, path) -> None:
    Path(path).write_text(spec_to_json(spec))


def spec_from_file(path) -> RunSpec:
    return spec_from_dict(json.loads(Path(path).read_text()))


def apply_overrides(spec: RunSpec, overrides) -> RunSpec:
    """Apply ``key=value`` strings with dotted keys, e.g. train.lr=0.05.

    Values parse as JSON when possible (numbers, booleans, lists), else as
    raw strings. Every bad override is reported, not just the first.
    """
    raw = spec_to_dict(spec)
    problems = []
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            problems.append(f"override {item!r} is not of the form key=value")
            continue
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                break
            node = node[part]
        else:
            if isinstance(node, dict) and parts[-1] in node:
                node[parts[-1]] = parsed
                continue
        problems.append(f"override key {key!r} does not exist in the config")
    if problems:
        raise ConfigError(problems)
    return spec_from_dict(raw)


# -- desk-scale presets ---------------------------------------------------------------------


def desk_dataset(seed: int = 0) -> DatasetSpec:
    """The synthetic 4-class 16x16 task every desk preset trains on."""
    return DatasetSpec(kind="synthetic", num_classes=4, n_per_class=200,
                       size=16, seed=seed, noise=0.35)


def desk_teacher_spec(out_dir: str, seed: int = 0) -> RunSpec:
    """Supervised pretraining of the desk teacher (WRN-16-2, base 8)."""
    teacher = WrnConfig(depth=16, width=2, num_classes=4,
                        base_channels=8, input_size=16)
    train = TrainConfig(epochs=20, batch_size=64, lr=0.1,
                        lr_milestones=((10, 0.2), (16, 0.2)), seed=seed)
    losses = LossConfig(alpha=0.0, beta=0.0, positions=(), baseline="none")
    return RunSpec(teacher=teacher, student=teacher, train=train, losses=losses,
                   dataset=desk_dataset(), out_dir=out_dir, metric_every=5)


def desk_distill_spec(out_dir: str, teacher_checkpoint: str, seed: int = 0,
                      alpha: float = 1.0, beta: float = 0.006) -> RunSpec:
    """Distillation onto the desk student (WRN-10-1, base 16).

    The student's group widths (16/32/64) equal the teacher's, so no
    channel adapters are involved and the statistics distance compares the
    two models through the identity map.

    The default beta is small because the output-drift term is an
    unnormalized squared distance between logit vectors while the
    matching term averages over channels; per unit of weight the drift
    gradient is roughly two orders of magnitude stronger, and large
    betas let it dominate early training."""
    teacher = WrnConfig(depth=16, width=2, num_classes=4,
                        base_channels=8, input_size=16)
    student = WrnConfig(depth=10, width=1, num_classes=4,
                        base_channels=16, input_size=16)
    train = TrainConfig(epochs=12, batch_size=64, lr=0.05,
                        lr_milestones=((6, 0.2), (10, 0.2)), seed=seed)
    losses = LossConfig(alpha=alpha, beta=beta, positions=("conv3", "conv4"),
                        baseline="none")
    return RunSpec(teacher=teacher, student=student, train=train, losses=losses,
                   dataset=desk_dataset(), out_dir=out_dir,
                   teacher_checkpoint=teacher_checkpoint, metric_every=4)
