"""Training: the combined distillation objective, KD/AT baselines, SGD with
a milestone schedule, teacher pretraining, and full checkpointed runs.

One optimization step follows a fixed recipe: run the student with feature
capture, run the frozen teacher without gradients, compare channel
statistics at the configured positions, inject the student's statistics
into the teacher tail and penalize the output drift, then step on the
student and its channel adapters only.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_tensors, save_tensors
from .data import DatasetHandle, augment_batch
from .errors import ConfigError, ShapeError, UsageError
from .models import (HOOK_NAMES, BatchNorm2d, Conv2d, WrnConfig, build_wrn,
                     freeze)
from .ops import _log_softmax_data, cross_entropy, log_softmax, row_sum, softmax, sum_over_channels
from .stats import (DEFAULT_EPS, PairSpec, adain, adain_loss, channel_stats,
                    per_sample_l2_normalize, stats_match_total)
from .tensor import Tensor, no_grad

_SHUFFLE_TAG = 21
_ADAPTER_TAG = 22

BASELINES = ("none", "kd", "at")
INJECTION_MODES = ("separate", "simultaneous")
PRECISIONS = ("float32", "float64")


# -- configuration ------------------------------------------------------------------


@dataclass
class LossConfig:
    """Weights and switches of the combined training objective.

    ``alpha`` scales the statistics-matching term, ``beta`` the injected
    re-normalization term. ``baseline`` optionally adds a temperature-
    softened output-matching term (kd) or an attention-map term (at).
    ``adain_injection`` picks separate tail runs per position or one run
    restyling every position; ``adain_on_probs`` compares softmax outputs
    instead of logits.
    """

    alpha: float = 1.0
    beta: float = 1.0
    positions: tuple = ("conv4",)
    baseline: str = "none"
    kd_alpha: float = 0.9
    kd_temperature: float = 4.0
    at_weight: float = 1000.0
    adain_on_probs: bool = False
    adain_injection: str = "separate"

    def validate(self) -> "LossConfig":
        problems = []
        if self.alpha < 0:
            problems.append(f"alpha must be >= 0, got {self.alpha}")
        if self.beta < 0:
            problems.append(f"beta must be >= 0, got {self.beta}")
        bad = [p for p in self.positions if p not in HOOK_NAMES]
        if bad:
            problems.append(f"unknown positions {bad}, expected from {HOOK_NAMES}")
        if len(set(self.positions)) != len(tuple(self.positions)):
            problems.append(f"positions contain duplicates: {tuple(self.positions)}")
        if (self.alpha > 0 or self.beta > 0 or self.baseline == "at") \
                and not tuple(self.positions):
            problems.append("positions must be non-empty for the active losses")
        if self.baseline not in BASELINES:
            problems.append(f"baseline must be one of {BASELINES}, got {self.baseline!r}")
        if not 0.0 <= self.kd_alpha <= 1.0:
            problems.append(f"kd_alpha must be in [0, 1], got {self.kd_alpha}")
        if self.kd_temperature <= 0:
            problems.append(f"kd_temperature must be positive, got {self.kd_temperature}")
        if self.at_weight < 0:
            problems.append(f"at_weight must be >= 0, got {self.at_weight}")
        if self.adain_injection not in INJECTION_MODES:
            problems.append(
                f"adain_injection must be one of {INJECTION_MODES}, "
                f"got {self.adain_injection!r}")
        if problems:
            raise ConfigError(problems)
        return self


@dataclass
class TrainConfig:
    """Optimization schedule. ``lr_milestones`` are (epoch, factor) pairs
    applied multiplicatively once the epoch index reaches each milestone."""

    epochs: int = 60
    batch_size: int = 64
    lr: float = 0.1
    lr_milestones: tuple = ((30, 0.2), (45, 0.2))
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    precision: str = "float32"

    def validate(self) -> "TrainConfig":
        problems = []
        if self.epochs < 0:
            problems.append(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            problems.append(f"lr must be positive, got {self.lr}")
        epochs = [m[0] for m in self.lr_milestones]
        if any(e2 <= e1 for e1, e2 in zip(epochs, epochs[1:])):
            problems.append(
                f"lr_milestones epochs must be strictly increasing, got {epochs}")
        if any(m[1] <= 0 for m in self.lr_milestones):
            problems.append("lr_milestones factors must be positive")
        if not 0.0 <= self.momentum < 1.0:
            problems.append(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            problems.append(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.precision not in PRECISIONS:
            problems.append(
                f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        if problems:
            raise ConfigError(problems)
        return self

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64


def effective_lr(train: TrainConfig, epoch: int) -> float:
    lr = train.lr
    for milestone, factor in train.lr_milestones:
        if epoch >= milestone:
            lr *= factor
    return lr


# -- optimizer ----------------------------------------------------------------------


class SGD:
    """Momentum SGD: v = mu*v + (g + wd*p); p -= lr*v.

    Weight decay is skipped for parameters whose name ends in .bias, .gamma
    or .beta, so biases and normalization affine terms stay unregularized.
    """

    def __init__(self, named_params, lr: float, momentum: float = 0.9,
                 weight_decay: float = 5e-4):
        self._params = [(name, p) for name, p in named_params if p.requires_grad]
        names = [n for n, _ in self._params]
        if len(set(names)) != len(names):
            raise UsageError(f"duplicate parameter names: {sorted(names)}")
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = {name: np.zeros_like(p.data) for name, p in self._params}

    @staticmethod
    def _decayed(name: str) -> bool:
        return name.rsplit(".", 1)[-1] not in ("bias", "gamma", "beta")

    def zero_grad(self) -> None:
        for _, p in self._params:
            p.zero_grad()

    def step(self) -> None:
        for name, p in self._params:
            g = p.grad
            if self.weight_decay and self._decayed(name):
                g = g + p.data * np.asarray(self.weight_decay, dtype=p.data.dtype)
            v = self._velocity[name]
            np.multiply(v, np.asarray(self.momentum, dtype=v.dtype), out=v)
            np.add(v, g, out=v)
            p.data -= v * np.asarray(self.lr, dtype=v.dtype)

    def state_dict(self) -> dict:
        return {f"velocity.{name}": v.copy() for name, v in self._velocity.items()}

    def load_state_dict(self, state: dict) -> None:
        expected = {f"velocity.{name}" for name in self._velocity}
        if set(state) != expected:
            missing = sorted(expected - set(state))
            unexpected = sorted(set(state) - expected)
            raise UsageError(
                f"optimizer state mismatch (missing: {missing}; "
                f"unexpected: {unexpected})")
        for name, v in self._velocity.items():
            value = np.asarray(state[f"velocity.{name}"])
            if value.shape != v.shape:
                raise ShapeError(
                    f"velocity {name!r}: shape {value.shape} != {v.shape}")
            v[...] = value.astype(v.dtype)


# -- loss pieces --------------------------------------------------------------------


def _temperature_kl(student_logits: Tensor, teacher_logits: Tensor,
                    temperature: float) -> Tensor:
    """Mean KL(softmax(teacher/T) || softmax(student/T)); teacher constant."""
    inv = 1.0 / temperature
    log_ps = log_softmax(student_logits * inv)
    log_pt = _log_softmax_data(teacher_logits.data * np.asarray(
        inv, dtype=teacher_logits.data.dtype))
    pt = Tensor(np.exp(log_pt))
    n = student_logits.shape[0]
    return (pt * (Tensor(log_pt) - log_ps)).sum() * (1.0 / n)


def loss_kd(student_logits: Tensor, teacher_logits: Tensor, labels,
            kd_alpha: float = 0.9, temperature: float = 4.0) -> Tensor:
    """Temperature-softened output matching plus down-weighted hard CE."""
    if temperature <= 0:
        raise ConfigError([f"kd temperature must be positive, got {temperature}"])
    if student_logits.shape != teacher_logits.shape:
        raise ShapeError(
            f"loss_kd: logit shapes differ, {student_logits.shape} "
            f"vs {teacher_logits.shape}")
    kl = _temperature_kl(student_logits, teacher_logits, temperature)
    ce = cross_entropy(student_logits, labels)
    return kl * (kd_alpha * temperature * temperature) + ce * (1.0 - kd_alpha)


def loss_at(feature_s: Tensor, feature_t: Tensor) -> Tensor:
    """Attention transfer: distance between normalized channel-energy maps.

    Each map is the per-position sum of squared channel activations,
    flattened and L2-normalized per sample; the result is the batch mean of
    the Euclidean distance between the two maps. Channel counts may differ,
    spatial extents may not.
    """
    for f in (feature_s, feature_t):
        if f.ndim != 4:
            raise ShapeError(f"loss_at: expected (N, C, H, W), got {f.shape}")
    if feature_s.shape[0] != feature_t.shape[0] \
            or feature_s.shape[2:] != feature_t.shape[2:]:
        raise ShapeError(
            f"loss_at: spatial dims differ, {feature_s.shape} vs {feature_t.shape}")

    def attention_map(f: Tensor) -> Tensor:
        energy = sum_over_channels(f * f)
        n, h, w = energy.shape
        return per_sample_l2_normalize(energy.reshape((n, h * w)))

    d = attention_map(feature_s) - attention_map(feature_t)
    # the vanishing shift keeps the gradient finite at exactly-zero distance
    dist = (row_sum(d * d) + 1e-24).sqrt()
    return dist.sum() * (1.0 / dist.shape[0])


def _adain_term(teacher, teacher_logits: Tensor, styles: dict,
                positions: tuple, losses: LossConfig) -> Tensor:
    """Output drift of the teacher after student statistics are injected."""
    reference = softmax(teacher_logits) if losses.adain_on_probs else teacher_logits
    if losses.adain_injection == "separate":
        total = None
        for hook in positions:
            injected = adain(teacher.hooks[hook], styles[hook], DEFAULT_EPS)
            q = teacher.forward_from(hook, injected)
            if losses.adain_on_probs:
                q = softmax(q)
            term = adain_loss(reference, q)
            total = term if total is None else total + term
        return total
    # simultaneous: restyle every configured position in one tail run
    ordered = [h for h in HOOK_NAMES if h in positions]
    first = ordered[0]
    injected = adain(teacher.hooks[first], styles[first], DEFAULT_EPS)
    transforms = {h: (lambda f, s=styles[h]: adain(f, s, DEFAULT_EPS))
                  for h in ordered[1:]}
    q = teacher.forward_from(first, injected, transforms=transforms)
    if losses.adain_on_probs:
        q = softmax(q)
    return adain_loss(reference, q)


# -- the training step --------------------------------------------------------------


@dataclass
class StepReport:
    """Loss components of one step, as they enter the optimized sum.

    ``l_ce`` is the cross-entropy term including its weight (down-weighted
    by 1-kd_alpha when the kd baseline is active); ``total`` is the exact
    double-precision recombination l_ce + alpha*l_sm + beta*l_adain +
    l_baseline of the reported components.
    """

    l_ce: float
    l_sm: float
    l_adain: float
    l_baseline: float
    total: float


def train_step(student, teacher, batch, losses: LossConfig,
               optimizer: SGD | None = None,
               adapters: dict | None = None) -> StepReport:
    """One step of the combined objective; see the module docstring.

    Modes are left untouched so callers control train/eval behaviour.
    Gradients are zeroed at entry and populated by the backward pass;
    the optimizer steps only when one is given.
    """
    losses.validate()
    adapters = dict(adapters or {})
    needs_teacher = (losses.alpha > 0 or losses.beta > 0
                     or losses.baseline != "none")
    if needs_teacher:
        if teacher is None:
            raise UsageError("train_step: this loss configuration needs a teacher")
        if not getattr(teacher, "frozen", False):
            raise UsageError("train_step: teacher must be frozen")
    positions = tuple(losses.positions)
    for hook in positions:
        if hook not in student.hooks or (teacher is not None
                                         and hook not in teacher.hooks):
            raise ConfigError([f"position {hook!r} is not a hook on both models"])

    x, y = batch
    if isinstance(x, Tensor):
        xt = x
    else:
        dtype = next(iter(student.parameters())).data.dtype
        xt = Tensor(np.asarray(x, dtype=dtype))
    y = np.asarray(y)

    student.zero_grad()
    for adapter in adapters.values():
        adapter.zero_grad()

    capture = bool(positions) and needs_teacher
    logits_s = student(xt, capture=capture)
    ce = cross_entropy(logits_s, y)

    logits_t = None
    if needs_teacher:
        with no_grad():
            logits_t = teacher(xt, capture=capture)

    adapted = {}
    if losses.alpha > 0 or losses.beta > 0:
        for hook in positions:
            feature = student.hooks[hook]
            adapter = adapters.get(hook)
            adapted[hook] = adapter(feature) if adapter is not None else feature

    ce_weight = 1.0 - losses.kd_alpha if losses.baseline == "kd" else 1.0
    total = ce * ce_weight

    l_sm_value = 0.0
    if losses.alpha > 0:
        pairs = [(teacher.hooks[h], adapted[h], PairSpec(h, h, None))
                 for h in positions]
        l_sm = stats_match_total(pairs, DEFAULT_EPS)
        total = total + l_sm * losses.alpha
        l_sm_value = float(l_sm.item())

    l_adain_value = 0.0
    if losses.beta > 0:
        styles = {h: channel_stats(adapted[h], DEFAULT_EPS) for h in positions}
        l_adain = _adain_term(teacher, logits_t, styles, positions, losses)
        total = total + l_adain * losses.beta
        l_adain_value = float(l_adain.item())

    l_baseline_value = 0.0
    if losses.baseline == "kd":
        kl = _temperature_kl(logits_s, logits_t, losses.kd_temperature)
        l_baseline = kl * (losses.kd_alpha * losses.kd_temperature ** 2)
        total = total + l_baseline
        l_baseline_value = float(l_baseline.item())
    elif losses.baseline == "at":
        acc = None
        for hook in positions:
            term = loss_at(student.hooks[hook], teacher.hooks[hook])
            acc = term if acc is None else acc + term
        l_baseline = acc * losses.at_weight
        total = total + l_baseline
        l_baseline_value = float(l_baseline.item())

    total.backward()
    if optimizer is not None:
        optimizer.step()

    l_ce_value = float(ce.item()) * ce_weight
    report_total = float(l_ce_value + losses.alpha * l_sm_value
                         + losses.beta * l_adain_value + l_baseline_value)
    student.clear_hooks()
    if teacher is not None:
        teacher.clear_hooks()
    return StepReport(l_ce_value, l_sm_value, l_adain_value,
                      l_baseline_value, report_total)


# -- adapters and the distiller ------------------------------------------------------


def build_adapters(student, teacher, positions, seed: int,
                   dtype=np.float32) -> dict:
    """Trainable 1x1 convolutions for positions with mismatched channels."""
    adapters: dict = {}
    if teacher is None:
        return adapters
    rng = np.random.default_rng([seed, _ADAPTER_TAG])
    for hook in HOOK_NAMES:  # fixed order keeps the rng stream stable
        if hook not in positions:
            continue
        cs = student.config.group_channels(hook)
        ct = teacher.config.group_channels(hook)
        if cs != ct:
            adapters[hook] = Conv2d(cs, ct, 1, bias=True, rng=rng, dtype=dtype)
    return adapters


class Distiller:
    """One student-training setup: frozen teacher, student, channel
    adapters where the paired positions disagree on width, and a single
    optimizer over the student and adapter parameters."""

    def __init__(self, student, teacher, losses: LossConfig,
                 train: TrainConfig, adapter_seed: int | None = None):
        losses.validate()
        train.validate()
        if teacher is not None and not teacher.frozen:
            raise UsageError("Distiller: teacher must be frozen")
        self.student = student
        self.teacher = teacher
        self.losses = losses
        self.train_config = train
        seed = train.seed if adapter_seed is None else adapter_seed
        self.adapters = build_adapters(student, teacher, tuple(losses.positions),
                                       seed=seed, dtype=train.dtype)
        named = list(student.named_parameters())
        for hook in sorted(self.adapters):
            named += [(f"adapter.{hook}.{n}", p)
                      for n, p in self.adapters[hook].named_parameters()]
        self.optimizer = SGD(named, lr=train.lr, momentum=train.momentum,
                             weight_decay=train.weight_decay)

    def train_step(self, batch) -> StepReport:
        return train_step(self.student, self.teacher, batch, self.losses,
                          optimizer=self.optimizer, adapters=self.adapters)

    def adapter_state(self) -> dict:
        state = {}
        for hook in sorted(self.adapters):
            for name, value in self.adapters[hook].state_dict().items():
                state[f"adapter.{hook}.{name}"] = value
        return state

    def load_adapter_state(self, state: dict) -> None:
        for hook in sorted(self.adapters):
            prefix = f"adapter.{hook}."
            sub = {k[len(prefix):]: v for k, v in state.items()
                   if k.startswith(prefix)}
            self.adapters[hook].load_state_dict(sub)


# -- batching and supervised pretraining ----------------------------------------------


def iterate_batches(data: DatasetHandle, batch_size: int, seed: int, epoch: int):
    """Shuffled, augmented minibatches; order is pure in (seed, epoch)."""
    perm = np.random.default_rng([seed, epoch, _SHUFFLE_TAG]).permutation(len(data))
    for start in range(0, len(perm), batch_size):
        idx = perm[start:start + batch_size]
        yield augment_batch(data, idx, epoch), data.labels[idx]


def _plain_top1(model, data: DatasetHandle, batch_size: int) -> float:
    model.eval()
    dtype = next(iter(model.parameters())).data.dtype
    hits = 0
    with no_grad():
        for start in range(0, len(data), batch_size):
            x = Tensor(data.samples[start:start + batch_size].astype(dtype))
            logits = model(x)
            hits += int((np.argmax(logits.data, axis=1)
                         == data.labels[start:start + batch_size]).sum())
    return hits / max(1, len(data))


def pretrain_teacher(config: WrnConfig, train: TrainConfig, data: DatasetHandle,
                     eval_data: DatasetHandle | None = None,
                     accuracy_floor: float = 0.0):
    """Supervised training; returns (frozen model, top-1 accuracy).

    Accuracy is measured on ``eval_data`` when given, else on ``data``.
    Falling below ``accuracy_floor`` warns instead of failing, so a bad
    seed still yields a usable artifact.
    """
    train.validate()
    model = build_wrn(config, seed=train.seed, dtype=train.dtype)
    losses = LossConfig(alpha=0.0, beta=0.0, positions=(), baseline="none")
    optimizer = SGD(model.named_parameters(), lr=train.lr,
                    momentum=train.momentum, weight_decay=train.weight_decay)
    for epoch in range(train.epochs):
        model.train(True)
        optimizer.lr = effective_lr(train, epoch)
        for xb, yb in iterate_batches(data, train.batch_size, train.seed, epoch):
            train_step(model, None, (xb, yb), losses, optimizer=optimizer)
    freeze(model)
    accuracy = _plain_top1(model, eval_data if eval_data is not None else data,
                           train.batch_size)
    if accuracy < accuracy_floor:
        warnings.warn(
            f"pretrained accuracy {accuracy:.4f} is below the floor "
            f"{accuracy_floor:.4f}", stacklevel=2)
    return model, accuracy


# -- full runs ------------------------------------------------------------------------


@dataclass
class RunReport:
    out_dir: str
    final: dict
    history: list
    checkpoint_path: str


def load_teacher(config: WrnConfig, checkpoint, dtype=np.float32):
    """Build, load and freeze a teacher from a checkpoint file.

    Adapter/optimizer/metadata entries that a distillation checkpoint may
    carry are ignored, so a distilled student can serve as a teacher.
    """
    path = Path(checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"teacher checkpoint not found: {path}")
    model = build_wrn(config, seed=0, dtype=dtype)
    state = {k: v for k, v in load_tensors(path).items()
             if not k.startswith(("adapter.", "optim.", "meta."))}
    model.load_state_dict(state)
    return freeze(model)


def _save_resume(path, next_epoch: int, student, distiller: Distiller) -> None:
    state = {"meta.epoch": np.array(float(next_epoch), dtype=np.float32)}
    for name, value in student.state_dict().items():
        state[f"model.{name}"] = value
    state.update(distiller.adapter_state())
    for name, value in distiller.optimizer.state_dict().items():
        state[f"optim.{name}"] = value
    save_tensors(path, state)


def _load_resume(path, student, distiller: Distiller) -> int:
    state = load_tensors(path)
    student.load_state_dict(
        {k[len("model."):]: v for k, v in state.items() if k.startswith("model.")})
    distiller.load_adapter_state(
        {k: v for k, v in state.items() if k.startswith("adapter.")})
    distiller.optimizer.load_state_dict(
        {k[len("optim."):]: v for k, v in state.items() if k.startswith("optim.")})
    return int(state["meta.epoch"])


def run_distillation(spec, resume: bool = False) -> RunReport:
    """Execute one full training run described by ``spec``.

    Writes into spec.out_dir: config.json (snapshot), metrics.jsonl (one
    record per evaluated epoch), resume.sdt at the checkpoint cadence,
    model.sdt (final student + adapters), summary.json, and training-curve
    figures. With ``resume`` and an existing resume.sdt, training continues
    from the saved epoch and reproduces an uninterrupted run bitwise.
    """
    from . import metrics as metrics_mod
    from .config import build_dataset, spec_to_file

    spec.validate()
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec_to_file(spec, out / "config.json")

    train_cfg, losses = spec.train, spec.losses
    train_data, test_data = build_dataset(spec.dataset)

    needs_teacher = (losses.alpha > 0 or losses.beta > 0
                     or losses.baseline != "none")
    teacher = None
    if spec.teacher_checkpoint:
        teacher = load_teacher(spec.teacher, spec.teacher_checkpoint,
                               dtype=train_cfg.dtype)
    elif needs_teacher:
        raise FileNotFoundError(
            "this loss configuration needs a teacher checkpoint, "
            "but none was configured")

    student = build_wrn(spec.student, seed=train_cfg.seed, dtype=train_cfg.dtype)
    distiller = Distiller(student, teacher, losses, train_cfg)

    metrics_path = out / "metrics.jsonl"
    resume_path = out / "resume.sdt"
    start_epoch = 0
    history: list = []
    if resume and resume_path.exists():
        start_epoch = _load_resume(resume_path, student, distiller)
        if metrics_path.exists():
            history = [json.loads(line)
                       for line in metrics_path.read_text().splitlines() if line]
            history = [r for r in history if r["epoch"] < start_epoch]
        metrics_path.write_text(
            "".join(json.dumps(r) + "\n" for r in history))
    else:
        metrics_path.write_text("")

    def evaluate(epoch: int, means) -> dict:
        record = metrics_mod.evaluate_run(student, teacher, test_data,
                                          distiller.adapters, spec, epoch)
        record["l_ce"] = float(means[0])
        record["l_sm"] = float(means[1])
        record["l_adain"] = float(means[2])
        record["l_baseline"] = float(means[3])
        record["total"] = float(means[4])
        record["lr"] = effective_lr(train_cfg, epoch)
        history.append(record)
        with metrics_path.open("a") as fh:
            fh.write(json.dumps(record) + "\n")
        return record

    if train_cfg.epochs == 0:
        # nothing will train; mark normalization usable for the evaluation
        for m in student.modules():
            if isinstance(m, BatchNorm2d):
                m._has_stats = True
        evaluate(0, np.zeros(5))

    for epoch in range(start_epoch, train_cfg.epochs):
        student.train(True)
        for adapter in distiller.adapters.values():
            adapter.train(True)
        distiller.optimizer.lr = effective_lr(train_cfg, epoch)
        sums = np.zeros(5)
        steps = 0
        for xb, yb in iterate_batches(train_data, train_cfg.batch_size,
                                      train_cfg.seed, epoch):
            report = distiller.train_step((xb, yb))
            sums += (report.l_ce, report.l_sm, report.l_adain,
                     report.l_baseline, report.total)
            steps += 1
        means = sums / max(1, steps)
        last = epoch == train_cfg.epochs - 1
        if spec.metric_every > 0 and ((epoch + 1) % spec.metric_every == 0 or last):
            evaluate(epoch, means)
        if spec.checkpoint_every > 0 and (epoch + 1) % spec.checkpoint_every == 0 \
                and not last:
            _save_resume(resume_path, epoch + 1, student, distiller)

    checkpoint_path = out / "model.sdt"
    final_state = dict(student.state_dict())
    final_state.update(distiller.adapter_state())
    save_tensors(checkpoint_path, final_state)

    final = history[-1] if history else {}
    summary = {"out_dir": str(out), "final": final,
               "epochs": train_cfg.epochs, "checkpoint": checkpoint_path.name}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")

    if history:
        from . import figures
        figures.save_training_curves(history, out / "figures" / "curves.png")

    return RunReport(str(out), final, history, str(checkpoint_path))
