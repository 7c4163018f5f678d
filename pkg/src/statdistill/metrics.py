"""Evaluation diagnostics: accuracy, divergence from the teacher, channel
statistics distance, and clustering quality of pooled features.

All computation here is read-only over models in eval mode. The
STATDISTILL_THREADS environment variable caps how many evaluation batches
run concurrently; results are merged in batch order, so the outputs do not
depend on the thread count.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError, UsageError
from .models import HOOK_NAMES, Conv2d
from .ops import _log_softmax_data
from .stats import DEFAULT_EPS, channel_stats, stats_match_loss
from .tensor import Tensor, no_grad

EVAL_BATCH = 64
_PROBE_TAG = 31
_KMEANS_TAG = 32


@dataclass
class MetricsRecord:
    """One epoch's evaluation snapshot; ranges are checked on construction.

    ``kl_with_teacher`` is KL(teacher || student) at temperature 1;
    ``kl_student_teacher`` is the reverse direction, reported so the
    unconventional one is never mistaken for the headline number.
    """

    top1: float
    top5: float
    ce_with_labels: float
    kl_with_teacher: float
    stats_distance: float
    nmi: float
    epoch: int
    kl_student_teacher: float = 0.0

    def __post_init__(self):
        for name in ("top1", "top5", "ce_with_labels", "kl_with_teacher",
                     "stats_distance", "nmi", "kl_student_teacher"):
            setattr(self, name, float(getattr(self, name)))
        self.epoch = int(self.epoch)
        problems = []
        if not 0.0 <= self.top1 <= self.top5 <= 1.0:
            problems.append(f"need 0 <= top1 <= top5 <= 1, got {self.top1}, {self.top5}")
        if not 0.0 <= self.nmi <= 1.0:
            problems.append(f"nmi must be in [0, 1], got {self.nmi}")
        if self.kl_with_teacher < 0 or self.kl_student_teacher < 0:
            problems.append("kl divergences must be >= 0")
        if self.ce_with_labels < 0:
            problems.append(f"cross-entropy must be >= 0, got {self.ce_with_labels}")
        if self.stats_distance < 0:
            problems.append(f"stats_distance must be >= 0, got {self.stats_distance}")
        if self.epoch < 0:
            problems.append(f"epoch must be >= 0, got {self.epoch}")
        if problems:
            raise InputError("; ".join(problems))

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "top1": self.top1,
            "top5": self.top5,
            "ce_with_labels": self.ce_with_labels,
            "kl_with_teacher": self.kl_with_teacher,
            "kl_student_teacher": self.kl_student_teacher,
            "stats_distance": self.stats_distance,
            "nmi": self.nmi,
        }


# -- batched evaluation plumbing -------------------------------------------------------


def _thread_count() -> int:
    raw = os.environ.get("STATDISTILL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _run_chunks(work, n_items: int, batch_size: int) -> list:
    """Apply ``work`` to [start, stop) chunks, possibly concurrently,
    returning results in chunk order regardless of thread count."""
    chunks = [(start, min(start + batch_size, n_items))
              for start in range(0, n_items, batch_size)]
    threads = _thread_count()
    with no_grad():
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(lambda c: work(*c), chunks))
        return [work(*c) for c in chunks]


def _model_dtype(model):
    return next(iter(model.parameters())).data.dtype


def _eval_mode(model):
    was_training = any(m.training for m in model.modules())
    model.eval()
    return was_training


def _forward_dataset(model, data, want_hooks=(), batch_size: int = EVAL_BATCH):
    """Logits and globally pooled hook features over the whole dataset."""
    dtype = _model_dtype(model)

    def work(start, stop):
        x = Tensor(data.samples[start:stop].astype(dtype))
        logits, hooks = model.forward_collect(x)
        pooled = {h: hooks[h].data.mean(axis=(2, 3)) for h in want_hooks}
        return logits.data, pooled

    was_training = _eval_mode(model)
    results = _run_chunks(work, len(data), batch_size)
    if was_training:
        model.train(True)
    logits = np.concatenate([r[0] for r in results])
    features = {h: np.concatenate([r[1][h] for r in results]) for h in want_hooks}
    return logits, features


# -- scalar diagnostics ------------------------------------------------------------------


def _as_array(logits) -> np.ndarray:
    return logits.data if isinstance(logits, Tensor) else np.asarray(logits)


def kl_teacher_student(teacher_logits, student_logits) -> float:
    """Mean KL(softmax(teacher) || softmax(student)) in nats, temperature 1."""
    t = _as_array(teacher_logits).astype(np.float64)
    s = _as_array(student_logits).astype(np.float64)
    if t.shape != s.shape:
        raise ShapeError(f"kl: logit shapes differ, {t.shape} vs {s.shape}")
    log_pt = _log_softmax_data(t)
    log_ps = _log_softmax_data(s)
    value = float((np.exp(log_pt) * (log_pt - log_ps)).sum(axis=1).mean())
    # Gibbs' inequality guarantees >= 0; rounding can dip a hair below
    return max(0.0, value)


def accuracy(logits, labels) -> tuple:
    """(top1, top5) with deterministic tie-breaking: lowest index wins."""
    arr = _as_array(logits)
    labels = np.asarray(labels)
    if arr.ndim != 2 or arr.shape[0] != len(labels):
        raise ShapeError(f"accuracy: got logits {arr.shape} for {len(labels)} labels")
    order = np.argsort(-arr, axis=1, kind="stable")
    k = min(5, arr.shape[1])
    top1 = float((order[:, 0] == labels).mean())
    top5 = float((order[:, :k] == labels[:, None]).any(axis=1).mean())
    return top1, top5


def ce_with_labels(logits, labels) -> float:
    """Mean cross-entropy in nats, computed in double precision."""
    arr = _as_array(logits).astype(np.float64)
    labels = np.asarray(labels)
    log_p = _log_softmax_data(arr)
    return float(-log_p[np.arange(len(labels)), labels].mean())


def probe_adapter(in_channels: int, out_channels: int, seed: int,
                  dtype=np.float32) -> Conv2d:
    """A fixed random 1x1 adapter for comparing mismatched-width models
    when no trained adapter exists; fully determined by the seed."""
    rng = np.random.default_rng([seed, _PROBE_TAG, in_channels, out_channels])
    return Conv2d(in_channels, out_channels, 1, bias=True, rng=rng, dtype=dtype)


def stats_distance(teacher, student, data, position: str, adapter=None,
                   probe_seed: int = 0, batch_size: int = EVAL_BATCH) -> float:
    """Mean over the dataset of the channel-statistics matching loss at
    ``position``, with the student feature passed through an adapter when
    channel counts differ (a seeded probe adapter if none is supplied)."""
    if position not in HOOK_NAMES:
        raise UsageError(f"unknown hook {position!r}, expected one of {HOOK_NAMES}")
    ct = teacher.config.group_channels(position)
    cs = student.config.group_channels(position)
    if adapter is None and cs != ct:
        adapter = probe_adapter(cs, ct, probe_seed, dtype=_model_dtype(student))

    t_dtype, s_dtype = _model_dtype(teacher), _model_dtype(student)

    def work(start, stop):
        xt = Tensor(data.samples[start:stop].astype(t_dtype))
        xs = xt if s_dtype == t_dtype else Tensor(data.samples[start:stop].astype(s_dtype))
        _, hooks_t = teacher.forward_collect(xt)
        _, hooks_s = student.forward_collect(xs)
        fs = hooks_s[position]
        if adapter is not None:
            fs = adapter(fs)
        if fs.shape[1] != ct:
            raise ShapeError(
                f"stats_distance: adapter output has {fs.shape[1]} channels, "
                f"teacher has {ct}")
        loss = stats_match_loss(channel_stats(hooks_t[position], DEFAULT_EPS),
                                channel_stats(fs, DEFAULT_EPS))
        return float(loss.item()), stop - start

    was_training_t = _eval_mode(teacher)
    was_training_s = _eval_mode(student)
    results = _run_chunks(work, len(data), batch_size)
    if was_training_t:
        teacher.train(True)
    if was_training_s:
        student.train(True)
    total = sum(value * n for value, n in results)
    return float(total / max(1, len(data)))


# -- clustering ---------------------------------------------------------------------------


def kmeans(features, k: int, seed: int, iters: int = 50) -> np.ndarray:
    """Plain k-means with k-means++ seeding and deterministic tie handling.

    Stops early once assignments reach a fixpoint. An emptied cluster is
    re-seeded with the point farthest from its current center, so every
    run with the same seed takes the same path.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"kmeans: expected (N, D) features, got {x.shape}")
    n = len(x)
    if k < 1:
        raise InputError(f"k must be >= 1, got {k}")
    if n < k:
        raise InputError(f"kmeans needs at least {k} samples, got {n}")

    rng = np.random.default_rng([seed, _KMEANS_TAG])
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[int(rng.integers(0, n))]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            choice = int(rng.choice(n, p=d2 / total))
        else:
            choice = int(rng.integers(0, n))
        centers[j] = x[choice]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))

    assign = None
    for _ in range(iters):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = dist.argmin(axis=1)
        taken: list = []
        for c in range(k):
            if not (new_assign == c).any():
                scores = dist[np.arange(n), new_assign].copy()
                scores[taken] = -1.0  # never steal a point twice per pass
                far = int(scores.argmax())
                new_assign[far] = c
                taken.append(far)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            centers[c] = x[assign == c].mean(axis=0)
    return assign


def nmi(labels_a, labels_b) -> float:
    """Normalized mutual information with arithmetic-mean normalization.

    Accumulation runs over the contingency table in row-major order so the
    value is reproducible bit for bit. Two trivial single-cluster
    partitions count as perfectly aligned (1.0).
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"nmi: label shapes differ, {a.shape} vs {b.shape}")
    n = len(a)
    if n == 0:
        raise InputError("nmi: empty label arrays")
    ua, inv_a = np.unique(a, return_inverse=True)
    ub, inv_b = np.unique(b, return_inverse=True)
    table = np.zeros((len(ua), len(ub)), dtype=np.int64)
    np.add.at(table, (inv_a, inv_b), 1)

    row = table.sum(axis=1)
    col = table.sum(axis=0)
    mi = 0.0
    for i in range(len(ua)):
        for j in range(len(ub)):
            c = table[i, j]
            if c:
                pij = c / n
                mi += pij * np.log(pij * n * n / (row[i] * col[j]))
    ha = 0.0
    for i in range(len(ua)):
        ha -= (row[i] / n) * np.log(row[i] / n)
    hb = 0.0
    for j in range(len(ub)):
        hb -= (col[j] / n) * np.log(col[j] / n)
    denom = (ha + hb) / 2.0
    if denom == 0.0:
        return 1.0
    return min(1.0, max(0.0, mi / denom))


def nmi_features(model, data, position: str, k: int, seed: int,
                 batch_size: int = EVAL_BATCH) -> float:
    """NMI between ground truth and k-means clusters of pooled features."""
    if position not in HOOK_NAMES:
        raise UsageError(f"unknown hook {position!r}, expected one of {HOOK_NAMES}")
    if k < 2:
        raise InputError(f"k must be >= 2, got {k}")
    if len(data) < k:
        raise InputError(f"need at least {k} samples, got {len(data)}")
    _, features = _forward_dataset(model, data, want_hooks=(position,),
                                   batch_size=batch_size)
    clusters = kmeans(features[position], k, seed)
    return nmi(clusters, data.labels)


# -- feature export ------------------------------------------------------------------------


def export_features(model, data, position: str, path,
                    batch_size: int = EVAL_BATCH) -> None:
    """Write pooled features as CSV: header label,f0,...,f{C-1}, one row
    per sample, values with 9 significant digits (float32 round-trips)."""
    if position not in HOOK_NAMES:
        raise UsageError(f"unknown hook {position!r}, expected one of {HOOK_NAMES}")
    _, features = _forward_dataset(model, data, want_hooks=(position,),
                                   batch_size=batch_size)
    pooled = features[position]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{i}" for i in range(pooled.shape[1])])
        for label, row in zip(data.labels, pooled):
            writer.writerow([int(label)] + ["%.9g" % v for v in row])


def load_features(path):
    """Read an exported feature CSV back as (labels, float32 features)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "label":
            raise InputError(f"{path}: not a feature export (header {header!r})")
        labels, rows = [], []
        for line in reader:
            labels.append(int(line[0]))
            rows.append([np.float32(v) for v in line[1:]])
    return np.asarray(labels, dtype=np.int64), np.asarray(rows, dtype=np.float32)


# -- full-record evaluation ----------------------------------------------------------------


def evaluate_model(student, teacher, data, epoch: int = 0, adapters=None,
                   eval_seed: int = 0, position: str = "conv4",
                   batch_size: int = EVAL_BATCH) -> MetricsRecord:
    """Assemble the full diagnostic record for one model state.

    Teacher-relative fields are zero when no teacher is given. The
    statistics distance always uses ``position`` so runs trained with
    different loss positions stay comparable.
    """
    adapters = adapters or {}
    logits_s, features = _forward_dataset(student, data, want_hooks=(position,),
                                          batch_size=batch_size)
    top1, top5 = accuracy(logits_s, data.labels)
    ce = ce_with_labels(logits_s, data.labels)

    kl_ts = kl_st = distance = 0.0
    if teacher is not None:
        logits_t, _ = _forward_dataset(teacher, data, batch_size=batch_size)
        kl_ts = kl_teacher_student(logits_t, logits_s)
        kl_st = kl_teacher_student(logits_s, logits_t)
        distance = stats_distance(teacher, student, data, position,
                                  adapter=adapters.get(position),
                                  probe_seed=eval_seed, batch_size=batch_size)

    clusters = kmeans(features[position], k=data.num_classes, seed=eval_seed)
    nmi_value = nmi(clusters, data.labels)

    return MetricsRecord(top1=top1, top5=top5, ce_with_labels=ce,
                         kl_with_teacher=kl_ts, stats_distance=distance,
                         nmi=nmi_value, epoch=epoch,
                         kl_student_teacher=kl_st)


def evaluate_run(student, teacher, data, adapters, spec, epoch: int) -> dict:
    """The per-epoch stream record for a run described by ``spec``."""
    record = evaluate_model(student, teacher, data, epoch=epoch,
                            adapters=adapters, eval_seed=spec.eval_seed)
    return record.to_dict()
