import numpy as np
import pytest

from statdistill.data import make_synthetic
from statdistill.errors import InputError, ShapeError, UsageError
from statdistill.metrics import (EVAL_BATCH, MetricsRecord, accuracy,
                                 ce_with_labels, evaluate_model,
                                 export_features, kl_teacher_student, kmeans,
                                 load_features, nmi, nmi_features,
                                 probe_adapter, stats_distance)
from statdistill.models import WrnConfig, build_wrn, freeze
from statdistill.ops import cross_entropy
from statdistill.stats import DEFAULT_EPS, channel_stats, stats_match_loss
from statdistill.tensor import Tensor
from statdistill.trainer import SGD, LossConfig, train_step

WIDE = WrnConfig(depth=10, width=1, num_classes=3, base_channels=4, input_size=8)
NARROW = WrnConfig(depth=10, width=1, num_classes=3, base_channels=2, input_size=8)


def trained_model(config, seed, steps=2, dtype=np.float32):
    model = build_wrn(config, seed=seed, dtype=dtype)
    rng = np.random.default_rng(seed + 50)
    plain = LossConfig(alpha=0.0, beta=0.0, positions=(), baseline="none")
    opt = SGD(model.named_parameters(), lr=0.02, momentum=0.9, weight_decay=0.0)
    model.train(True)
    for _ in range(steps):
        x = rng.uniform(0, 1, size=(4, 3, 8, 8)).astype(dtype)
        y = rng.integers(0, 3, size=4)
        train_step(model, None, (x, y), plain, optimizer=opt)
    return model


@pytest.fixture(scope="module")
def small_data():
    _, test = make_synthetic(3, 10, size=8, seed=4, noise=0.25)
    return test


# -- divergence and accuracy ---------------------------------------------------------


def test_kl_hand_case_and_identity():
    t = np.array([[np.log(3.0), 0.0]])
    s = np.array([[0.0, 0.0]])
    want = 0.75 * np.log(1.5) + 0.25 * np.log(0.5)
    assert kl_teacher_student(t, s) == pytest.approx(want, rel=1e-12)
    assert kl_teacher_student(t, t.copy()) == 0.0


def test_kl_matches_oracle_and_is_nonnegative():
    rng = np.random.default_rng(0)

    def oracle(t, s):
        def lsm(z):
            z = z - z.max(axis=1, keepdims=True)
            return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

        lt, ls = lsm(t.astype(np.float64)), lsm(s.astype(np.float64))
        return (np.exp(lt) * (lt - ls)).sum(axis=1).mean()

    for _ in range(1000):
        t = rng.normal(0, 3, size=(4, 6)).astype(np.float32)
        s = rng.normal(0, 3, size=(4, 6)).astype(np.float32)
        got = kl_teacher_student(t, s)
        assert got >= 0.0
        assert got == pytest.approx(oracle(t, s), abs=1e-9, rel=1e-9)
    with pytest.raises(ShapeError):
        kl_teacher_student(np.zeros((2, 3)), np.zeros((2, 4)))


def test_accuracy_hand_cases_and_tie_breaking():
    logits = np.array([
        [5.0, 1.0, 0.0, 0.0, 0.0, 0.0],   # correct
        [1.0, 5.0, 0.0, 0.0, 0.0, 0.0],   # label 0 is runner-up: top5 hit
        [0.0, 1.0, 2.0, 3.0, 4.0, 5.0],   # label 0 ranks 6th: top5 miss
    ])
    top1, top5 = accuracy(logits, [0, 0, 0])
    assert top1 == pytest.approx(1 / 3)
    assert top5 == pytest.approx(2 / 3)

    uniform = np.zeros((10, 10))
    top1, top5 = accuracy(uniform, np.arange(10))
    assert top1 == pytest.approx(0.1)   # ties resolve to the lowest index
    assert top5 == pytest.approx(0.5)

    top1, top5 = accuracy(np.zeros((4, 3)), [0, 1, 2, 0])  # k = min(5, C)
    assert top5 == 1.0
    with pytest.raises(ShapeError):
        accuracy(np.zeros((2, 3)), [0, 1, 0])


def test_ce_with_labels_matches_graph_op():
    rng = np.random.default_rng(1)
    logits = rng.normal(0, 2, size=(6, 4))
    labels = rng.integers(0, 4, size=6)
    want = cross_entropy(Tensor(logits), labels).item()
    assert ce_with_labels(logits, labels) == pytest.approx(want, rel=1e-12)


# -- clustering ----------------------------------------------------------------------


def blobs(rng, n_per, k, spread=0.05):
    centers = rng.normal(0, 5, size=(k, 4))
    x = np.concatenate([c + spread * rng.normal(size=(n_per, 4)) for c in centers])
    y = np.repeat(np.arange(k), n_per)
    return x, y


def test_kmeans_recovers_separated_blobs():
    rng = np.random.default_rng(2)
    x, y = blobs(rng, 20, 3)
    assign = kmeans(x, 3, seed=0)
    assert nmi(assign, y) == 1.0


def test_kmeans_is_deterministic_and_validates():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(30, 5))
    a = kmeans(x, 4, seed=7)
    b = kmeans(x, 4, seed=7)
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= set(range(4))
    assert np.array_equal(kmeans(x, 1, seed=0), np.zeros(30, dtype=a.dtype))
    with pytest.raises(InputError):
        kmeans(x, 0, seed=0)
    with pytest.raises(InputError):
        kmeans(x[:3], 4, seed=0)
    with pytest.raises(ShapeError):
        kmeans(x[:, 0], 2, seed=0)


def test_kmeans_handles_duplicate_points():
    import warnings
    x = np.ones((6, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("error")  # NaN centers would warn via numpy
        assign = kmeans(x, 3, seed=1)
    assert assign.shape == (6,)
    assert set(np.unique(assign)) == {0, 1, 2}  # every cluster keeps a point


def test_nmi_reference_values_and_invariance():
    assert nmi([0, 0, 1, 1], [0, 0, 1, 1]) == 1.0
    assert nmi([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0      # relabeling-invariant
    assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == 0.0      # independent
    assert nmi([0, 0, 0, 0], [0, 0, 0, 0]) == 1.0      # both trivial
    assert nmi([5, 5, 9, 9], [0, 0, 1, 1]) == 1.0      # arbitrary label values
    with pytest.raises(ShapeError):
        nmi([0, 1], [0, 1, 0])
    with pytest.raises(InputError):
        nmi([], [])


def nmi_oracle(a, b):
    """Independent NMI: dict-based counting, same row-major accumulation."""
    a, b = list(a), list(b)
    n = len(a)
    ua, ub = sorted(set(a)), sorted(set(b))
    counts = {}
    for x, y in zip(a, b):
        counts[(x, y)] = counts.get((x, y), 0) + 1
    row = {x: sum(c for (i, _), c in counts.items() if i == x) for x in ua}
    col = {y: sum(c for (_, j), c in counts.items() if j == y) for y in ub}
    mi = 0.0
    for x in ua:
        for y in ub:
            c = counts.get((x, y), 0)
            if c:
                pij = c / n
                mi += pij * np.log(pij * n * n / (row[x] * col[y]))
    ha = -sum((row[x] / n) * np.log(row[x] / n) for x in ua)
    hb = -sum((col[y] / n) * np.log(col[y] / n) for y in ub)
    denom = (ha + hb) / 2.0
    if denom == 0.0:
        return 1.0
    return min(1.0, max(0.0, mi / denom))


def test_nmi_equals_oracle_exactly_on_small_fixtures():
    rng = np.random.default_rng(4)
    for _ in range(200):
        n = int(rng.integers(2, 33))
        a = rng.integers(0, 4, size=n)
        b = rng.integers(0, 3, size=n)
        assert nmi(a, b) == nmi_oracle(a, b)


def test_nmi_near_zero_for_independent_labelings():
    rng = np.random.default_rng(5)
    a = rng.integers(0, 4, size=1000)
    b = rng.integers(0, 4, size=1000)
    assert nmi(a, b) < 0.1


def test_nmi_features_validates_and_runs(small_data):
    model = trained_model(WIDE, seed=0)
    value = nmi_features(model, small_data, "conv4", k=3, seed=0)
    assert 0.0 <= value <= 1.0
    with pytest.raises(UsageError):
        nmi_features(model, small_data, "conv9", k=3, seed=0)
    with pytest.raises(InputError):
        nmi_features(model, small_data, "conv4", k=1, seed=0)


# -- statistics distance ---------------------------------------------------------------


def test_stats_distance_zero_for_identical_models(small_data):
    teacher = freeze(trained_model(WIDE, seed=1))
    clone = build_wrn(WIDE, seed=2)
    clone.load_state_dict(teacher.state_dict())
    assert stats_distance(teacher, clone, small_data, "conv4") < 1e-6


def test_stats_distance_matches_per_chunk_oracle(small_data):
    teacher = freeze(trained_model(WIDE, seed=1))
    student = trained_model(NARROW, seed=3)
    probe = probe_adapter(NARROW.base_channels * 4, WIDE.base_channels * 4,
                          seed=0)
    got = stats_distance(teacher, student, small_data, "conv4",
                         adapter=probe, batch_size=3)

    total = 0.0
    student.eval()  # the function evaluates in eval mode
    from statdistill.tensor import no_grad
    with no_grad():
        for start in range(0, len(small_data), 3):
            x = Tensor(small_data.samples[start:start + 3])
            _, hooks_t = teacher.forward_collect(x)
            _, hooks_s = student.forward_collect(x)
            loss = stats_match_loss(
                channel_stats(hooks_t["conv4"], DEFAULT_EPS),
                channel_stats(probe(hooks_s["conv4"]), DEFAULT_EPS))
            total += loss.item() * x.shape[0]
    assert got == pytest.approx(total / len(small_data), rel=1e-9)


def test_stats_distance_probe_is_seeded(small_data):
    teacher = freeze(trained_model(WIDE, seed=1))
    student = trained_model(NARROW, seed=3)
    a = stats_distance(teacher, student, small_data, "conv4", probe_seed=0)
    b = stats_distance(teacher, student, small_data, "conv4", probe_seed=0)
    c = stats_distance(teacher, student, small_data, "conv4", probe_seed=1)
    assert a == b
    assert a != c
    with pytest.raises(UsageError):
        stats_distance(teacher, student, small_data, "pool7")


def test_probe_adapter_shape_and_determinism():
    a = probe_adapter(8, 16, seed=0)
    b = probe_adapter(8, 16, seed=0)
    c = probe_adapter(8, 16, seed=1)
    assert a.weight.shape == (16, 8, 1, 1)
    assert np.array_equal(a.weight.data, b.weight.data)
    assert not np.array_equal(a.weight.data, c.weight.data)


# -- feature export ---------------------------------------------------------------------


def test_export_features_round_trips_exactly(tmp_path, small_data):
    model = trained_model(WIDE, seed=0)
    path = tmp_path / "features.csv"
    export_features(model, small_data, "conv4", path)

    header = path.read_text().splitlines()[0]
    assert header == "label," + ",".join(f"f{i}" for i in range(16))

    labels, features = load_features(path)
    assert np.array_equal(labels, small_data.labels)

    from statdistill.metrics import _forward_dataset
    _, direct = _forward_dataset(model, small_data, want_hooks=("conv4",))
    assert np.array_equal(features, direct["conv4"])

    k = small_data.num_classes
    assert nmi(kmeans(features, k, seed=0), labels) \
        == nmi(kmeans(direct["conv4"], k, seed=0), small_data.labels)


def test_load_features_rejects_foreign_csv(tmp_path):
    bad = tmp_path / "other.csv"
    bad.write_text("x,y\n1,2\n")
    with pytest.raises(InputError):
        load_features(bad)


# -- record assembly ---------------------------------------------------------------------


def test_metrics_record_enforces_ranges():
    ok = dict(top1=0.5, top5=0.8, ce_with_labels=1.0, kl_with_teacher=0.1,
              stats_distance=0.2, nmi=0.3, epoch=4)
    record = MetricsRecord(**ok)
    assert list(record.to_dict()) == [
        "epoch", "top1", "top5", "ce_with_labels", "kl_with_teacher",
        "kl_student_teacher", "stats_distance", "nmi"]
    assert all(isinstance(v, (int, float)) and not isinstance(v, np.generic)
               for v in record.to_dict().values())
    for bad in (dict(ok, top1=0.9), dict(ok, nmi=1.5),
                dict(ok, kl_with_teacher=-1), dict(ok, ce_with_labels=-0.1),
                dict(ok, stats_distance=-2), dict(ok, epoch=-1)):
        with pytest.raises(InputError):
            MetricsRecord(**bad)


def test_evaluate_model_without_teacher(small_data):
    model = trained_model(WIDE, seed=0)
    record = evaluate_model(model, None, small_data, epoch=3)
    assert record.epoch == 3
    assert record.kl_with_teacher == 0.0
    assert record.kl_student_teacher == 0.0
    assert record.stats_distance == 0.0
    assert 0.0 <= record.top1 <= record.top5 <= 1.0


def test_evaluate_model_clone_matches_teacher(small_data):
    teacher = freeze(trained_model(WIDE, seed=1))
    clone = build_wrn(WIDE, seed=5)
    clone.load_state_dict(teacher.state_dict())
    record = evaluate_model(clone, teacher, small_data)
    assert record.kl_with_teacher == 0.0
    assert record.kl_student_teacher == 0.0
    assert record.stats_distance == 0.0


def test_evaluation_is_stable_across_thread_counts(small_data, monkeypatch):
    teacher = freeze(trained_model(WIDE, seed=1))
    student = trained_model(NARROW, seed=3)
    single = evaluate_model(student, teacher, small_data).to_dict()
    monkeypatch.setenv("STATDISTILL_THREADS", "4")
    threaded = evaluate_model(student, teacher, small_data).to_dict()
    assert threaded == single
    monkeypatch.setenv("STATDISTILL_THREADS", "not-a-number")
    fallback = evaluate_model(student, teacher, small_data).to_dict()
    assert fallback == single
