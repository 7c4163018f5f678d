import json

import numpy as np
import pytest

from statdistill.config import (DatasetSpec, RunSpec, apply_overrides,
                                build_dataset, desk_distill_spec,
                                desk_teacher_spec, spec_from_dict,
                                spec_from_file, spec_to_dict, spec_to_file,
                                spec_to_json)
from statdistill.errors import ConfigError
from statdistill.models import WrnConfig
from statdistill.trainer import LossConfig, TrainConfig


def rich_spec():
    """A spec exercising tuples, nested options and optional fields."""
    return RunSpec(
        teacher=WrnConfig(depth=16, width=2, num_classes=5, base_channels=8,
                          input_size=16),
        student=WrnConfig(depth=10, width=1, num_classes=5, base_channels=4,
                          input_size=16),
        train=TrainConfig(epochs=7, batch_size=16, lr=0.04,
                          lr_milestones=((3, 0.5), (5, 0.1)), momentum=0.8,
                          weight_decay=1e-4, seed=9, precision="float64"),
        losses=LossConfig(alpha=0.5, beta=2.0, positions=("conv2", "conv4"),
                          baseline="kd", kd_alpha=0.7, kd_temperature=3.0,
                          adain_on_probs=True, adain_injection="simultaneous"),
        dataset=DatasetSpec(kind="synthetic", num_classes=5, n_per_class=30,
                            size=16, seed=2, noise=0.3, random_crop=True,
                            horizontal_flip=True),
        out_dir="runs/rich", teacher_checkpoint="runs/teacher/model.sdt",
        metric_every=2, checkpoint_every=3, eval_seed=4)


# -- serialization ------------------------------------------------------------------


def test_spec_json_round_trip_is_a_fixpoint():
    spec = rich_spec()
    text = spec_to_json(spec)
    parsed = spec_from_dict(json.loads(text))
    assert parsed == spec
    assert spec_to_json(parsed) == text
    assert text.endswith("\n")
    assert json.loads(text)["train"]["lr_milestones"] == [[3, 0.5], [5, 0.1]]


def test_spec_file_round_trip(tmp_path):
    spec = rich_spec()
    path = tmp_path / "config.json"
    spec_to_file(spec, path)
    assert spec_from_file(path) == spec
    spec_to_file(spec_from_file(path), tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_spec_from_dict_rejects_malformed_input():
    raw = spec_to_dict(rich_spec())
    del raw["student"]
    with pytest.raises(ConfigError, match="malformed run config"):
        spec_from_dict(raw)
    raw = spec_to_dict(rich_spec())
    raw["train"]["no_such_field"] = 1
    with pytest.raises(ConfigError, match="malformed run config"):
        spec_from_dict(raw)


def test_spec_from_dict_rejects_wrong_leaf_types():
    raw = spec_to_dict(rich_spec())
    raw["losses"]["alpha"] = "oops"
    raw["train"]["epochs"] = 3.5
    raw["train"]["lr"] = None
    raw["dataset"]["random_crop"] = 1
    raw["metric_every"] = [2]
    with pytest.raises(ConfigError) as err:
        spec_from_dict(raw)
    message = str(err.value)
    for fragment in ("losses: alpha must be a number, got 'oops'",
                     "train: epochs must be an integer, got 3.5",
                     "train: lr must be a number, got None",
                     "dataset: random_crop must be a boolean, got 1",
                     "metric_every must be an integer, got [2]"):
        assert fragment in message, fragment


def test_spec_from_dict_rejects_malformed_milestones():
    raw = spec_to_dict(rich_spec())
    raw["train"]["lr_milestones"] = [["three", 0.5]]
    with pytest.raises(ConfigError, match="malformed run config"):
        spec_from_dict(raw)
    raw["train"]["lr_milestones"] = [[3]]
    with pytest.raises(ConfigError, match="malformed run config"):
        spec_from_dict(raw)


def test_spec_from_dict_accepts_integer_weights():
    raw = spec_to_dict(rich_spec())
    raw["losses"]["alpha"] = 2
    raw["dataset"]["noise"] = 0
    spec = spec_from_dict(raw)
    assert spec.losses.alpha == 2 and spec.dataset.noise == 0


def test_classes_subset_survives_round_trip():
    spec = rich_spec()
    spec.dataset.kind = "cifar"
    spec.dataset.path = "/data/cifar"
    spec.dataset.classes_subset = (3, 1, 7)
    parsed = spec_from_dict(json.loads(spec_to_json(spec)))
    assert parsed.dataset.classes_subset == (3, 1, 7)


# -- overrides ----------------------------------------------------------------------


def test_apply_overrides_parses_values_and_leaves_original_untouched():
    spec = rich_spec()
    out = apply_overrides(spec, [
        "train.lr=0.01",
        "losses.positions=[\"conv3\"]",
        "losses.adain_on_probs=false",
        "out_dir=elsewhere",
        "teacher_checkpoint=",
    ])
    assert out.train.lr == 0.01
    assert out.losses.positions == ("conv3",)
    assert out.losses.adain_on_probs is False
    assert out.out_dir == "elsewhere"
    assert out.teacher_checkpoint == ""
    assert spec.train.lr == 0.04 and spec.out_dir == "runs/rich"


def test_apply_overrides_collects_every_bad_key():
    with pytest.raises(ConfigError) as err:
        apply_overrides(rich_spec(), [
            "no_such_key=1", "train.nope=2", "unkeyed", "train.lr=0.2"])
    message = str(err.value)
    assert "no_such_key" in message
    assert "train.nope" in message
    assert "unkeyed" in message
    assert "train.lr" not in message  # the valid one is not reported


# -- validation ----------------------------------------------------------------------


def test_run_spec_validation_collects_violations_across_children():
    spec = rich_spec()
    spec.train.lr = 0.0
    spec.losses.alpha = -1.0
    spec.dataset.noise = -0.5
    spec.student.input_size = 32
    spec.teacher.num_classes = 7
    spec.out_dir = ""
    spec.metric_every = -1
    with pytest.raises(ConfigError) as err:
        spec.validate()
    message = str(err.value)
    for fragment in ("train: lr must be positive",
                     "losses: alpha must be >= 0",
                     "dataset: noise must be >= 0",
                     "student: input_size 32 does not match dataset size 16",
                     "teacher: num_classes 7 does not match",
                     "out_dir must be non-empty",
                     "metric_every must be >= 0"):
        assert fragment in message, fragment
    spec2 = rich_spec()
    assert spec2.validate() is spec2


def test_dataset_spec_problems():
    assert DatasetSpec().problems() == []
    assert "kind" in DatasetSpec(kind="imagenet").problems()[0]
    bad = DatasetSpec(num_classes=1, n_per_class=1, size=4, noise=-1, pad=-2)
    assert len(bad.problems()) == 5
    assert DatasetSpec(kind="cifar").problems() == ["cifar dataset needs a path"]


# -- materialization ----------------------------------------------------------------


def test_build_dataset_synthetic_attaches_augmentation():
    spec = DatasetSpec(kind="synthetic", num_classes=3, n_per_class=10, size=8,
                       seed=6, noise=0.2, pad=2, random_crop=True,
                       horizontal_flip=True)
    train, test = build_dataset(spec)
    assert len(train) == 24 and len(test) == 6
    assert train.augment.random_crop and train.augment.horizontal_flip
    assert train.augment.pad == 2 and train.augment.seed == 6
    assert not test.augment.active


def test_build_dataset_cifar_passes_subset_and_downscale(tmp_path):
    records = []
    for label in (2, 5, 2):
        pixels = np.full(3072, label * 10, dtype=np.uint8)
        records.append(bytes([label]) + pixels.tobytes())
    (tmp_path / "data_batch_1.bin").write_bytes(b"".join(records))
    (tmp_path / "test_batch.bin").write_bytes(records[1])
    spec = DatasetSpec(kind="cifar", path=str(tmp_path),
                       classes_subset=(5, 2), downscale=2)
    train, test = build_dataset(spec)
    assert train.num_classes == 2
    assert np.array_equal(train.labels, [1, 0, 1])
    assert train.image_size == 16
    assert np.array_equal(test.labels, [0])


def test_build_dataset_validates_first():
    with pytest.raises(ConfigError):
        build_dataset(DatasetSpec(kind="cifar"))


# -- presets -------------------------------------------------------------------------


def test_desk_presets_validate_and_fit_together(tmp_path):
    teacher = desk_teacher_spec(str(tmp_path / "t"))
    teacher.validate()
    assert teacher.student == teacher.teacher  # supervised: trains the teacher
    distill = desk_distill_spec(str(tmp_path / "d"), "t/model.sdt", seed=3,
                                alpha=0.5, beta=1.5)
    distill.validate()
    assert distill.teacher == teacher.teacher
    assert distill.losses.alpha == 0.5 and distill.losses.beta == 1.5
    assert distill.train.seed == 3
    assert distill.dataset == teacher.dataset
    assert distill.student.depth < distill.teacher.depth
