"""Suite loading, demo validation, and on-disk round-trips."""

import json

import numpy as np
import pytest

from skillstream.errors import (
    DimensionMismatch,
    MissingFile,
    NonContiguousOrder,
    NonMonotoneTime,
    ShortDemo,
)
from skillstream.trajectory_store import (
    Demonstration,
    Dims,
    Frame,
    Suite,
    TaskSpec,
    load_suite,
    save_suite,
    validate_demo,
)

DIMS = Dims(F=3, P=2, A=2, L=2)


def frame(t, feat=None, prop=None, act=None):
    return Frame(
        t=t,
        feature=np.asarray(feat if feat is not None else [1.0, 0.0, 0.0]),
        proprio=np.asarray(prop if prop is not None else [0.0, 0.0]),
        action=np.asarray(act if act is not None else [0.0, 0.0]),
    )


def demo(n=4, demo_id="d0", task_id="t0"):
    return Demonstration(
        demo_id=demo_id, task_id=task_id, frames=tuple(frame(i) for i in range(n))
    )


def make_suite(n_tasks=3, demos_per_task=2):
    tasks = []
    for i in range(n_tasks):
        stage = "base" if i == 0 else "lifelong"
        demos = tuple(
            demo(4 + i, demo_id=f"t{i}_d{j}", task_id=f"t{i}") for j in range(demos_per_task)
        )
        tasks.append(
            TaskSpec(
                task_id=f"t{i}",
                order=i + 1,
                stage=stage,
                language_embedding=np.array([float(i), 1.0]),
                goal_id="in_site:objA:site1",
                init_seed=100 + i,
                horizon=50,
                demos=demos,
            )
        )
    return Suite(suite_id="mini", tasks=tuple(tasks), dims=DIMS)


# ---------------------------------------------------------------------------
# validate_demo


def test_minimal_demo_ok():
    validate_demo(demo(2), DIMS)


def test_nonmonotone_time():
    bad = Demonstration("d", "t", frames=(frame(0), frame(0), frame(1)))
    with pytest.raises(NonMonotoneTime):
        validate_demo(bad, DIMS)


def test_one_frame_demo_rejected():
    with pytest.raises(ShortDemo):
        validate_demo(demo(1), DIMS)


def test_feature_dim_mismatch():
    bad = Demonstration("d", "t", frames=(frame(0), frame(1, feat=[1.0, 0.0])))
    with pytest.raises(DimensionMismatch):
        validate_demo(bad, DIMS)


def test_demo_must_fit_horizon():
    with pytest.raises(ShortDemo):
        validate_demo(demo(5), DIMS, horizon=5)


# ---------------------------------------------------------------------------
# load_suite / save_suite


def test_round_trip_identical(tmp_path):
    suite = make_suite()
    manifest = save_suite(suite, str(tmp_path / "suite"))
    back = load_suite(manifest)
    assert back.suite_id == suite.suite_id
    assert back.dims == suite.dims
    assert [t.task_id for t in back.tasks] == [t.task_id for t in suite.tasks]
    for t0, t1 in zip(suite.tasks, back.tasks):
        assert t0.order == t1.order and t0.stage == t1.stage
        assert np.array_equal(t0.language_embedding, t1.language_embedding)
        for d0, d1 in zip(t0.demos, t1.demos):
            assert d0.demo_id == d1.demo_id
            for f0, f1 in zip(d0.frames, d1.frames):
                assert f0.t == f1.t
                assert np.array_equal(f0.feature, f1.feature)
                assert np.array_equal(f0.proprio, f1.proprio)
                assert np.array_equal(f0.action, f1.action)


def test_second_save_is_bytewise_stable(tmp_path):
    suite = make_suite()
    m1 = save_suite(suite, str(tmp_path / "a"))
    m2 = save_suite(load_suite(m1), str(tmp_path / "b"))
    with open(m1, "rb") as fh:
        b1 = fh.read()
    with open(m2, "rb") as fh:
        b2 = fh.read()
    assert b1 == b2


def test_missing_manifest(tmp_path):
    with pytest.raises(MissingFile):
        load_suite(str(tmp_path / "nope.json"))


def test_missing_demo_file(tmp_path):
    suite = make_suite()
    manifest = save_suite(suite, str(tmp_path / "suite"))
    (tmp_path / "suite" / "demos" / "t0_d0.jsonl").unlink()
    with pytest.raises(MissingFile):
        load_suite(manifest)


def _mutate_manifest(tmp_path, fn):
    suite = make_suite()
    manifest = save_suite(suite, str(tmp_path / "suite"))
    with open(manifest) as fh:
        man = json.load(fh)
    fn(man)
    with open(manifest, "w") as fh:
        json.dump(man, fh)
    return manifest


def test_noncontiguous_orders(tmp_path):
    manifest = _mutate_manifest(tmp_path, lambda m: m["tasks"][2].update(order=5))
    with pytest.raises(NonContiguousOrder):
        load_suite(manifest)


def test_base_after_lifelong_rejected(tmp_path):
    manifest = _mutate_manifest(tmp_path, lambda m: m["tasks"][2].update(stage="base"))
    with pytest.raises(NonContiguousOrder):
        load_suite(manifest)


def test_suite_without_base_rejected(tmp_path):
    manifest = _mutate_manifest(tmp_path, lambda m: m["tasks"][0].update(stage="lifelong"))
    with pytest.raises(NonContiguousOrder):
        load_suite(manifest)


def test_duplicate_task_ids_rejected(tmp_path):
    def dup(m):
        m["tasks"][1]["task_id"] = m["tasks"][0]["task_id"]

    manifest = _mutate_manifest(tmp_path, dup)
    with pytest.raises(NonContiguousOrder):
        load_suite(manifest)


def test_language_dim_checked(tmp_path):
    manifest = _mutate_manifest(
        tmp_path, lambda m: m["tasks"][0].update(language_embedding=[1.0])
    )
    with pytest.raises(DimensionMismatch):
        load_suite(manifest)


def test_tasks_sorted_by_order(tmp_path):
    def reverse(m):
        m["tasks"] = m["tasks"][::-1]

    manifest = _mutate_manifest(tmp_path, reverse)
    suite = load_suite(manifest)
    assert [t.order for t in suite.tasks] == [1, 2, 3]


def test_stage_views():
    suite = make_suite()
    assert [t.task_id for t in suite.base_tasks] == ["t0"]
    assert [t.task_id for t in suite.lifelong_tasks] == ["t1", "t2"]
    assert suite.task("t1").order == 2
    assert suite.task_at(3).task_id == "t2"
