"""Lifelong learning engine: base stage, incremental steps, evaluation, persistence."""

import numpy as np
import pytest

from skillstream.config import RunConfig
from skillstream.engine import (
    build_success_matrix,
    evaluate_policy,
    load_state,
    run_base_stage,
    run_lifelong_step,
    save_state,
    serialize_policy,
)
from skillstream.errors import (
    BadEpisodeCount,
    MissingDemos,
    OutOfOrderTask,
    TooFewSegments,
    UnlearnedTask,
)
from skillstream.synth import GeneratorSpec, build_suite, env_for_task
from skillstream.trajectory_store import Suite


@pytest.fixture(scope="module")
def bundle():
    suite, scene, oracle = build_suite(GeneratorSpec(demos_per_task=6), seed=0)
    return suite, scene, oracle


def small_config(**kw):
    defaults = dict(episodes=3, seed=0)
    defaults.update(kw)
    return RunConfig(**defaults)


def strip_demos(task):
    from dataclasses import replace

    return replace(task, demos=())


# ---------------------------------------------------------------------------
# base stage


def test_base_stage_recovers_true_k(bundle):
    suite, scene, oracle = bundle
    state = run_base_stage(suite, small_config())
    assert state.step == len(suite.base_tasks)
    assert state.meta.k_current == state.clustering.num_skills
    assert sorted(state.library) == list(range(state.clustering.num_skills))
    assert state.records[0]["stage"] == "base"
    assert state.records[0]["k_current"] == state.clustering.num_skills


def test_base_stage_missing_demos(bundle):
    suite, _, _ = bundle
    tasks = tuple(
        strip_demos(t) if t.order == 1 else t for t in suite.tasks
    )
    bad = Suite(suite_id=suite.suite_id, tasks=tasks, dims=suite.dims)
    with pytest.raises(MissingDemos):
        run_base_stage(bad, small_config())


def test_base_stage_single_skill_ablation(bundle):
    suite, _, _ = bundle
    state = run_base_stage(suite, small_config(single_skill=True))
    assert state.clustering.num_skills == 1
    assert list(state.library) == [0]
    assert state.meta.k_current == 1


def test_base_stage_too_few_segments(bundle):
    suite, _, _ = bundle
    from dataclasses import replace

    first = suite.base_tasks[0]
    tiny = Suite(
        suite_id="s",
        tasks=(replace(first, demos=(first.demos[0],)),),
        dims=suite.dims,
    )
    cfg = small_config(min_segments=1, max_segments=1)
    with pytest.raises(TooFewSegments):
        run_base_stage(tiny, cfg)


# ---------------------------------------------------------------------------
# lifelong steps


def test_lifelong_out_of_order(bundle):
    suite, _, _ = bundle
    state = run_base_stage(suite, small_config())
    with pytest.raises(OutOfOrderTask):
        run_lifelong_step(state, suite.lifelong_tasks[1], small_config())


def test_lifelong_missing_demos(bundle):
    suite, _, _ = bundle
    state = run_base_stage(suite, small_config())
    with pytest.raises(MissingDemos):
        run_lifelong_step(state, strip_demos(suite.lifelong_tasks[0]), small_config())


def test_k_trajectory_matches_generator_oracle(bundle):
    suite, scene, oracle = bundle
    cfg = small_config(sil_threshold=0.1)
    state = run_base_stage(suite, cfg)
    ks = [state.clustering.num_skills]
    for task in suite.lifelong_tasks:
        run_lifelong_step(state, task, cfg)
        ks.append(state.clustering.num_skills)
    increments = [b - a for a, b in zip(ks, ks[1:])]
    want = [
        1 if t.order in oracle["novel_orders"] else 0 for t in suite.lifelong_tasks
    ]
    assert increments == want


def test_mask_never_shrinks_over_steps(bundle):
    suite, _, _ = bundle
    cfg = small_config()
    state = run_base_stage(suite, cfg)
    prev = state.meta.k_current
    for task in suite.lifelong_tasks:
        run_lifelong_step(state, task, cfg)
        assert state.meta.k_current >= prev
        assert state.meta.k_current == state.clustering.num_skills
        prev = state.meta.k_current


def test_untouched_skills_bytewise_identical(bundle):
    suite, _, _ = bundle
    cfg = small_config()
    state = run_base_stage(suite, cfg)
    task = suite.lifelong_tasks[0]
    before = {k: serialize_policy(p) for k, p in state.library.items()}
    run_lifelong_step(state, task, cfg)
    used = {int(k) for k in state.records[-1]["skill_usage"][task.task_id]}
    assert used < set(before)  # the step exercises a strict subset of skills
    for k in set(before) - used:
        assert serialize_policy(state.library[k]) == before[k]


def test_touched_skills_gain_rows(bundle):
    suite, _, _ = bundle
    cfg = small_config()
    state = run_base_stage(suite, cfg)
    task = suite.lifelong_tasks[0]
    n_before = {k: len(p.rows) for k, p in state.library.items()}
    run_lifelong_step(state, task, cfg)
    used = {int(k) for k in state.records[-1]["skill_usage"][task.task_id]}
    for k in used:
        assert len(state.library[k].rows) > n_before[k]


def test_allow_new_skills_false_keeps_k(bundle):
    suite, _, _ = bundle
    cfg = small_config(allow_new_skills=False)
    state = run_base_stage(suite, cfg)
    k0 = state.clustering.num_skills
    for task in suite.lifelong_tasks:
        run_lifelong_step(state, task, cfg)
    assert state.clustering.num_skills == k0
    assert state.meta.k_current == k0


def test_buffer_grows_one_task_per_step(bundle):
    suite, _, _ = bundle
    cfg = small_config(n_save=2)
    state = run_base_stage(suite, cfg)
    n_base = len(suite.base_tasks)
    assert len(state.buffer.by_task) == n_base  # base tasks are buffered too
    for i, task in enumerate(suite.lifelong_tasks, start=1):
        run_lifelong_step(state, task, cfg)
        assert len(state.buffer.by_task) == n_base + i
        assert len(state.buffer.by_task[task.task_id]) == 2


# ---------------------------------------------------------------------------
# evaluation


def test_evaluate_rejects_bad_episode_count(bundle):
    suite, scene, _ = bundle
    state = run_base_stage(suite, small_config())
    task = suite.base_tasks[0]
    with pytest.raises(BadEpisodeCount):
        evaluate_policy(state, task, 0, env_for_task(scene, task))


def test_evaluate_rejects_unlearned_task(bundle):
    suite, scene, _ = bundle
    state = run_base_stage(suite, small_config())
    task = suite.lifelong_tasks[0]
    with pytest.raises(UnlearnedTask):
        evaluate_policy(state, task, 1, env_for_task(scene, task))


def test_evaluate_impossible_horizon_gives_zero(bundle):
    suite, scene, _ = bundle
    state = run_base_stage(suite, small_config())
    from dataclasses import replace

    task = replace(suite.base_tasks[0], horizon=1)
    rate = evaluate_policy(state, task, 2, env_for_task(scene, task))
    assert rate == 0.0


def test_evaluate_base_task_succeeds(bundle):
    suite, scene, _ = bundle
    state = run_base_stage(suite, small_config())
    task = suite.base_tasks[0]
    rate = evaluate_policy(state, task, 3, env_for_task(scene, task))
    assert rate >= 1 / 3


# ---------------------------------------------------------------------------
# full matrix


def test_success_matrix_lower_triangular_complete(bundle):
    suite, scene, _ = bundle
    cfg = small_config(episodes=2)
    matrix, state = build_success_matrix(suite, cfg, lambda t: env_for_task(scene, t))
    assert matrix.M == len(suite.tasks)
    assert matrix.is_complete()
    n_base = len(suite.base_tasks)
    # all base rows replicate the single post-base evaluation
    for i in range(2, n_base + 1):
        for j in range(1, i):
            assert matrix.get(i, j) == matrix.get(j, j)
    assert state.step == len(suite.tasks)


def test_threads_do_not_change_results(bundle):
    suite, scene, _ = bundle
    m1, _ = build_success_matrix(
        suite, small_config(episodes=2, threads=1), lambda t: env_for_task(scene, t)
    )
    m4, _ = build_success_matrix(
        suite, small_config(episodes=2, threads=4), lambda t: env_for_task(scene, t)
    )
    assert m1.to_json() == m4.to_json()


# ---------------------------------------------------------------------------
# persistence


def test_state_save_load_round_trip(bundle, tmp_path):
    suite, scene, _ = bundle
    cfg = small_config()
    state = run_base_stage(suite, cfg)
    run_lifelong_step(state, suite.lifelong_tasks[0], cfg)
    save_state(state, str(tmp_path / "state"))
    back = load_state(str(tmp_path / "state"))
    assert back.step == state.step
    assert back.clustering.num_skills == state.clustering.num_skills
    assert back.meta.k_current == state.meta.k_current
    for k in state.library:
        assert serialize_policy(back.library[k]) == serialize_policy(state.library[k])
    task = suite.base_tasks[0]
    r0 = evaluate_policy(state, task, 2, env_for_task(scene, task))
    r1 = evaluate_policy(back, task, 2, env_for_task(scene, task))
    assert r0 == r1


def test_loaded_state_continues_learning(bundle, tmp_path):
    suite, _, _ = bundle
    cfg = small_config()
    state = run_base_stage(suite, cfg)
    run_lifelong_step(state, suite.lifelong_tasks[0], cfg)
    save_state(state, str(tmp_path / "state"))
    back = load_state(str(tmp_path / "state"))
    run_lifelong_step(state, suite.lifelong_tasks[1], cfg)
    run_lifelong_step(back, suite.lifelong_tasks[1], cfg)
    assert back.clustering.num_skills == state.clustering.num_skills
    for k in state.library:
        assert serialize_policy(back.library[k]) == serialize_policy(state.library[k])
