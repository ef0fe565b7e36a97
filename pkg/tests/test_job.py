"""Lifelong job: stages, phase machine, update cycles, determinism."""

from __future__ import annotations

import pytest

from edgelearn.data import Dataset
from edgelearn.errors import NothingDeployableError, PhaseError
from edgelearn.job import (
    EvalPolicy,
    JobConfig,
    LifelongJob,
    Phase,
    TransferPolicy,
    TriggerPolicy,
    holdout_split,
    parse_job_config,
)
from edgelearn.kb import STATUS_DEPLOYABLE, STATUS_EVAL_FAILED, kb_open
from edgelearn.learners import (
    EstimatorSpec,
    Learner,
    predict,
    register_learner,
    serialize_model,
)
from edgelearn.tasks import BucketingConfig, mine_tasks

from conftest import banded_schema, city_dataset, make_samples


def majority_config(**overrides) -> JobConfig:
    defaults = dict(
        learner=EstimatorSpec("majority"),
        bucketing=BucketingConfig((None,)),
        eval_policy=EvalPolicy(),
        transfer=TransferPolicy(min_samples=1, cap=100),
        trigger=TriggerPolicy(unseen_threshold=5),
        fallback_enabled=True,
        seed=7,
    )
    defaults.update(overrides)
    return JobConfig(**defaults)


def two_city_data(n_per_city: int = 6) -> Dataset:
    rows = [(float(i), "athens", "a") for i in range(n_per_city)]
    rows += [(float(i), "tokyo", "b") for i in range(n_per_city)]
    return city_dataset(rows)


def new_job(tmp_path, cfg=None, name="kb"):
    cfg = cfg or majority_config()
    kb = kb_open(tmp_path / name)
    return LifelongJob(cfg, kb, clock=lambda: 0.0), kb


# -- run_train ----------------------------------------------------------------

def test_train_two_cities_three_upserts(tmp_path):
    job, kb = new_job(tmp_path)
    records = job.run_train(two_city_data())
    assert len(records) == 2
    assert kb.kb_version == 3  # two task upserts + fallback
    assert kb.fallback is not None
    assert job.state.phase is Phase.EVALUATING


def test_retrain_same_data_bumps_version_same_bytes(tmp_path):
    job, kb = new_job(tmp_path)
    data = two_city_data()
    job.run_train(data)
    first = {k: serialize_model(r.model) for k, r in kb.records.items()}
    job.run_eval(data)
    job.run_deploy()
    job.run_train(data)
    for key, record in kb.records.items():
        assert record.version == 2
        assert serialize_model(record.model) == first[key]


def test_single_task_fallback_trained_on_same_data(tmp_path):
    job, kb = new_job(tmp_path)
    data = city_dataset([(float(i), "solo", "a") for i in range(5)])
    job.run_train(data)
    record = kb.lookup("solo")
    assert record.model.trained_on == kb.fallback.trained_on
    assert serialize_model(record.model) == serialize_model(kb.fallback)


def test_train_fallback_disabled(tmp_path):
    job, kb = new_job(tmp_path, majority_config(fallback_enabled=False))
    job.run_train(two_city_data())
    assert kb.fallback is None
    assert kb.kb_version == 2


def test_train_records_relations_between_similar_tasks(tmp_path):
    schema = banded_schema()
    cfg = majority_config(bucketing=BucketingConfig.from_schema(schema))
    kb = kb_open(tmp_path / "kb")
    job = LifelongJob(cfg, kb)
    rows = [((1.0,), ("p", 5.0), "a")] * 3 + [((2.0,), ("p", 25.0), "b")] * 3
    rows += [((3.0,), ("q", 45.0), "a")] * 3
    job.run_train(Dataset(schema, make_samples(rows)))
    key_low = next(k for k in kb.records if k.startswith("p|0"))
    record = kb.lookup(key_low)
    related = dict(record.relations)
    assert any(k.startswith("p|1") for k in related)
    assert all(k != key_low for k in related)
    assert all(sim > 0.0 for sim in related.values())


def test_update_relates_new_task_to_existing_kb_tasks(tmp_path):
    schema = banded_schema((10.0, 20.0, 30.0, 40.0))
    cfg = majority_config(bucketing=BucketingConfig.from_schema(schema))
    kb = kb_open(tmp_path / "kb")
    job = LifelongJob(cfg, kb)
    first = Dataset(schema, make_samples([((1.0,), ("p", 5.0), "a")] * 10))
    job.bootstrap(first)
    old_key = next(iter(kb.records))

    second = Dataset(schema, make_samples([((2.0,), ("p", 15.0), "b")] * 10))
    job.run_update_cycle(second)
    new_key = next(k for k in kb.records if k != old_key)
    related = dict(kb.lookup(new_key).relations)
    assert related == {old_key: 0.875}  # city equal, adjacent band of B=5


def test_train_small_task_augmented_by_transfer(tmp_path):
    schema = banded_schema()
    cfg = majority_config(
        bucketing=BucketingConfig.from_schema(schema),
        transfer=TransferPolicy(min_samples=8, cap=100),
    )
    kb = kb_open(tmp_path / "kb")
    job = LifelongJob(cfg, kb)
    rows = [((1.0,), ("p", 5.0), "a")] * 2 + [((2.0,), ("p", 25.0), "b")] * 8
    job.run_train(Dataset(schema, make_samples(rows)))
    key_low = next(k for k in kb.records if k.startswith("p|0"))
    record = kb.lookup(key_low)
    assert record.model.trained_on.count == 10  # 2 own + 8 borrowed
    assert record.sample_stats.count == 2       # stats describe the task's own data


def test_train_wrong_phase_rejected(tmp_path):
    job, _ = new_job(tmp_path)
    job.run_train(two_city_data())
    with pytest.raises(PhaseError, match="Idle or Deployed"):
        job.run_train(two_city_data())


# -- run_eval --------------------------------------------------------------------

def test_eval_gates_by_accuracy(tmp_path):
    job, kb = new_job(tmp_path, majority_config(eval_policy=EvalPolicy(0.8, 1)))
    job.run_train(two_city_data())
    eval_set = city_dataset(
        [(0.0, "athens", "a")] * 9 + [(1.0, "athens", "b")]  # majority(a): 0.9
        + [(0.0, "tokyo", "a")] * 9 + [(1.0, "tokyo", "b")]  # majority(b): 0.1
    )
    report = job.run_eval(eval_set)
    assert report.outcome("athens").passed
    assert not report.outcome("tokyo").passed
    assert report.outcome("tokyo").reason == "below-threshold"
    assert kb.lookup("athens").status == STATUS_DEPLOYABLE
    assert kb.lookup("tokyo").status == STATUS_EVAL_FAILED
    assert job.state.phase is Phase.DEPLOYING


def test_eval_task_without_samples_fails_too_few(tmp_path):
    job, kb = new_job(tmp_path)
    job.run_train(two_city_data())
    report = job.run_eval(city_dataset([(0.0, "athens", "a")] * 3))
    assert report.outcome("athens").passed
    tokyo = report.outcome("tokyo")
    assert not tokyo.passed and tokyo.reason == "too-few-samples"
    assert kb.lookup("tokyo").status == STATUS_EVAL_FAILED


def test_eval_vacuous_gate_passes_everything(tmp_path):
    job, kb = new_job(tmp_path, majority_config(eval_policy=EvalPolicy(0.0, 1)))
    job.run_train(two_city_data())
    report = job.run_eval(two_city_data())
    assert all(o.passed for o in report.outcomes)
    assert all(r.status == STATUS_DEPLOYABLE for r in kb.records.values())


def test_eval_min_samples_policy(tmp_path):
    job, kb = new_job(tmp_path, majority_config(eval_policy=EvalPolicy(0.0, 3)))
    job.run_train(two_city_data())
    eval_set = city_dataset([(0.0, "athens", "a")] * 3 + [(0.0, "tokyo", "b")] * 2)
    report = job.run_eval(eval_set)
    assert report.outcome("athens").passed
    assert report.outcome("tokyo").reason == "too-few-samples"
    # metrics still reported for the samples that were available
    assert report.outcome("tokyo").metrics.n == 2


def test_eval_fallback_scored_on_whole_set_never_gated(tmp_path):
    job, kb = new_job(tmp_path, majority_config(eval_policy=EvalPolicy(0.99, 1)))
    job.run_train(two_city_data())
    report = job.run_eval(two_city_data())
    assert report.fallback_metrics is not None
    assert report.fallback_metrics.n == 12
    assert kb.fallback is not None  # still present even though every task failed


def test_eval_wrong_phase_rejected(tmp_path):
    job, _ = new_job(tmp_path)
    with pytest.raises(PhaseError):
        job.run_eval(two_city_data())


# -- run_deploy ---------------------------------------------------------------------

def test_deploy_two_of_three_pass(tmp_path):
    job, kb = new_job(tmp_path, majority_config(eval_policy=EvalPolicy(0.8, 1)))
    rows = [(float(i), city, label) for city, label in
            (("athens", "a"), ("tokyo", "b"), ("oslo", "a")) for i in range(6)]
    job.run_train(city_dataset(rows))
    eval_set = city_dataset(
        [(0.0, "athens", "a")] * 9 + [(1.0, "athens", "b")]   # majority(a): 0.9
        + [(0.0, "tokyo", "b")] * 9 + [(1.0, "tokyo", "a")]   # majority(b): 0.9
        + [(0.0, "oslo", "b")] * 9 + [(1.0, "oslo", "a")]     # majority(a): 0.1
    )
    job.run_eval(eval_set)
    snapshot = job.run_deploy()
    assert set(snapshot.tasks) == {"athens", "tokyo"}
    assert snapshot.fallback is not None
    assert job.state.phase is Phase.DEPLOYED
    assert job.state.snapshot_version == snapshot.snapshot_version


def test_deploy_all_failed_fallback_only(tmp_path):
    job, _ = new_job(tmp_path, majority_config(eval_policy=EvalPolicy(0.999, 1)))
    job.run_train(two_city_data())
    job.run_eval(city_dataset(
        [(0.0, "athens", "a"), (0.0, "athens", "b"),
         (0.0, "tokyo", "a"), (0.0, "tokyo", "b")]
    ))
    snapshot = job.run_deploy()
    assert snapshot.tasks == {}
    assert snapshot.fallback is not None


def test_deploy_all_failed_no_fallback_errors(tmp_path):
    cfg = majority_config(eval_policy=EvalPolicy(0.999, 1), fallback_enabled=False)
    job, _ = new_job(tmp_path, cfg)
    job.run_train(two_city_data())
    job.run_eval(city_dataset(
        [(0.0, "athens", "a"), (0.0, "athens", "b"),
         (0.0, "tokyo", "a"), (0.0, "tokyo", "b")]
    ))
    with pytest.raises(NothingDeployableError):
        job.run_deploy()


# -- phase machine --------------------------------------------------------------------

def test_phase_history_is_replayable(tmp_path):
    job, _ = new_job(tmp_path)
    data = two_city_data()
    job.run_train(data)
    job.run_eval(data)
    job.run_deploy()
    job.run_update_cycle(data)
    transitions = [(a, b) for a, b, _ in job.state.history]
    # replay: each transition starts where the previous ended
    for (_, end), (start, _) in zip(transitions, transitions[1:]):
        assert end == start
    assert transitions[0][0] == "Idle"
    assert job.state.phase is Phase.DEPLOYED


def test_illegal_phase_calls_rejected_everywhere(tmp_path):
    job, _ = new_job(tmp_path)
    data = two_city_data()
    with pytest.raises(PhaseError):
        job.run_deploy()
    with pytest.raises(PhaseError):
        job.run_update_cycle(data)
    job.run_train(data)
    with pytest.raises(PhaseError):
        job.run_deploy()
    job.run_eval(data)
    with pytest.raises(PhaseError):
        job.run_eval(data)


# -- update cycle ----------------------------------------------------------------------

def test_update_cycle_learns_unknown_task(tmp_path):
    job, kb = new_job(tmp_path)
    athens = city_dataset([(float(i), "athens", "a") for i in range(10)])
    job.bootstrap(athens)
    assert set(kb.records) == {"athens"}

    tokyo = city_dataset([(float(i), "tokyo", "b") for i in range(10)])
    snapshot = job.run_update_cycle(tokyo)
    assert set(kb.records) == {"athens", "tokyo"}
    assert "tokyo" in snapshot.tasks  # unknown task is known in the next snapshot


def test_update_cycle_isolation_of_untouched_tasks(tmp_path):
    job, kb = new_job(tmp_path)
    job.bootstrap(two_city_data(10))
    tokyo_before = kb.lookup("tokyo")

    athens_new = city_dataset([(float(i), "athens", "b") for i in range(10)])
    job.run_update_cycle(athens_new)
    assert kb.lookup("athens").version == 2
    assert kb.lookup("tokyo") == tokyo_before


def test_update_cycle_knowledge_growth_every_key(tmp_path, rng):
    job, kb = new_job(tmp_path)
    job.bootstrap(city_dataset([(0.0, "seed", "a"), (1.0, "seed", "b")] * 3))
    cities = ["c%d" % i for i in range(6)]
    rows = []
    for city in cities:
        for _ in range(rng.randint(1, 4)):  # including single-sample tasks
            rows.append((rng.random(), city, rng.choice("ab")))
    job.run_update_cycle(city_dataset(rows))
    for city in cities:
        assert kb.lookup(city) is not None


def test_two_identical_update_cycles_identical_predictions(tmp_path):
    probe = [(float(i),) for i in range(12)]
    snaps = []
    for name in ("kb1", "kb2"):
        job, _ = new_job(tmp_path, name=name)
        data = two_city_data(10)
        job.bootstrap(data)
        update = city_dataset(
            [(float(i) + 0.5, "athens", "b") for i in range(10)]
            + [(float(i) + 0.5, "oslo", "a") for i in range(10)]
        )
        snap = job.run_update_cycle(update)
        snaps.append(snap)
    a, b = snaps
    assert set(a.tasks) == set(b.tasks)
    for key in a.tasks:
        for x in probe:
            assert predict(a.tasks[key].model, x) == predict(b.tasks[key].model, x)
    for x in probe:
        assert predict(a.fallback, x) == predict(b.fallback, x)


def test_end_to_end_determinism_byte_identical_snapshots(tmp_path):
    from edgelearn.kb import serialize_snapshot

    outs = []
    for name in ("kbA", "kbB"):
        job, _ = new_job(tmp_path, name=name)
        data = two_city_data(10)
        job.run_train(data)
        job.run_eval(data)
        outs.append(serialize_snapshot(job.run_deploy()))
    assert outs[0] == outs[1]


def test_gate_soundness_no_failed_model_in_snapshot(tmp_path):
    job, kb = new_job(tmp_path, majority_config(eval_policy=EvalPolicy(0.8, 1)))
    job.run_train(two_city_data())
    eval_set = city_dataset(
        [(0.0, "athens", "a")] * 9 + [(1.0, "athens", "b")]
        + [(0.0, "tokyo", "a")] * 9 + [(1.0, "tokyo", "b")]
    )
    job.run_eval(eval_set)
    snapshot = job.run_deploy()
    failed = {k for k, r in kb.records.items() if r.status == STATUS_EVAL_FAILED}
    assert failed and not (failed & set(snapshot.tasks))


# -- holdout split -----------------------------------------------------------------------

def test_holdout_split_keeps_every_key_in_train(rng):
    rows = []
    for city in ("a1", "b2", "c3", "d4"):
        for _ in range(rng.randint(1, 9)):
            rows.append((rng.random(), city, rng.choice("ab")))
    ds = city_dataset(rows)
    bucketing = BucketingConfig((None,))
    train, evals = holdout_split(ds, 0.8, seed=3, bucketing=bucketing)
    train_keys = set(mine_tasks(train, bucketing).parts)
    assert train_keys == {"a1", "b2", "c3", "d4"}
    assert len(train) + len(evals) == len(ds)


def test_holdout_split_deterministic():
    ds = two_city_data(10)
    bucketing = BucketingConfig((None,))
    assert holdout_split(ds, 0.8, 5, bucketing) == holdout_split(ds, 0.8, 5, bucketing)


# -- pluggable learner through the full pipeline --------------------------------------------

class _FirstLabelLearner(Learner):
    """Test-only plugin: predicts the first label it saw during fit."""

    kind = "first-label"
    task_kinds = frozenset({"classification"})
    hyperparameter_defaults: dict = {}

    def fit(self, spec, train, seed):
        return {"label": train.samples[0].label}

    def predict(self, params, features):
        return params["label"]


def test_plugin_learner_runs_full_pipeline(tmp_path):
    register_learner(_FirstLabelLearner())
    cfg = majority_config(learner=EstimatorSpec("first-label"))
    job, kb = new_job(tmp_path)
    job.cfg = cfg
    job = LifelongJob(cfg, kb)
    data = two_city_data(8)
    snapshot = job.bootstrap(data)
    assert set(snapshot.tasks) == {"athens", "tokyo"}
    assert predict(snapshot.tasks["athens"].model, (0.0,)) == "a"
    assert predict(snapshot.tasks["tokyo"].model, (0.0,)) == "b"
    # update cycle, serialization, and the KB all work with the plugin
    snapshot2 = job.run_update_cycle(city_dataset([(9.0, "oslo", "a")] * 6))
    assert "oslo" in snapshot2.tasks
    reopened = kb_open(tmp_path / "kb")
    assert predict(reopened.lookup("oslo").model, (1.0,)) == "a"


# -- config parsing ---------------------------------------------------------------------

def test_parse_job_config_reference_fields():
    schema = banded_schema()
    text = """
    {"learner": {"kind": "tree", "hyperparameters": {"max_depth": 2}},
     "bucketing": {"band": [15.0, 25.0, 35.0]},
     "eval_policy": {"min_accuracy": 0.5, "min_eval_samples": 2},
     "transfer": {"min_samples": 5, "cap": 50},
     "trigger": {"unseen_threshold": 3},
     "fallback_enabled": false,
     "seed": 11}
    """
    cfg = parse_job_config(text, schema)
    assert cfg.learner.kind == "tree"
    assert cfg.bucketing.edges == (None, (15.0, 25.0, 35.0))
    assert cfg.eval_policy == EvalPolicy(0.5, 2)
    assert cfg.transfer == TransferPolicy(5, 50)
    assert cfg.trigger.unseen_threshold == 3
    assert not cfg.fallback_enabled
    assert cfg.seed == 11


def test_parse_job_config_defaults_bucketing_from_schema():
    schema = banded_schema((20.0, 30.0))
    cfg = parse_job_config('{"learner": {"kind": "majority"}}', schema)
    assert cfg.bucketing.edges == (None, (20.0, 30.0))
