"""Config parsing, orchestrated runs, analysis, and the gradient audit."""

import csv

import numpy as np
import pytest

from normkd.datasets import make_blobs, write_dataset
from normkd.errors import ConfigError, ContractError
from normkd.experiment import (
    GRAD_CHECK_LOSSES,
    GRAD_CHECK_TOLERANCE,
    analyze,
    frobenius,
    gradient_check_suite,
    load_experiment_config,
    run_experiment,
    run_teacher_training,
    write_analysis,
)
from normkd.logitcache import write_logit_cache
from normkd.logitstats import Fixed, LogitRecord, sample_std


BASE_CONFIG = """
# demo experiment
train_data = blobs.train.txt
val_data = blobs.val.txt
teacher_layers = 4,12,3
student_layers = 4,6,3
rule = fixed:4
seeds = 0,1
output_dir = out
epochs = 3
batch_size = 16
"""


def write_demo_inputs(tmp_path, per_class=10):
    train_ds, val_ds = make_blobs(3, 4, per_class, 3.0, seed=9)
    write_dataset(tmp_path / "blobs.train.txt", train_ds)
    write_dataset(tmp_path / "blobs.val.txt", val_ds)
    return train_ds, val_ds


def write_config(tmp_path, text=BASE_CONFIG):
    path = tmp_path / "exp.cfg"
    path.write_text(text)
    return path


class TestConfigParsing:
    def test_parses_and_resolves_paths(self, tmp_path):
        write_demo_inputs(tmp_path)
        cfg = load_experiment_config(write_config(tmp_path), env={})
        assert cfg.train_data == tmp_path / "blobs.train.txt"
        assert cfg.rule == Fixed(4.0)
        assert cfg.seeds == (0, 1)
        assert cfg.epochs == 3
        assert cfg.lr_decay_epochs == ()
        assert cfg.momentum == 0.9

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path, BASE_CONFIG + "bogus = 1\n")
        with pytest.raises(ConfigError, match="unknown key 'bogus'"):
            load_experiment_config(path, env={})

    def test_missing_required_rejected(self, tmp_path):
        path = write_config(tmp_path, "train_data = x\n")
        with pytest.raises(ConfigError, match="missing required keys"):
            load_experiment_config(path, env={})

    def test_duplicate_key_rejected(self, tmp_path):
        path = write_config(tmp_path, BASE_CONFIG + "epochs = 4\n")
        with pytest.raises(ConfigError, match="duplicate"):
            load_experiment_config(path, env={})

    def test_rule_without_teacher_rejected(self, tmp_path):
        text = BASE_CONFIG.replace("teacher_layers = 4,12,3\n", "")
        with pytest.raises(ConfigError, match="teacher"):
            load_experiment_config(write_config(tmp_path, text), env={})

    def test_no_rule_is_plain_ce_baseline(self, tmp_path):
        text = BASE_CONFIG.replace("rule = fixed:4\n", "")
        cfg = load_experiment_config(write_config(tmp_path, text), env={})
        assert cfg.rule is None

    def test_seed_env_override(self, tmp_path):
        path = write_config(tmp_path)
        cfg = load_experiment_config(path, env={"NORMKD_SEED": "5,6,7"})
        assert cfg.seeds == (5, 6, 7)

    def test_default_schedule_only_with_default_epochs(self, tmp_path):
        text = BASE_CONFIG.replace("epochs = 3\n", "")
        cfg = load_experiment_config(write_config(tmp_path, text), env={})
        assert cfg.epochs == 120
        assert cfg.lr_decay_epochs == (75, 90, 105)


class TestRunExperiment:
    def test_outputs_and_aggregate(self, tmp_path):
        write_demo_inputs(tmp_path)
        cfg = load_experiment_config(write_config(tmp_path), env={})
        result = run_experiment(cfg)
        assert result.summary_path.exists()
        for seed in (0, 1):
            seed_dir = tmp_path / "out" / f"seed{seed}"
            for name in (
                "history.csv",
                "teacher.train.nkdl",
                "teacher.val.nkdl",
                "student.train.nkdl",
                "student.val.nkdl",
            ):
                assert (seed_dir / name).exists(), name

        with result.summary_path.open() as fh:
            rows = list(csv.DictReader(fh))
        assert [r["seed"] for r in rows] == ["0", "1", "aggregate"]
        per_seed = [float(r["top1"]) for r in rows[:2]]
        mean_str, std_str = rows[2]["top1"].split("±")
        assert float(mean_str) == np.mean(per_seed)
        assert float(std_str) == np.std(per_seed, ddof=1)
        assert rows[0]["rule"] == "fixed"

    def test_rerun_byte_identical(self, tmp_path):
        write_demo_inputs(tmp_path)
        cfg = load_experiment_config(write_config(tmp_path), env={})
        run_experiment(cfg)
        first = {
            p.relative_to(tmp_path): p.read_bytes()
            for p in (tmp_path / "out").rglob("*")
            if p.is_file()
        }
        run_experiment(cfg)
        for rel, data in first.items():
            assert (tmp_path / rel).read_bytes() == data, rel

    def test_history_csv_columns(self, tmp_path):
        write_demo_inputs(tmp_path)
        cfg = load_experiment_config(write_config(tmp_path), env={})
        run_experiment(cfg)
        with (tmp_path / "out" / "seed0" / "history.csv").open() as fh:
            reader = csv.reader(fh)
            assert next(reader) == ["epoch", "split", "ce", "kld", "total", "top1"]
            rows = list(reader)
        assert len(rows) == 2 * cfg.epochs
        assert {r[1] for r in rows} == {"train", "val"}

    def test_plain_ce_baseline_run(self, tmp_path):
        write_demo_inputs(tmp_path)
        text = BASE_CONFIG.replace("rule = fixed:4\n", "")
        cfg = load_experiment_config(write_config(tmp_path, text), env={})
        result = run_experiment(cfg)
        assert result.rows[0][1] == "none"
        assert not (tmp_path / "out" / "seed0" / "teacher.train.nkdl").exists()

    def test_teacher_cache_reused(self, tmp_path):
        train_ds, _ = write_demo_inputs(tmp_path)
        from normkd.trainer import MlpSpec, cache_teacher_logits, init_mlp

        records = cache_teacher_logits(init_mlp(MlpSpec((4, 12, 3), init_seed=0)), train_ds)
        write_logit_cache(tmp_path / "teacher.nkdl", records)
        text = BASE_CONFIG.replace(
            "teacher_layers = 4,12,3", "teacher_cache = teacher.nkdl"
        )
        cfg = load_experiment_config(write_config(tmp_path, text), env={})
        result = run_experiment(cfg)
        assert result.summary_path.exists()
        assert not (tmp_path / "out" / "seed0" / "teacher.train.nkdl").exists()

    def test_aggregate_mean_matches_recomputation(self, tmp_path):
        write_demo_inputs(tmp_path)
        cfg = load_experiment_config(write_config(tmp_path), env={})
        result = run_experiment(cfg)
        per_seed = [float(r[3]) for r in result.rows[:-1]]
        assert result.mean_top1 == np.mean(per_seed)

    def test_run_teacher_training(self, tmp_path):
        write_demo_inputs(tmp_path)
        cfg = load_experiment_config(write_config(tmp_path), env={})
        result = run_teacher_training(cfg)
        assert result.summary_path.name == "teacher_summary.csv"
        assert (tmp_path / "out" / "seed0" / "teacher.train.nkdl").exists()
        assert (tmp_path / "out" / "seed0" / "teacher_history.csv").exists()


def fake_records(rng, n, c, label_count=None):
    labels = rng.integers(0, label_count or c, size=n)
    return [LogitRecord(i, int(labels[i]), rng.normal(0, 2, size=c)) for i in range(n)]


class TestAnalyze:
    def test_identical_caches_zero_matrices(self):
        rng = np.random.default_rng(0)
        records = fake_records(rng, 12, 4)
        result = analyze(records, records)
        np.testing.assert_array_equal(result.raw_matrix, np.zeros((4, 4)))
        np.testing.assert_array_equal(result.norm_matrix, np.zeros((4, 4)))
        assert frobenius(result.raw_matrix) == 0.0

    def test_matrix_entries_nonnegative(self):
        rng = np.random.default_rng(1)
        teacher = fake_records(rng, 30, 5)
        student = [
            LogitRecord(r.sample_id, r.label, r.logits + rng.normal(0, 0.5, size=5))
            for r in teacher
        ]
        result = analyze(teacher, student)
        assert np.all(result.raw_matrix >= 0)
        assert np.all(result.norm_matrix >= 0)
        assert frobenius(result.raw_matrix) > 0

    def test_sigma_column_matches_sample_std(self):
        rng = np.random.default_rng(2)
        teacher = fake_records(rng, 10, 4)
        student = [LogitRecord(r.sample_id, r.label, rng.normal(size=4)) for r in teacher]
        result = analyze(teacher, student)
        for i, rec in enumerate(teacher):
            assert result.teacher_stats["sigma"][i] == sample_std(rec.logits)
        for i, rec in enumerate(student):
            assert result.student_stats["sigma"][i] == sample_std(rec.logits)

    def test_mismatched_caches_rejected(self):
        rng = np.random.default_rng(3)
        teacher = fake_records(rng, 5, 4)
        student = fake_records(rng, 6, 4)
        with pytest.raises(ContractError):
            analyze(teacher, student)
        shuffled = list(reversed(fake_records(rng, 5, 4)))
        with pytest.raises(ContractError):
            analyze(teacher, shuffled)

    def test_write_analysis_files(self, tmp_path):
        rng = np.random.default_rng(4)
        teacher = fake_records(rng, 8, 3)
        student = [LogitRecord(r.sample_id, r.label, rng.normal(size=3)) for r in teacher]
        summary_path, matrix_path = write_analysis(analyze(teacher, student), tmp_path)
        with summary_path.open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 8
        assert "teacher_sigma" in rows[0]
        with matrix_path.open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 * 3
        assert {r["variant"] for r in rows} == {"raw", "normalized"}


class TestAnalyzeDemoRun:
    def test_normkd_student_matches_normalized_logits_better_than_raw(self):
        """On the bundled desk-scale run, the per-sample-normalized
        difference matrix of a NormKD-trained student is much smaller in
        Frobenius norm than the raw (T=1) one: the student learns the
        teacher's normalized logit shape, not its scale."""
        from normkd.datasets import make_blobs
        from normkd.logitstats import NormStd
        from normkd.trainer import MlpSpec, TrainConfig, cache_teacher_logits, train

        train_ds, val_ds = make_blobs(10, 16, 200, 2.0, seed=42)
        teacher_cfg = TrainConfig(
            epochs=60, lr_decay_epochs=(42, 52), alpha=1.0, beta=0.0,
            weight_decay=2e-2, seed=0,
        )
        t_params, _ = train(MlpSpec((16, 64, 10), init_seed=0), teacher_cfg, train_ds, None)
        cache = cache_teacher_logits(t_params, train_ds)
        student_cfg = TrainConfig(
            epochs=60, lr_decay_epochs=(42, 52), alpha=0.1, beta=0.9,
            weight_decay=5e-2, rule=NormStd(2.0), seed=0,
        )
        s_params, _ = train(MlpSpec((16, 8, 10), init_seed=0), student_cfg, train_ds, cache)
        result = analyze(
            cache_teacher_logits(t_params, val_ds), cache_teacher_logits(s_params, val_ds)
        )
        assert frobenius(result.norm_matrix) < frobenius(result.raw_matrix)


class TestGradientCheckSuite:
    def test_one_row_per_loss_and_all_pass(self):
        results = gradient_check_suite(instances=5)
        assert [name for name, _ in results] == list(GRAD_CHECK_LOSSES)
        for name, err in results:
            assert err <= GRAD_CHECK_TOLERANCE, (name, err)

    def test_injected_fault_detected(self):
        results = dict(gradient_check_suite(instances=2, inject_fault="normkd"))
        assert results["normkd"] >= 0.5
        assert results["kd"] <= GRAD_CHECK_TOLERANCE

    def test_unknown_fault_rejected(self):
        with pytest.raises(ConfigError):
            gradient_check_suite(instances=1, inject_fault="nope")
