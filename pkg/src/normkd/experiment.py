"""Experiment orchestration: config files, multi-seed runs, metrics, analysis.

Experiment config files are flat ``key = value`` text with ``#`` comments.
Unknown keys are rejected and required keys must be present.  Relative
paths resolve against the config file's directory.  The ``NORMKD_SEED``
environment variable (comma-separated integers) overrides the seed list.

Keys::

    train_data, val_data        dataset file paths               (required)
    student_layers              e.g. 16,8,10                     (required)
    seeds                       e.g. 0,1,2,3,4                   (required)
    output_dir                  run directory                    (required)
    rule                        fixed:4 | multiset:1,2,4 | normstd:2.0 |
                                maxval:1.0 | range:1.0; omit for a
                                plain-CE baseline run
    teacher_layers              e.g. 16,64,10 (train a teacher per seed)
    teacher_cache               reuse an existing cache instead
    epochs=120 batch_size=64 learning_rate=0.05 momentum=0.9
    weight_decay=0.0005 lr_decay_epochs=75,90,105 lr_decay_rate=0.1
    alpha=0.1 beta=0.9
    teacher_epochs / teacher_lr_decay_epochs / teacher_weight_decay
                                (default: same as student)
    std_corrected=true          corrected (C-1) vs population std
    detach_student_stat=false   ablation: constant student statistic

The default decay schedule applies only with the default epoch count;
overriding ``epochs`` without ``lr_decay_epochs`` disables decay.

Per-seed outputs land in ``output_dir/seed<k>/``: ``history.csv``
(columns epoch,split,ce,kld,total,top1), ``student.train.nkdl`` /
``student.val.nkdl`` logit caches, and ``teacher.*.nkdl`` when the
teacher is trained here.  ``output_dir/summary.csv`` (columns
seed,rule,params,top1) gets one row per seed plus an ``aggregate`` row
whose top1 field is ``mean±std`` (sample std over seeds).  Students
always distill from the serialized float32 cache values, so rerunning a
config reproduces every output byte for byte.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import Dataset, read_dataset
from .distill import combine, kd_loss, multi_temp_kld, normkd_loss, distill_loss
from .errors import ConfigError, ContractError
from .ioutil import atomic_write_text
from .logitcache import read_logit_cache, write_logit_cache
from .logitstats import (
    LogitRecord,
    MaxVal,
    Range,
    TemperatureRule,
    parse_rule,
    row_std,
    rule_label,
    summarize,
)
from .numcore import grad_check, softmax_values
from .trainer import (
    MlpSpec,
    TrainConfig,
    TrainHistory,
    cache_teacher_logits,
    evaluate,
    train,
)

SEED_ENV_VAR = "NORMKD_SEED"
GRAD_CHECK_LOSSES = ("kd", "multi_temp", "normkd", "maxval", "range", "combine")
GRAD_CHECK_TOLERANCE = 1e-4

_REQUIRED_KEYS = ("train_data", "val_data", "student_layers", "seeds", "output_dir")
_OPTIONAL_KEYS = (
    "teacher_layers",
    "teacher_cache",
    "rule",
    "epochs",
    "batch_size",
    "learning_rate",
    "momentum",
    "weight_decay",
    "lr_decay_epochs",
    "lr_decay_rate",
    "alpha",
    "beta",
    "teacher_epochs",
    "teacher_lr_decay_epochs",
    "teacher_weight_decay",
    "std_corrected",
    "detach_student_stat",
)


@dataclass(frozen=True)
class ExperimentConfig:
    train_data: Path
    val_data: Path
    student_layers: tuple[int, ...]
    seeds: tuple[int, ...]
    output_dir: Path
    rule: TemperatureRule | None = None
    teacher_layers: tuple[int, ...] | None = None
    teacher_cache: Path | None = None
    epochs: int = 120
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_epochs: tuple[int, ...] = (75, 90, 105)
    lr_decay_rate: float = 0.1
    alpha: float = 0.1
    beta: float = 0.9
    teacher_epochs: int | None = None
    teacher_lr_decay_epochs: tuple[int, ...] | None = None
    teacher_weight_decay: float | None = None
    std_corrected: bool = True
    detach_student_stat: bool = False


def _parse_int_tuple(text: str, key: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma-separated integers, got {text!r}") from exc


def _parse_bool(text: str, key: str) -> bool:
    norm = text.strip().lower()
    if norm in ("true", "1", "yes"):
        return True
    if norm in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {text!r}")


def _parse_number(raw: dict, key: str, default, convert):
    if key not in raw:
        return default
    try:
        return convert(raw[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: bad value {raw[key]!r}") from exc


def load_experiment_config(path: Path | str, env=None) -> ExperimentConfig:
    """Parse and validate an experiment config file."""
    path = Path(path)
    env = os.environ if env is None else env
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc

    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key = key.strip()
        if key not in _REQUIRED_KEYS and key not in _OPTIONAL_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()

    missing = [k for k in _REQUIRED_KEYS if k not in raw]
    if missing:
        raise ConfigError(f"{path}: missing required keys: {', '.join(missing)}")

    base = path.parent

    def _path(key: str) -> Path:
        return (base / raw[key]).resolve() if not Path(raw[key]).is_absolute() else Path(raw[key])

    seeds = _parse_int_tuple(raw["seeds"], "seeds")
    override = env.get(SEED_ENV_VAR, "")
    if override:
        seeds = _parse_int_tuple(override, SEED_ENV_VAR)
    if not seeds:
        raise ConfigError("seed list is empty")
    if any(s < 0 for s in seeds):
        raise ConfigError(f"seeds must be nonnegative, got {seeds}")

    rule = parse_rule(raw["rule"]) if raw.get("rule") else None
    teacher_layers = (
        _parse_int_tuple(raw["teacher_layers"], "teacher_layers")
        if "teacher_layers" in raw
        else None
    )
    teacher_cache = _path("teacher_cache") if "teacher_cache" in raw else None
    if rule is not None and teacher_layers is None and teacher_cache is None:
        raise ConfigError("rule given but neither teacher_layers nor teacher_cache is set")

    epochs = _parse_number(raw, "epochs", 120, int)
    if "lr_decay_epochs" in raw:
        decay = _parse_int_tuple(raw["lr_decay_epochs"], "lr_decay_epochs")
    elif "epochs" in raw:
        decay = ()
    else:
        decay = (75, 90, 105)
    teacher_epochs = _parse_number(raw, "teacher_epochs", None, int)
    if "teacher_lr_decay_epochs" in raw:
        teacher_decay = _parse_int_tuple(raw["teacher_lr_decay_epochs"], "teacher_lr_decay_epochs")
    elif teacher_epochs is not None:
        teacher_decay = ()
    else:
        teacher_decay = None

    return ExperimentConfig(
        train_data=_path("train_data"),
        val_data=_path("val_data"),
        student_layers=_parse_int_tuple(raw["student_layers"], "student_layers"),
        seeds=seeds,
        output_dir=_path("output_dir"),
        rule=rule,
        teacher_layers=teacher_layers,
        teacher_cache=teacher_cache,
        epochs=epochs,
        batch_size=_parse_number(raw, "batch_size", 64, int),
        learning_rate=_parse_number(raw, "learning_rate", 0.05, float),
        momentum=_parse_number(raw, "momentum", 0.9, float),
        weight_decay=_parse_number(raw, "weight_decay", 5e-4, float),
        lr_decay_epochs=decay,
        lr_decay_rate=_parse_number(raw, "lr_decay_rate", 0.1, float),
        alpha=_parse_number(raw, "alpha", 0.1, float),
        beta=_parse_number(raw, "beta", 0.9, float),
        teacher_epochs=teacher_epochs,
        teacher_lr_decay_epochs=teacher_decay,
        teacher_weight_decay=_parse_number(raw, "teacher_weight_decay", None, float),
        std_corrected=_parse_bool(raw["std_corrected"], "std_corrected")
        if "std_corrected" in raw
        else True,
        detach_student_stat=_parse_bool(raw["detach_student_stat"], "detach_student_stat")
        if "detach_student_stat" in raw
        else False,
    )


def _write_csv(path: Path, header: tuple[str, ...], rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def write_history_csv(path: Path | str, history: TrainHistory) -> None:
    rows = [
        (r.epoch, r.split, repr(r.ce), repr(r.kld), repr(r.total), repr(r.top1))
        for r in history
    ]
    _write_csv(Path(path), ("epoch", "split", "ce", "kld", "total", "top1"), rows)


def write_summary_csv(path: Path | str, rows) -> None:
    _write_csv(Path(path), ("seed", "rule", "params", "top1"), rows)


def _student_config(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
        lr_decay_epochs=cfg.lr_decay_epochs,
        lr_decay_rate=cfg.lr_decay_rate,
        alpha=cfg.alpha,
        beta=cfg.beta,
        rule=cfg.rule,
        seed=seed,
        std_corrected=cfg.std_corrected,
        detach_student_stat=cfg.detach_student_stat,
    )


def _teacher_config(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    epochs = cfg.teacher_epochs if cfg.teacher_epochs is not None else cfg.epochs
    decay = (
        cfg.teacher_lr_decay_epochs
        if cfg.teacher_lr_decay_epochs is not None
        else cfg.lr_decay_epochs
    )
    wd = cfg.teacher_weight_decay if cfg.teacher_weight_decay is not None else cfg.weight_decay
    return TrainConfig(
        epochs=epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        momentum=cfg.momentum,
        weight_decay=wd,
        lr_decay_epochs=decay,
        lr_decay_rate=cfg.lr_decay_rate,
        alpha=1.0,
        beta=0.0,
        rule=None,
        seed=seed,
    )


def _train_teacher_for_seed(
    cfg: ExperimentConfig, seed: int, train_ds: Dataset, val_ds: Dataset, seed_dir: Path
) -> tuple[list[LogitRecord], TrainHistory, float]:
    spec = MlpSpec(cfg.teacher_layers, init_seed=seed)
    params, history = train(spec, _teacher_config(cfg, seed), train_ds, None, val_ds)
    write_logit_cache(seed_dir / "teacher.train.nkdl", cache_teacher_logits(params, train_ds))
    write_logit_cache(seed_dir / "teacher.val.nkdl", cache_teacher_logits(params, val_ds))
    # distill from the serialized float32 values, not the in-memory float64 ones
    records = read_logit_cache(seed_dir / "teacher.train.nkdl")
    return records, history, evaluate(params, val_ds)


@dataclass(frozen=True)
class ExperimentResult:
    output_dir: Path
    summary_path: Path
    rows: tuple[tuple[str, str, str, str], ...]
    mean_top1: float
    std_top1: float


def _aggregate(rows: list[tuple[str, str, str, str]]) -> tuple[float, float]:
    top1s = np.array([float(r[3]) for r in rows])
    mean = float(top1s.mean())
    std = float(top1s.std(ddof=1)) if top1s.size > 1 else 0.0
    return mean, std


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Train (teacher and) student per seed; write caches, histories, summary."""
    train_ds = read_dataset(cfg.train_data)
    val_ds = read_dataset(cfg.val_data)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    name, params_label = rule_label(cfg.rule)
    rows: list[tuple[str, str, str, str]] = []
    for seed in cfg.seeds:
        seed_dir = cfg.output_dir / f"seed{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        teacher_records = None
        if cfg.rule is not None:
            if cfg.teacher_cache is not None:
                teacher_records = read_logit_cache(cfg.teacher_cache)
            else:
                teacher_records, _, _ = _train_teacher_for_seed(
                    cfg, seed, train_ds, val_ds, seed_dir
                )
        spec = MlpSpec(cfg.student_layers, init_seed=seed)
        params, history = train(
            spec, _student_config(cfg, seed), train_ds, teacher_records, val_ds
        )
        write_history_csv(seed_dir / "history.csv", history)
        write_logit_cache(seed_dir / "student.train.nkdl", cache_teacher_logits(params, train_ds))
        write_logit_cache(seed_dir / "student.val.nkdl", cache_teacher_logits(params, val_ds))
        rows.append((str(seed), name, params_label, repr(evaluate(params, val_ds))))
    mean, std = _aggregate(rows)
    all_rows = rows + [("aggregate", name, params_label, f"{mean!r}±{std!r}")]
    summary_path = cfg.output_dir / "summary.csv"
    write_summary_csv(summary_path, all_rows)
    return ExperimentResult(cfg.output_dir, summary_path, tuple(all_rows), mean, std)


def run_teacher_training(cfg: ExperimentConfig) -> ExperimentResult:
    """Teacher-only runs: train, cache logits, and summarize val accuracy."""
    if cfg.teacher_layers is None:
        raise ConfigError("teacher training requires teacher_layers")
    train_ds = read_dataset(cfg.train_data)
    val_ds = read_dataset(cfg.val_data)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    rows: list[tuple[str, str, str, str]] = []
    for seed in cfg.seeds:
        seed_dir = cfg.output_dir / f"seed{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        _, history, top1 = _train_teacher_for_seed(cfg, seed, train_ds, val_ds, seed_dir)
        write_history_csv(seed_dir / "teacher_history.csv", history)
        rows.append((str(seed), "none", "", repr(top1)))
    mean, std = _aggregate(rows)
    all_rows = rows + [("aggregate", "none", "", f"{mean!r}±{std!r}")]
    summary_path = cfg.output_dir / "teacher_summary.csv"
    write_summary_csv(summary_path, all_rows)
    return ExperimentResult(cfg.output_dir, summary_path, tuple(all_rows), mean, std)


# ---------------------------------------------------------------------------
# Analysis: per-sample statistics and class-difference matrices


@dataclass(frozen=True, eq=False)
class AnalysisResult:
    """Per-sample stats plus the class-averaged |student - teacher| prob
    difference matrices, in raw (T=1) and per-sample-normalized variants."""

    sample_ids: np.ndarray
    labels: np.ndarray
    teacher_stats: dict[str, np.ndarray]
    student_stats: dict[str, np.ndarray]
    raw_matrix: np.ndarray
    norm_matrix: np.ndarray


def frobenius(matrix: np.ndarray) -> float:
    return float(np.sqrt((matrix * matrix).sum()))


def _diff_matrix(p_s: np.ndarray, p_t: np.ndarray, labels: np.ndarray, c: int) -> np.ndarray:
    out = np.zeros((c, c))
    for c1 in range(c):
        mask = labels == c1
        if mask.any():
            out[c1] = np.abs((p_s[mask] - p_t[mask]).mean(axis=0))
    return out


def analyze(
    teacher_records: list[LogitRecord],
    student_records: list[LogitRecord],
    t_norm: float = 2.0,
    epsilon: float = 1e-8,
    corrected: bool = True,
) -> AnalysisResult:
    """Compare teacher and student caches sample by sample.

    Matrix entry [c1, c2] is |mean over samples of true class c1 of
    (student prob of c2 - teacher prob of c2)|, with probabilities taken
    at T=1 (raw) and at each sample's own normalized temperature (norm).
    Classes with no samples keep zero rows.
    """
    if len(teacher_records) != len(student_records) or not teacher_records:
        raise ContractError(
            f"cache sizes differ or are empty: {len(teacher_records)} vs {len(student_records)}"
        )
    c = teacher_records[0].logits.shape[0]
    for t_rec, s_rec in zip(teacher_records, student_records):
        if t_rec.logits.shape[0] != c or s_rec.logits.shape[0] != c:
            raise ContractError("caches disagree on class count")
        if t_rec.sample_id != s_rec.sample_id or t_rec.label != s_rec.label:
            raise ContractError(
                f"caches disagree on sample order at id {t_rec.sample_id}"
            )
    z_t = np.stack([r.logits for r in teacher_records])
    z_s = np.stack([r.logits for r in student_records])
    labels = np.array([r.label for r in teacher_records])

    def _stats(records):
        s = summarize(records, corrected)
        return {
            "sigma": s.sigma,
            "v_max": s.v_max,
            "v_min": s.v_min,
            "entropy": s.entropy,
        }

    def _norm_probs(z):
        temps = np.maximum(row_std(z, corrected), epsilon) * t_norm
        return softmax_values(z / temps)

    return AnalysisResult(
        sample_ids=np.array([r.sample_id for r in teacher_records]),
        labels=labels,
        teacher_stats=_stats(teacher_records),
        student_stats=_stats(student_records),
        raw_matrix=_diff_matrix(softmax_values(z_s), softmax_values(z_t), labels, c),
        norm_matrix=_diff_matrix(_norm_probs(z_s), _norm_probs(z_t), labels, c),
    )


def write_analysis(result: AnalysisResult, out_dir: Path | str) -> tuple[Path, Path]:
    """Write analyze_summary.csv and analyze_matrix.csv; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_path = out_dir / "analyze_summary.csv"
    stat_names = ("sigma", "v_max", "v_min", "entropy")
    header = ["sample_id", "label"]
    for stat in stat_names:
        header += [f"teacher_{stat}", f"student_{stat}"]
    rows = []
    for i in range(result.sample_ids.size):
        row = [int(result.sample_ids[i]), int(result.labels[i])]
        for stat in stat_names:
            row += [
                repr(float(result.teacher_stats[stat][i])),
                repr(float(result.student_stats[stat][i])),
            ]
        rows.append(tuple(row))
    _write_csv(summary_path, tuple(header), rows)

    matrix_path = out_dir / "analyze_matrix.csv"
    c = result.raw_matrix.shape[0]
    header = ("variant", "true_class") + tuple(f"abs_mean_prob_diff_{j}" for j in range(c))
    rows = []
    for variant, matrix in (("raw", result.raw_matrix), ("normalized", result.norm_matrix)):
        for c1 in range(c):
            rows.append((variant, c1) + tuple(repr(float(v)) for v in matrix[c1]))
    _write_csv(matrix_path, header, rows)
    return summary_path, matrix_path


# ---------------------------------------------------------------------------
# Finite-difference audit of every loss


def _with_flipped_gradient(fn):
    """Wrap a loss so its analytic gradient (not its value) flips sign.

    Only used to demonstrate that the finite-difference audit catches a
    wrong backward rule.
    """

    def flipped(student):
        out = fn(student)
        return out.tape._record(out.data.copy(), (out,), lambda g: (-g,))

    return flipped


def _loss_instance(name: str, rng: np.random.Generator):
    """One random (loss function, student point) pair for the audit.

    The MaxVal instances shift all logits upward so the student's row
    maximum stays well above the epsilon floor: at the floor the
    temperature collapses to ~1e-8 and the loss, though finite and
    correctly differentiated, is too ill-conditioned for a 1e-5
    finite-difference probe.  Derivatives are checked on the smooth
    branch, like every other kink in the suite.
    """
    n = int(rng.integers(2, 5))
    c = int(rng.integers(3, 7))
    shift = 2.0 if name == "maxval" else 0.0
    z_t = rng.normal(shift, 1.5, (n, c))
    z_s = rng.normal(shift, 1.5, (n, c))
    labels = rng.integers(0, c, n)
    if name == "kd":
        t = float(rng.uniform(1.0, 5.0))
        return lambda s: kd_loss(s, z_t, labels, t, alpha=0.3, beta=0.7).node, z_s
    if name == "multi_temp":
        k = int(rng.integers(1, 4))
        temps = tuple(float(t) for t in rng.uniform(0.5, 6.0, k))
        return lambda s: multi_temp_kld(s, z_t, temps), z_s
    if name == "normkd":
        t_norm = float(rng.uniform(0.5, 3.0))
        return lambda s: normkd_loss(s, z_t, t_norm).node, z_s
    if name in ("maxval", "range"):
        rule = (MaxVal if name == "maxval" else Range)(float(rng.uniform(0.5, 3.0)))
        return lambda s: distill_loss(rule, s, z_t, labels, alpha=0.2, beta=0.8).node, z_s
    if name == "combine":
        t = float(rng.uniform(1.0, 5.0))
        t_norm = float(rng.uniform(0.5, 3.0))

        def fn(s):
            return combine(
                [
                    (0.6, normkd_loss(s, z_t, t_norm).node),
                    (0.4, kd_loss(s, z_t, labels, t, alpha=0.0, beta=1.0).node),
                ]
            )

        return fn, z_s
    raise ContractError(f"unknown loss {name!r}")


def gradient_check_suite(
    instances: int = 100,
    step: float = 1e-5,
    seed: int = 20250809,
    inject_fault: str | None = None,
) -> list[tuple[str, float]]:
    """Max finite-difference relative error per loss over random instances.

    Returns one (name, max_error) row per implemented loss; every error
    should sit below GRAD_CHECK_TOLERANCE.  ``inject_fault`` names a loss
    whose analytic gradient gets sign-flipped, as a sensitivity self-test
    of the audit itself.
    """
    if inject_fault is not None and inject_fault not in GRAD_CHECK_LOSSES:
        raise ConfigError(
            f"unknown loss {inject_fault!r}; choose from {', '.join(GRAD_CHECK_LOSSES)}"
        )
    results = []
    for name in GRAD_CHECK_LOSSES:
        rng = np.random.default_rng((seed, GRAD_CHECK_LOSSES.index(name)))
        worst = 0.0
        for _ in range(instances):
            fn, z_s = _loss_instance(name, rng)
            if inject_fault == name:
                fn = _with_flipped_gradient(fn)
            worst = max(worst, grad_check(fn, z_s, step))
        results.append((name, worst))
    return results
