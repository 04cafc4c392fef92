"""Differentiable distillation objectives over teacher/student logits.

All losses share these conventions:

* The divergence direction is KL(teacher || student): the teacher's
  softened prediction is the reference distribution and only the student
  side carries gradient.  Written argument orders elsewhere are notation;
  this module's ``kl_divergence(p_teacher, p_student)`` order is the
  authoritative one.
* Batch reduction is: sum over classes per sample, multiply by that
  sample's squared-temperature compensation weight, then mean over the
  batch.
* Cross entropy is always computed at temperature 1 on the raw student
  logits; no temperature rule touches it.
* Softmax and log-softmax always go through max subtraction, and KL is
  evaluated from log-probabilities.
* The student argument of every loss may be a plain (N, C) array or a
  taped :class:`~normkd.numcore.Tensor`; teacher logits are always
  treated as constants.

The per-sample losses floor each sample's statistic at ``epsilon`` before
scaling, so constant-logit rows soften to near-uniform instead of
dividing by zero.  The student-side statistic (its standard deviation,
maximum, or range) is differentiated through by default; pass
``detach_student_stat=True`` to treat it as a constant for ablations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, NumericError
from .logitstats import (
    DEFAULT_EPSILON,
    Fixed,
    MaxVal,
    MultiSet,
    NormStd,
    Range,
    TemperatureRule,
)
from .numcore import (
    Tensor,
    add,
    as_matrix,
    as_vector,
    divide,
    exp,
    gather_rows,
    log,
    log_softmax_rows,
    log_softmax_values,
    max_rows,
    maximum,
    mean_all,
    min_rows,
    multiply,
    std_rows,
    subtract,
    sum_rows,
    value_of,
)

DEFAULT_T_NORM = 2.0
DEFAULT_ALPHA = 0.1
DEFAULT_BETA = 0.9


@dataclass(eq=False)
class LossReport:
    """Decomposed loss value: total = alpha * ce_part + beta * kld_part.

    ``per_sample_weight`` holds the squared-temperature compensation
    weight of each sample (constant T**2 for fixed-temperature losses).
    ``node`` is the taped scalar when the student side was a Tensor, for
    backpropagation; it is None for plain-array calls.
    """

    total: float
    ce_part: float
    kld_part: float
    alpha: float
    beta: float
    per_sample_weight: np.ndarray
    batch_size: int
    node: Tensor | None = None


def soften(logits, temperature: float) -> np.ndarray:
    """Temperature-softened prediction exp(z_i/T) / sum_j exp(z_j/T)."""
    if not temperature > 0.0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    z = as_vector(logits, "logits")
    return np.exp(log_softmax_values(z / float(temperature)))


def norm_soften(
    logits,
    t_norm: float = DEFAULT_T_NORM,
    epsilon: float = DEFAULT_EPSILON,
    corrected: bool = True,
) -> np.ndarray:
    """Soften with the sample's own scale: T = max(std(z), epsilon) * t_norm.

    Equivalent to softening the mean-centered logits, since a constant
    shift cancels in the softmax.
    """
    from .logitstats import sample_std

    z = as_vector(logits, "logits")
    t = max(sample_std(z, corrected), epsilon) * t_norm
    return soften(z, t)


def kl_divergence(p_teacher, p_student) -> float:
    """KL(p_teacher || p_student) in nats, with the 0*ln(0) = 0 convention.

    Both arguments must lie on the probability simplex.  A zero student
    probability where the teacher is positive is rejected; softened
    outputs of this module are strictly positive, so this only affects
    callers passing raw distributions.  A negative rounding residue on
    the order of 1e-16 is clamped to zero.
    """
    p = as_vector(p_teacher, "p_teacher")
    q = as_vector(p_student, "p_student")
    if p.shape != q.shape:
        raise DimensionError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    for name, d in (("p_teacher", p), ("p_student", q)):
        if d.min() < 0.0 or d.max() > 1.0 + 1e-12 or abs(d.sum() - 1.0) > 1e-9:
            raise ContractError(f"{name} is not a probability distribution: {d}")
    mask = p > 0.0
    if np.any(q[mask] == 0.0):
        raise NumericError("p_student has a zero where p_teacher is positive")
    kl = float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))
    return max(kl, 0.0)


def multi_temp_prediction(logits, temps) -> np.ndarray:
    """Arithmetic mean of the predictions softened at each temperature."""
    temps = _check_temps(temps)
    z = as_vector(logits, "logits")
    acc = soften(z, temps[0])
    for t in temps[1:]:
        acc = acc + soften(z, t)
    return acc / float(len(temps))


def _check_temps(temps) -> tuple[float, ...]:
    temps = tuple(float(t) for t in temps)
    if not temps:
        raise ContractError("temperature set must be nonempty")
    for t in temps:
        if not t > 0.0:
            raise ContractError(f"temperature must be positive, got {t}")
    return temps


def _check_pair(student_logits, teacher_logits) -> tuple[np.ndarray, np.ndarray]:
    z_s = value_of(student_logits)
    if z_s.ndim != 2:
        raise DimensionError(f"student logits must be (N, C), got shape {z_s.shape}")
    if not np.all(np.isfinite(z_s)):
        raise NumericError("student logits contain non-finite entries")
    z_t = as_matrix(teacher_logits, "teacher logits")
    if z_s.shape != z_t.shape:
        raise DimensionError(
            f"student logits shape {z_s.shape} != teacher logits shape {z_t.shape}"
        )
    return z_s, z_t


def _as_labels(labels, n: int, c: int) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.shape != (n,):
        raise DimensionError(f"labels shape {arr.shape} does not match batch size {n}")
    if not np.issubdtype(arr.dtype, np.integer):
        cast = arr.astype(np.int64)
        if not np.array_equal(cast, arr):
            raise ContractError("labels must be integers")
        arr = cast
    if arr.size and (arr.min() < 0 or arr.max() >= c):
        raise ContractError(f"labels must lie in [0, {c})")
    return arr.astype(np.int64)


def cross_entropy(student_logits, labels):
    """Mean over the batch of -log softmax(z)[label], at temperature 1."""
    z_s = value_of(student_logits)
    labels = _as_labels(labels, z_s.shape[0], z_s.shape[1])
    log_p = log_softmax_rows(student_logits)
    return mean_all(multiply(gather_rows(log_p, labels), -1.0))


def _kld_reduction(p_t, lp_t, lp_s, compensation):
    """mean over samples of compensation * sum over classes of p_t*(lp_t-lp_s)."""
    per_sample = sum_rows(multiply(p_t, subtract(lp_t, lp_s)))
    return mean_all(multiply(per_sample, compensation))


def _log_mean_prediction(logits, temps):
    """Log of the temperature-averaged prediction, row-wise, stabilized.

    Computed as logsumexp over the per-temperature log-softmax values
    minus log(k); for a single temperature this reduces bitwise to the
    plain log-softmax, which keeps the k=1 case exactly equal to the
    fixed-temperature path.
    """
    log_ps = [log_softmax_rows(divide(logits, t)) for t in temps]
    shift = value_of(log_ps[0])
    for lp in log_ps[1:]:
        shift = np.maximum(shift, value_of(lp))
    total = exp(subtract(log_ps[0], shift))
    for lp in log_ps[1:]:
        total = add(total, exp(subtract(lp, shift)))
    return add(subtract(log(total), math.log(len(temps))), shift)


def _report(total, ce, kld, alpha, beta, weights, n) -> LossReport:
    node = total if isinstance(total, Tensor) else None
    return LossReport(
        total=float(value_of(total)),
        ce_part=float(value_of(ce)),
        kld_part=float(value_of(kld)),
        alpha=float(alpha),
        beta=float(beta),
        per_sample_weight=np.asarray(weights, dtype=np.float64).reshape(-1),
        batch_size=n,
        node=node,
    )


def kd_loss(
    student_logits,
    teacher_logits,
    labels,
    temperature: float,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
) -> LossReport:
    """Fixed-temperature distillation: alpha*CE + beta*T^2*KL(teacher||student)."""
    if not temperature > 0.0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    z_s, z_t = _check_pair(student_logits, teacher_logits)
    n = z_s.shape[0]
    ce = cross_entropy(student_logits, labels)
    lp_t = log_softmax_values(z_t / temperature)
    p_t = np.exp(lp_t)
    lp_s = log_softmax_rows(divide(student_logits, temperature))
    comp = temperature * temperature
    kld = _kld_reduction(p_t, lp_t, lp_s, comp)
    total = add(multiply(ce, alpha), multiply(kld, beta))
    return _report(total, ce, kld, alpha, beta, np.full(n, comp), n)


def multi_temp_kld(student_logits, teacher_logits, temps):
    """Averaged-prediction distillation: T_mul^2 * KL(mean_t p_t || mean_t p_s).

    The compensation factor T_mul is the maximum of the temperature set.
    Returns a float for plain-array students and a taped scalar Tensor
    when the student side is a Tensor.
    """
    temps = _check_temps(temps)
    z_s, z_t = _check_pair(student_logits, teacher_logits)
    t_mul = max(temps)
    lp_t = _log_mean_prediction(z_t, temps)
    p_t = np.exp(lp_t)
    lp_s = _log_mean_prediction(student_logits, temps)
    kld = _kld_reduction(p_t, lp_t, lp_s, t_mul * t_mul)
    return kld if isinstance(kld, Tensor) else float(kld)


def _per_sample_stat(logits, rule: TemperatureRule, corrected: bool):
    """The rule's per-sample scale statistic, as an (N, 1) column."""
    if isinstance(rule, NormStd):
        return std_rows(logits, corrected)
    if isinstance(rule, MaxVal):
        return max_rows(logits)
    if isinstance(rule, Range):
        return subtract(max_rows(logits), min_rows(logits))
    raise ContractError(f"rule {rule!r} has no per-sample statistic")


def _per_sample_kld(
    student_logits,
    z_t: np.ndarray,
    rule: TemperatureRule,
    corrected: bool,
    detach_student_stat: bool,
):
    """Shared core of the per-sample-temperature losses.

    Student temperatures are max(stat, eps)*scale with gradient flowing
    through the statistic unless detached; teacher temperatures use the
    same formula on the constant teacher logits, and their squares are
    the per-sample compensation weights.
    """
    scale = rule.t_norm if isinstance(rule, NormStd) else rule.t_v
    stat_src = value_of(student_logits) if detach_student_stat else student_logits
    t_s = multiply(maximum(_per_sample_stat(stat_src, rule, corrected), rule.epsilon), scale)
    t_t = np.maximum(value_of(_per_sample_stat(z_t, rule, corrected)), rule.epsilon) * scale
    weights = t_t * t_t
    lp_t = log_softmax_values(z_t / t_t)
    p_t = np.exp(lp_t)
    lp_s = log_softmax_rows(divide(student_logits, t_s))
    kld = _kld_reduction(p_t, lp_t, lp_s, weights)
    return kld, weights[:, 0]


def normkd_loss(
    student_logits,
    teacher_logits,
    t_norm: float = DEFAULT_T_NORM,
    epsilon: float = DEFAULT_EPSILON,
    corrected: bool = True,
    detach_student_std: bool = False,
) -> LossReport:
    """Per-sample normalized-temperature distillation.

    Sample i is softened at temperature max(std_i, epsilon) * t_norm on
    each side (its own std), and its divergence is weighted by the
    squared teacher temperature.  The report carries only the KLD fields:
    ce_part is 0 and total equals kld_part.
    """
    if not t_norm > 0.0:
        raise ContractError(f"t_norm must be positive, got {t_norm}")
    z_s, z_t = _check_pair(student_logits, teacher_logits)
    rule = NormStd(t_norm, epsilon)
    kld, weights = _per_sample_kld(
        student_logits, z_t, rule, corrected, detach_student_std
    )
    return _report(kld, 0.0, kld, 0.0, 1.0, weights, z_s.shape[0])


def distill_loss(
    rule: TemperatureRule,
    student_logits,
    teacher_logits,
    labels,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    corrected: bool = True,
    detach_student_stat: bool = False,
) -> LossReport:
    """Dispatch a temperature rule to its loss: alpha*CE + beta*KLD(rule)."""
    if isinstance(rule, Fixed):
        return kd_loss(
            student_logits, teacher_logits, labels, rule.temperature, alpha, beta
        )
    z_s, z_t = _check_pair(student_logits, teacher_logits)
    n = z_s.shape[0]
    ce = cross_entropy(student_logits, labels)
    if isinstance(rule, MultiSet):
        temps = _check_temps(rule.temperatures)
        t_mul = max(temps)
        lp_t = _log_mean_prediction(z_t, temps)
        lp_s = _log_mean_prediction(student_logits, temps)
        kld = _kld_reduction(np.exp(lp_t), lp_t, lp_s, t_mul * t_mul)
        weights = np.full(n, t_mul * t_mul)
    elif isinstance(rule, (NormStd, MaxVal, Range)):
        kld, weights = _per_sample_kld(
            student_logits, z_t, rule, corrected, detach_student_stat
        )
    else:
        raise ContractError(f"unknown temperature rule {rule!r}")
    total = add(multiply(ce, alpha), multiply(kld, beta))
    return _report(total, ce, kld, alpha, beta, weights, n)


def combine(terms):
    """Weighted sum of loss terms: sum_i weight_i * term_i.

    Terms may be floats, arrays, or taped Tensors; gradients propagate
    through every Tensor term.  This is the hook for stacking these
    losses with external logit objectives.
    """
    terms = list(terms)
    if not terms:
        raise ContractError("combine needs at least one term")
    total = None
    for weight, term in terms:
        piece = multiply(term, float(weight))
        total = piece if total is None else add(total, piece)
    return total if isinstance(total, Tensor) else float(value_of(total))
