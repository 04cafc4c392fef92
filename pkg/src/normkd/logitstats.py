"""Per-sample logit statistics and the closed set of temperature rules.

A temperature rule maps one sample's raw logit vector to the positive
temperature (or set of temperatures) used to soften it:

* ``Fixed(T)``            - one global temperature;
* ``MultiSet(t_1..t_k)``  - several global temperatures, predictions averaged;
* ``NormStd(T_norm, eps)``- per-sample ``max(std(z), eps) * T_norm``;
* ``MaxVal(T_v, eps)``    - per-sample ``max(max(z), eps) * T_v``;
* ``Range(T_v, eps)``     - per-sample ``max(max(z) - min(z), eps) * T_v``.

The epsilon floor keeps degenerate samples (constant logits, non-positive
maxima) trainable instead of raising: the softened label degrades to
near-uniform.  Note that the Range rule is invariant to adding a constant
to all logits while MaxVal is not; both behaviours are intentional.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .numcore import as_vector, log_softmax_values

DEFAULT_EPSILON = 1e-8
HISTOGRAM_BINS = 50


@dataclass(frozen=True, eq=False)
class LogitRecord:
    """One sample's raw class logits, with its label and stable id."""

    sample_id: int
    label: int
    logits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "logits", as_vector(self.logits, "logits"))
        if self.label < 0 or self.label >= self.logits.shape[0]:
            raise ContractError(
                f"label {self.label} outside [0, {self.logits.shape[0]})"
            )


def _require_positive(value: float, name: str) -> None:
    if not value > 0.0:
        raise ContractError(f"{name} must be strictly positive, got {value}")


@dataclass(frozen=True)
class Fixed:
    temperature: float

    def __post_init__(self):
        _require_positive(self.temperature, "temperature")


@dataclass(frozen=True)
class MultiSet:
    temperatures: tuple[float, ...]

    def __post_init__(self):
        temps = tuple(float(t) for t in self.temperatures)
        if not temps:
            raise ContractError("MultiSet needs at least one temperature")
        for t in temps:
            _require_positive(t, "temperature")
        object.__setattr__(self, "temperatures", temps)


@dataclass(frozen=True)
class NormStd:
    t_norm: float = 2.0
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        _require_positive(self.t_norm, "t_norm")
        _require_positive(self.epsilon, "epsilon")


@dataclass(frozen=True)
class MaxVal:
    t_v: float = 1.0
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        _require_positive(self.t_v, "t_v")
        _require_positive(self.epsilon, "epsilon")


@dataclass(frozen=True)
class Range:
    t_v: float = 1.0
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        _require_positive(self.t_v, "t_v")
        _require_positive(self.epsilon, "epsilon")


TemperatureRule = Fixed | MultiSet | NormStd | MaxVal | Range


def sample_std(logits, corrected: bool = True) -> float:
    """Standard deviation of one logit vector.

    Defaults to the corrected (divide by C-1) estimator, the default of
    the tensor-framework ``std`` call this mirrors; pass
    ``corrected=False`` for the population form.
    """
    z = as_vector(logits, "logits")
    ddof = 1 if corrected else 0
    if z.shape[0] - ddof < 1:
        raise ContractError(
            f"sample_std needs at least {ddof + 1} entries, got {z.shape[0]}"
        )
    return float(np.std(z, ddof=ddof))


def row_std(matrix: np.ndarray, corrected: bool = True) -> np.ndarray:
    """Per-row standard deviations of an (N, C) matrix as a (N, 1) column."""
    ddof = 1 if corrected else 0
    if matrix.shape[1] - ddof < 1:
        raise ContractError(
            f"row_std needs at least {ddof + 1} columns, got {matrix.shape[1]}"
        )
    return np.std(matrix, axis=1, ddof=ddof, keepdims=True)


def temperature_for(
    rule: TemperatureRule, logits, corrected: bool = True
) -> float | tuple[float, ...]:
    """The softening temperature(s) a rule assigns to one logit vector."""
    z = as_vector(logits, "logits")
    if isinstance(rule, Fixed):
        return rule.temperature
    if isinstance(rule, MultiSet):
        return rule.temperatures
    if isinstance(rule, NormStd):
        return max(sample_std(z, corrected), rule.epsilon) * rule.t_norm
    if isinstance(rule, MaxVal):
        return max(float(z.max()), rule.epsilon) * rule.t_v
    if isinstance(rule, Range):
        return max(float(z.max() - z.min()), rule.epsilon) * rule.t_v
    raise ContractError(f"unknown temperature rule {rule!r}")


@dataclass(frozen=True, eq=False)
class LogitSummary:
    """Per-sample statistics plus an aggregate histogram of sigma."""

    sigma: np.ndarray
    mu: np.ndarray
    v_max: np.ndarray
    v_min: np.ndarray
    entropy: np.ndarray
    sigma_hist_counts: np.ndarray
    sigma_hist_edges: np.ndarray


def summarize(
    records: list[LogitRecord],
    corrected: bool = True,
    bins: int = HISTOGRAM_BINS,
) -> LogitSummary:
    """Summarize a batch of logit records.

    Entropy is that of the T=1 softmax, in nats.  The sigma histogram uses
    ``bins`` uniform bins over [min, max] of the observed sigmas (numpy
    widens a degenerate range by 0.5 on each side).
    """
    if not records:
        raise ContractError("summarize needs at least one record")
    c = records[0].logits.shape[0]
    for rec in records:
        if rec.logits.shape[0] != c:
            raise DimensionError(
                f"record {rec.sample_id} has {rec.logits.shape[0]} classes, expected {c}"
            )
    z = np.stack([rec.logits for rec in records])
    sigma = row_std(z, corrected)[:, 0]
    log_p = log_softmax_values(z)
    counts, edges = np.histogram(sigma, bins=bins, range=(sigma.min(), sigma.max()))
    return LogitSummary(
        sigma=sigma,
        mu=z.mean(axis=1),
        v_max=z.max(axis=1),
        v_min=z.min(axis=1),
        entropy=-(np.exp(log_p) * log_p).sum(axis=1),
        sigma_hist_counts=counts,
        sigma_hist_edges=edges,
    )


def parse_rule(text: str) -> TemperatureRule:
    """Parse a rule spec like ``fixed:4``, ``multiset:1,2,4``, ``normstd:2.0``.

    NormStd/MaxVal/Range accept an optional trailing epsilon, e.g.
    ``normstd:2.0:1e-6``.
    """
    name, sep, rest = text.strip().partition(":")
    name = name.lower()
    try:
        if name == "fixed":
            return Fixed(float(rest))
        if name == "multiset":
            return MultiSet(tuple(float(p) for p in rest.split(",")))
        if name in ("normstd", "maxval", "range"):
            parts = rest.split(":") if sep else []
            scale = float(parts[0]) if parts and parts[0] else None
            eps = float(parts[1]) if len(parts) > 1 else DEFAULT_EPSILON
            cls = {"normstd": NormStd, "maxval": MaxVal, "range": Range}[name]
            if scale is None:
                return cls(epsilon=eps)
            return cls(scale, eps)
    except (ValueError, ContractError) as exc:
        raise ConfigError(f"bad temperature rule {text!r}: {exc}") from exc
    raise ConfigError(f"unknown temperature rule {text!r}")


def rule_label(rule: TemperatureRule | None) -> tuple[str, str]:
    """(name, params) pair used in CSV rows; round-trips through parse_rule."""
    if rule is None:
        return "none", ""
    if isinstance(rule, Fixed):
        return "fixed", repr(rule.temperature)
    if isinstance(rule, MultiSet):
        return "multiset", ",".join(repr(t) for t in rule.temperatures)
    if isinstance(rule, NormStd):
        return "normstd", f"{rule.t_norm!r}:{rule.epsilon!r}"
    if isinstance(rule, MaxVal):
        return "maxval", f"{rule.t_v!r}:{rule.epsilon!r}"
    if isinstance(rule, Range):
        return "range", f"{rule.t_v!r}:{rule.epsilon!r}"
    raise ContractError(f"unknown temperature rule {rule!r}")
