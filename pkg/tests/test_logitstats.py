"""Per-sample statistics and temperature rules."""

import numpy as np
import pytest

from normkd.errors import ConfigError, ContractError, DimensionError
from normkd.logitstats import (
    Fixed,
    LogitRecord,
    MaxVal,
    MultiSet,
    NormStd,
    Range,
    parse_rule,
    rule_label,
    sample_std,
    summarize,
    temperature_for,
)
from oracles import std_mp


class TestSampleStd:
    def test_constant_vector_is_zero(self):
        assert sample_std([5.0, 5.0, 5.0, 5.0]) == 0.0

    def test_known_values_against_oracle(self):
        assert abs(sample_std([2.0, 0.0, -2.0]) - float(std_mp([2, 0, -2]))) < 1e-15
        assert sample_std([2.0, 0.0, -2.0]) == 2.0
        assert abs(sample_std([1.0, 0.0]) - 0.7071067811865476) < 1e-15

    def test_oracle_equivalence_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            z = rng.normal(0, 3, size=rng.integers(2, 12))
            for corrected in (True, False):
                expected = float(std_mp(z, corrected))
                assert abs(sample_std(z, corrected) - expected) <= 1e-12 * max(1.0, expected)

    def test_affine_equivariance(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            z = rng.normal(size=6)
            a, b = rng.normal(), rng.normal()
            np.testing.assert_allclose(
                sample_std(a * z + b), abs(a) * sample_std(z), rtol=1e-10, atol=1e-12
            )

    def test_too_short_vector_rejected(self):
        with pytest.raises(ContractError):
            sample_std([1.0])


class TestTemperatureRules:
    def test_rule_validation(self):
        for bad in (lambda: Fixed(0.0), lambda: Fixed(-1.0), lambda: MultiSet(()),
                    lambda: MultiSet((1.0, 0.0)), lambda: NormStd(2.0, 0.0),
                    lambda: MaxVal(-2.0), lambda: Range(1.0, -1e-9)):
            with pytest.raises(ContractError):
                bad()

    def test_fixed(self):
        assert temperature_for(Fixed(4.0), [9.0, -3.0, 1.0]) == 4.0

    def test_multiset_returns_the_set(self):
        assert temperature_for(MultiSet((1.0, 2.0, 4.0)), [0.0, 1.0]) == (1.0, 2.0, 4.0)

    def test_normstd(self):
        assert temperature_for(NormStd(t_norm=2.0), [2.0, 0.0, -2.0]) == 4.0

    def test_range(self):
        assert temperature_for(Range(t_v=1.0), [3.0, -1.0, 0.0]) == 4.0

    def test_maxval(self):
        assert temperature_for(MaxVal(t_v=2.0), [3.0, -1.0, 0.0]) == 6.0

    def test_epsilon_floor_degenerate_inputs(self):
        eps = 1e-8
        assert temperature_for(NormStd(2.0, eps), [1.0, 1.0, 1.0]) == eps * 2.0
        assert temperature_for(MaxVal(3.0, eps), [-5.0, -6.0]) == eps * 3.0
        assert temperature_for(Range(2.0, eps), [4.0, 4.0]) == eps * 2.0

    def test_always_strictly_positive(self):
        rng = np.random.default_rng(2)
        rules = (Fixed(3.0), NormStd(2.0), MaxVal(1.0), Range(1.0))
        for _ in range(200):
            z = rng.normal(0, rng.uniform(1e-9, 5.0), size=5)
            for rule in rules:
                t = temperature_for(rule, z)
                assert t > 0.0

    def test_normstd_scale_equivariance_above_floor(self):
        rng = np.random.default_rng(3)
        rule = NormStd(2.0, epsilon=1e-8)
        for _ in range(100):
            z = rng.normal(0, 2, size=7)
            a = float(rng.uniform(0.1, 10))
            if sample_std(z) > rule.epsilon / a:
                np.testing.assert_allclose(
                    temperature_for(rule, a * z),
                    a * temperature_for(rule, z),
                    rtol=1e-10,
                )

    def test_range_shift_invariant_maxval_not(self):
        z = np.array([3.0, -1.0, 0.0])
        assert temperature_for(Range(1.0), z + 10.0) == temperature_for(Range(1.0), z)
        assert temperature_for(MaxVal(1.0), z + 10.0) != temperature_for(MaxVal(1.0), z)


class TestLogitRecord:
    def test_label_range_checked(self):
        with pytest.raises(ContractError):
            LogitRecord(0, 3, np.zeros(3))

    def test_non_finite_rejected(self):
        with pytest.raises(ContractError):
            LogitRecord(0, 0, np.array([np.nan, 1.0]))


class TestSummarize:
    def test_uniform_record(self):
        s = summarize([LogitRecord(0, 0, np.zeros(4))])
        assert s.sigma[0] == 0.0
        np.testing.assert_allclose(s.entropy[0], np.log(4), rtol=1e-12)

    def test_known_extremes(self):
        s = summarize([LogitRecord(0, 0, np.array([2.0, 0.0, -2.0]))])
        assert s.sigma[0] == 2.0
        assert s.v_max[0] == 2.0
        assert s.v_min[0] == -2.0
        assert s.mu[0] == 0.0

    def test_identical_records_concentrate_histogram(self):
        recs = [LogitRecord(i, 1, np.array([1.0, 3.0, -1.0])) for i in range(2)]
        s = summarize(recs)
        assert s.sigma_hist_counts.sum() == 2
        assert s.sigma_hist_counts.max() == 2

    def test_entropy_bounds(self):
        rng = np.random.default_rng(4)
        recs = [
            LogitRecord(i, 0, rng.normal(0, rng.uniform(0.1, 5), size=6))
            for i in range(50)
        ]
        s = summarize(recs)
        assert np.all(s.entropy >= 0.0)
        assert np.all(s.entropy <= np.log(6) + 1e-12)
        assert np.all(s.v_max >= s.v_min)
        assert np.all(s.sigma >= 0.0)

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            summarize([])

    def test_ragged_rejected(self):
        with pytest.raises(DimensionError):
            summarize([LogitRecord(0, 0, np.zeros(3)), LogitRecord(1, 0, np.zeros(4))])


class TestRuleParsing:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("fixed:4", Fixed(4.0)),
            ("multiset:1,2,4", MultiSet((1.0, 2.0, 4.0))),
            ("normstd:2.0", NormStd(2.0)),
            ("normstd:2.0:1e-6", NormStd(2.0, 1e-6)),
            ("maxval:1.5", MaxVal(1.5)),
            ("range:3", Range(3.0)),
        ],
    )
    def test_parse(self, text, expected):
        assert parse_rule(text) == expected

    @pytest.mark.parametrize("text", ["fixed", "fixed:0", "multiset:", "nope:3", "fixed:x"])
    def test_parse_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_rule(text)

    def test_label_round_trips(self):
        for rule in (Fixed(4.0), MultiSet((1.0, 2.5)), NormStd(2.0), MaxVal(1.0), Range(0.5)):
            name, params = rule_label(rule)
            assert parse_rule(f"{name}:{params}") == rule
