import numpy as np
import pytest
import scipy.stats

from gairl.evaluation import (WILCOXON_CRITICAL_05, mae, mean_recent_reward,
                              precision_recall, rank_with_ties,
                              wilcoxon_signed_rank)


def exact_critical_value(n: int, alpha=0.05):
    """Independent oracle: largest w with 2*P(W <= w) <= alpha under H0,
    via exact subset-sum enumeration of the signed-rank distribution."""
    counts = np.zeros(n * (n + 1) // 2 + 1, dtype=object)
    counts[0] = 1
    for k in range(1, n + 1):
        shifted = np.zeros_like(counts)
        shifted[k:] = counts[:-k]
        counts = counts + shifted
    total = 2 ** n
    cumulative = np.cumsum(counts)
    crit = None
    for w in range(len(counts)):
        if 2 * cumulative[w] / total <= alpha:
            crit = w
        else:
            break
    return crit


class TestWilcoxon:
    def test_five_equal_differences(self):
        x = np.array([2.0, 3.0, 4.0, 5.0, 6.0])
        r = wilcoxon_signed_rank(x, x - 1.0)
        assert r.t_plus == 15.0
        assert r.t_minus == 0.0
        assert not r.significant_at_05  # n=5 can never reject two-tailed

    def test_rank_sum_identity(self, rng):
        for _ in range(25):
            n = int(rng.integers(6, 26))
            x = rng.standard_normal(n)
            y = x + rng.standard_normal(n)
            r = wilcoxon_signed_rank(x, y)
            assert r.t_plus + r.t_minus == pytest.approx(n * (n + 1) / 2)

    def test_sign_antisymmetry(self, rng):
        x = rng.standard_normal(12)
        y = rng.standard_normal(12)
        a = wilcoxon_signed_rank(x, y)
        b = wilcoxon_signed_rank(y, x)
        assert a.t_plus == b.t_minus and a.t_minus == b.t_plus

    def test_zero_differences_dropped(self):
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
        y = np.array([1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 5.0])
        r = wilcoxon_signed_rank(x, y)
        assert r.n_nonzero == 5

    def test_all_zero_errors(self):
        with pytest.raises(ValueError):
            wilcoxon_signed_rank([1.0, 2.0], [1.0, 2.0])

    def test_ties_get_average_ranks(self):
        ranks = rank_with_ties([3.0, 1.0, 3.0, 2.0])
        np.testing.assert_array_equal(ranks, [3.5, 1.0, 3.5, 2.0])

    def test_statistic_matches_scipy(self, rng):
        for _ in range(30):
            n = int(rng.integers(6, 26))
            x = rng.standard_normal(n)
            y = x + rng.standard_normal(n)
            ours = wilcoxon_signed_rank(x, y)
            ref = scipy.stats.wilcoxon(x, y)
            assert ours.statistic == pytest.approx(ref.statistic)

    def test_critical_table_against_enumeration(self):
        for n, expected in WILCOXON_CRITICAL_05.items():
            assert exact_critical_value(n) == expected, f"n={n}"

    def test_significance_uses_table(self):
        # n=15: statistic 25 is significant, 26 is not
        x = np.arange(1.0, 16.0)
        base = wilcoxon_signed_rank(x + 1, x)
        assert base.critical_value == 25
        # craft difference signs to hit the boundary statistics
        signs_25 = np.ones(15)
        signs_25[[0, 1, 2, 3, 4, 9]] = -1  # ranks 1+2+3+4+5+10 = 25
        r25 = wilcoxon_signed_rank(x * signs_25, np.zeros(15))
        assert r25.statistic == 25 and r25.significant_at_05
        signs_26 = np.ones(15)
        signs_26[[0, 1, 2, 3, 4, 10]] = -1  # ranks 1+2+3+4+5+11 = 26
        r26 = wilcoxon_signed_rank(x * signs_26, np.zeros(15))
        assert r26.statistic == 26 and not r26.significant_at_05

    def test_too_many_pairs_rejected(self):
        x = np.arange(30.0)
        with pytest.raises(ValueError):
            wilcoxon_signed_rank(x + 1, x)


class TestPrecisionRecall:
    def test_perfect_predictor(self):
        p, r = precision_recall([1, 0, 1, 0], [1, 0, 1, 0])
        assert p == 1.0 and r == 1.0

    def test_all_positive_predictions(self):
        p, r = precision_recall([1, 1, 1, 1], [1, 0, 1, 0])
        assert p == 0.5 and r == 1.0

    def test_counting_case(self):
        predicted = [1] * 10
        actual = [1] * 8 + [0] * 2
        p, r = precision_recall(predicted, actual)
        assert p == pytest.approx(0.8) and r == 1.0

    def test_no_predicted_positive_marker(self):
        p, r = precision_recall([0, 0, 0], [1, 0, 1])
        assert p is None and r == 0.0

    def test_no_actual_positive_marker(self):
        p, r = precision_recall([0, 1, 0], [0, 0, 0])
        assert p == 0.0 and r is None

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            precision_recall([1, 0], [1])


class TestMae:
    def test_identical(self):
        assert mae([[0.2, 0.3]], [[0.2, 0.3]]) == 0.0

    def test_definition(self):
        assert mae([0.5], [0.9]) == pytest.approx(0.4)

    def test_double_computation_oracle(self, rng):
        a = rng.random((50, 4))
        b = rng.random((50, 4))
        slow = sum(abs(float(x) - float(y))
                   for x, y in zip(a.ravel(), b.ravel())) / a.size
        assert mae(a, b) == pytest.approx(slow, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mae(np.zeros((2, 2)), np.zeros((2, 3)))


class TestMeanRecentReward:
    def test_singleton(self):
        assert mean_recent_reward([-300.0]) == -300.0

    def test_constant_window(self):
        returns = [-500.0] * 50 + [-200.0] * 100
        assert mean_recent_reward(returns) == -200.0

    def test_matches_brute_force(self, rng):
        returns = list(rng.standard_normal(257))
        for count in (1, 5, 99, 100, 101, 257):
            window = returns[max(0, count - 100):count]
            assert mean_recent_reward(returns[:count]) == pytest.approx(
                float(np.mean(window)))

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            mean_recent_reward([])
