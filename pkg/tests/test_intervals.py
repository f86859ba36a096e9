import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from clusterlogit import (
    NonPositiveSE,
    TooFewReplications,
    ci_studentized,
    ci_symmetric,
    t_quantile,
)


def test_symmetric_interval_normal_and_t():
    ci = ci_symmetric(1.0, 0.5, 0.95)
    assert_allclose([ci.lower, ci.upper], [1 - 1.959963984540054 * 0.5, 1 + 1.959963984540054 * 0.5])
    ci = ci_symmetric(0.346811, 0.190638, 0.95, dof=11)
    c = stats.t.ppf(0.975, 11)
    assert_allclose(tuple(ci), (0.346811 - c * 0.190638, 0.346811 + c * 0.190638))
    assert ci.contains(0.0) and not ci.contains(0.8)
    assert_allclose(ci.width, 2 * c * 0.190638)


def test_studentized_uses_order_statistics():
    # with B = 999 and 95% the bounds are order statistics 25 and 975
    t_star = np.random.default_rng(0).standard_t(5, size=999)
    s = np.sort(t_star)
    ci = ci_studentized(2.0, 0.1, t_star, 0.95)
    assert_allclose(ci.lower, 2.0 - s[974] * 0.1)
    assert_allclose(ci.upper, 2.0 - s[24] * 0.1)


def test_studentized_interpolates_fractional_positions():
    t_star = np.arange(1.0, 100.0)  # B = 99, 90%: positions 5 and 95
    ci = ci_studentized(0.0, 1.0, t_star, 0.90)
    assert_allclose(tuple(ci), (-95.0, -5.0))
    ci = ci_studentized(0.0, 1.0, t_star, 0.95)  # positions 2.5 and 97.5
    assert_allclose(tuple(ci), (-97.5, -2.5))


def test_studentized_is_asymmetric_for_skewed_draws():
    t_star = np.random.default_rng(1).exponential(size=1999) - 1
    ci = ci_studentized(0.0, 1.0, t_star)
    assert abs(ci.upper) != pytest.approx(abs(ci.lower), rel=0.1)


def test_interval_errors():
    with pytest.raises(NonPositiveSE):
        ci_symmetric(0.0, 0.0)
    with pytest.raises(TooFewReplications):
        ci_studentized(0.0, 1.0, np.arange(10.0), 0.95)
    with pytest.raises(ValueError):
        ci_symmetric(0.0, 1.0, level=1.5)
    with pytest.raises(ValueError):
        t_quantile(0.5, dof=-1)


def test_t_quantile():
    assert_allclose(t_quantile(0.975), stats.norm.ppf(0.975))
    assert_allclose(t_quantile(0.975, 11), 2.200985160082949)
