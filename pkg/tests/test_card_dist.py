import math

import numpy as np
import pytest
from scipy import stats

from permset import card_dist as C
from permset.mathutil import softplus
from permset.network import output_grad_check


def test_categorical_uniform():
    head = C.CardinalityHead("categorical", np.zeros(5), 4)
    for m in range(5):
        assert C.card_nll(head, m)[0] == pytest.approx(math.log(5))
    with pytest.raises(ValueError):
        C.card_nll(head, 5)


def test_poisson_examples():
    assert C.card_nll(C.CardinalityHead.poisson(1.0, 10), 0)[0] == pytest.approx(1.0)
    assert C.card_nll(C.CardinalityHead.poisson(2.0, 10), 2)[0] == pytest.approx(2 - math.log(2), abs=1e-10)


def test_poisson_matches_scipy(rng):
    for _ in range(20):
        a = rng.normal(size=1)
        lam = float(softplus(a[0]))
        m = int(rng.integers(0, 15))
        assert C.log_pmf("poisson", a, [m])[0] == pytest.approx(stats.poisson.logpmf(m, lam), abs=1e-10)


def test_negative_binomial_matches_scipy(rng):
    for _ in range(20):
        a = rng.normal(size=2)
        r = float(softplus(a[0]))
        p = 1.0 / (1.0 + math.exp(-a[1]))
        m = int(rng.integers(0, 15))
        # scipy's nbinom counts failures with success probability 1 - p here
        ref = stats.nbinom.logpmf(m, r, 1.0 - p)
        assert C.log_pmf("negative_binomial", a, [m])[0] == pytest.approx(ref, abs=1e-9)


def test_map_examples():
    assert C.card_map(C.CardinalityHead.from_probs([0.1, 0.8, 0.1])) == 1
    assert C.card_map(C.CardinalityHead.poisson(0.3, 10)) == 0
    assert C.card_map(C.CardinalityHead.from_probs([0.4, 0.4, 0.2])) == 0


def test_categorical_normalised(rng):
    for _ in range(50):
        a = rng.normal(scale=3, size=7)
        assert np.exp(C.log_pmf("categorical", a, np.arange(7))).sum() == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("kind", C.KINDS)
def test_nll_gradients(kind, rng):
    M = 6
    worst = 0.0
    for _ in range(100):
        a = rng.normal(scale=1.5, size=C.num_params(kind, M))
        m = int(rng.integers(0, M + 1))

        def f(alpha):
            nll, g = C.card_nll_batch(kind, alpha[None], np.array([m]))
            return float(nll[0]), g[0]

        worst = max(worst, output_grad_check(f, a))
    assert worst < 1e-4


@pytest.mark.parametrize("kind", C.KINDS)
def test_map_minimises_nll(kind, rng):
    M = 8
    for _ in range(100):
        a = rng.normal(scale=2, size=C.num_params(kind, M))
        head = C.CardinalityHead(kind, a, M)
        m_star = C.card_map(head)
        if kind == "categorical":
            ms = np.arange(M + 1)
        else:
            ms = np.arange(M + 1)  # the mode is capped at M
        nll = -C.log_pmf(kind, a, ms)
        assert nll[m_star] <= nll.min() + 1e-12
        assert m_star == int(np.argmin(nll))


@pytest.mark.parametrize("kind", ["poisson", "negative_binomial"])
def test_uncapped_mode_over_wide_range(kind, rng):
    big = 200
    for _ in range(50):
        a = rng.normal(scale=1.5, size=C.num_params(kind, big))
        head = C.CardinalityHead(kind, a, big)
        m_star = C.card_map(head)
        rate = float(softplus(a[0]))
        ms = np.arange(int(4 * rate + 20) if kind == "poisson" else big + 1)
        nll = -C.log_pmf(kind, a, ms)
        assert nll[m_star] <= nll.min() + 1e-9


def test_head_validation():
    with pytest.raises(ValueError):
        C.CardinalityHead("categorical", np.zeros(3), 4)
    with pytest.raises(ValueError):
        C.CardinalityHead("binomial", np.zeros(1), 4)
