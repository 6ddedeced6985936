import numpy as np
from scipy import stats

from smartrar.posterior import posteriors_from_counts, sample_theta_draws
from smartrar.trial import PAPER_ARMS, Dataset, counts_at_week


def empty_counts():
    return counts_at_week(Dataset.empty(PAPER_ARMS), 1)


def test_zero_counts_give_uniform_priors():
    post = posteriors_from_counts(empty_counts(), PAPER_ARMS)
    for comp in ("theta1", "gamma1", "theta2", "gamma2", "gamma3"):
        a, b = getattr(post, comp)
        assert np.all(a == 1) and np.all(b == 1)


def test_count_substitution():
    c = empty_counts()
    c.n1[0], c.r1_plus[0] = 10, 4
    c.n2[1, 2], c.r2_plus[1, 2] = 3, 3
    post = posteriors_from_counts(c, PAPER_ARMS)
    assert (post.theta1[0][0], post.theta1[1][0]) == (5, 7)
    assert (post.theta2[0][1, 2], post.theta2[1][1, 2]) == (4, 1)


def test_extra_success_raises_posterior_mean():
    c = empty_counts()
    c.n2[0, 1], c.r2_plus[0, 1] = 5, 2
    before = posteriors_from_counts(c, PAPER_ARMS).mean("theta2")[0, 1]
    c.n2[0, 1], c.r2_plus[0, 1] = 6, 3
    assert posteriors_from_counts(c, PAPER_ARMS).mean("theta2")[0, 1] > before


def _draws(a, b, M, seed=1):
    c = empty_counts()
    c.n1[0], c.r1_plus[0] = a + b - 2, a - 1
    post = posteriors_from_counts(c, PAPER_ARMS)
    return sample_theta_draws(post, M, np.random.default_rng(seed))


def test_sample_means():
    d = _draws(1, 1, 100_000)
    assert abs(d.theta1[:, 0].mean() - 0.5) < 0.005
    d = _draws(5, 7, 100_000)
    assert abs(d.theta1[:, 0].mean() - 5 / 12) < 0.005


def test_beta21_beats_uniform_two_thirds():
    d = _draws(2, 1, 100_000)
    # theta1 of arm 1 is an independent Beta(1,1) companion
    assert abs(np.mean(d.theta1[:, 0] > d.theta1[:, 1]) - 2 / 3) < 0.01


def test_goodness_of_fit():
    for a, b in ((1, 1), (5, 7), (4, 1)):
        x = _draws(a, b, 100_000, seed=a * 10 + b).theta1[:, 0]
        assert stats.kstest(x, stats.beta(a, b).cdf).pvalue > 1e-3


def test_draws_are_deterministic_and_shaped():
    a = _draws(3, 4, 50, seed=9)
    b = _draws(3, 4, 50, seed=9)
    assert a.theta2.shape == (50, 2, 3) and len(a) == 50
    for comp in ("theta1", "gamma1", "theta2", "gamma2", "gamma3"):
        assert np.array_equal(getattr(a, comp), getattr(b, comp))
    assert a[3].theta1.shape == (2,)
