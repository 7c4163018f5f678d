"""Channel statistics, the matching loss, and AdaIN re-normalization."""

import numpy as np
import pytest

from statdistill.errors import ShapeError, UsageError
from statdistill.stats import (DEFAULT_EPS, FeatureStats, PairSpec, adain,
                               adain_loss, channel_stats,
                               per_sample_l2_normalize, stats_match_loss,
                               stats_match_total)
from statdistill.tensor import Tensor

from conftest import t64


def stats_oracle(x, eps=DEFAULT_EPS):
    """Two-pass per-(sample, channel) moments, independent of the package."""
    n, c, h, w = x.shape
    mu = np.zeros((n, c))
    sigma = np.zeros((n, c))
    for i in range(n):
        for ch in range(c):
            vals = x[i, ch].reshape(-1)
            m = vals.sum() / vals.size
            v = ((vals - m) ** 2).sum() / vals.size
            mu[i, ch] = m
            sigma[i, ch] = np.sqrt(v + eps)
    return mu, sigma


def match_loss_oracle(mu_t, sig_t, mu_s, sig_s):
    n, c = mu_t.shape
    total = 0.0
    for i in range(n):
        for ch in range(c):
            total += (mu_t[i, ch] - mu_s[i, ch]) ** 2
            total += (sig_t[i, ch] - sig_s[i, ch]) ** 2
    return total / (n * c)


def random_stats(rng, shape, mu_range=(-2, 2), sigma_range=(1.0, 2.0)):
    return FeatureStats(
        Tensor(rng.uniform(*mu_range, size=shape)),
        Tensor(rng.uniform(*sigma_range, size=shape)),
        DEFAULT_EPS,
    )


# -- channel statistics -----------------------------------------------------------


def test_channel_stats_hand_example():
    f = t64(np.array([1.0, 3.0, 5.0, 7.0]).reshape(1, 1, 2, 2))
    st = channel_stats(f)
    assert st.mu.data[0, 0] == 4.0
    # biased variance 5, eps inside the square root
    assert abs(st.sigma.data[0, 0] - np.sqrt(5.0 + DEFAULT_EPS)) < 1e-15
    assert abs(st.sigma.data[0, 0] - np.sqrt(5.0)) < 1e-4


def test_channel_stats_constant_map_sigma_is_sqrt_eps():
    f = t64(np.full((2, 3, 4, 4), 2.5))
    st = channel_stats(f)
    assert np.allclose(st.mu.data, 2.5)
    assert np.allclose(st.sigma.data, np.sqrt(DEFAULT_EPS))


def test_channel_stats_matches_two_pass_oracle(rng):
    x = rng.uniform(-3, 3, size=(3, 4, 5, 5))
    st = channel_stats(t64(x))
    mu, sigma = stats_oracle(x)
    assert np.abs(st.mu.data - mu).max() < 1e-12
    assert np.abs(st.sigma.data - sigma).max() < 1e-12


def test_channel_stats_batch_permutation_equivariant(rng):
    x = rng.uniform(-1, 1, size=(4, 2, 3, 3))
    perm = np.array([2, 0, 3, 1])
    st = channel_stats(t64(x))
    st_p = channel_stats(t64(x[perm]))
    assert np.array_equal(st_p.mu.data, st.mu.data[perm])
    assert np.array_equal(st_p.sigma.data, st.sigma.data[perm])


def test_channel_stats_rejects_bad_rank_and_eps():
    with pytest.raises(ShapeError):
        channel_stats(t64(np.zeros((2, 3))))
    with pytest.raises(UsageError):
        channel_stats(t64(np.zeros((1, 1, 2, 2))), eps=0.0)


def test_sigma_lower_bound_property(rng):
    for _ in range(50):
        x = rng.uniform(-5, 5, size=(2, 3, 4, 4)) * rng.uniform(0, 1)
        st = channel_stats(t64(x))
        assert np.all(st.sigma.data >= np.sqrt(DEFAULT_EPS) * (1 - 1e-12))


# -- matching loss -----------------------------------------------------------------


def test_match_loss_identical_stats_is_zero(rng):
    x = rng.uniform(-1, 1, size=(2, 3, 4, 4))
    st = channel_stats(t64(x))
    assert stats_match_loss(st, st).item() == 0.0


def test_match_loss_hand_case():
    # one sample, one channel: (2-1)^2 + (3-5)^2 = 5
    a = FeatureStats(t64([[2.0]]), t64([[3.0]]), DEFAULT_EPS)
    b = FeatureStats(t64([[1.0]]), t64([[5.0]]), DEFAULT_EPS)
    assert stats_match_loss(a, b).item() == 5.0


def test_match_loss_matches_oracle(rng):
    a = random_stats(rng, (3, 5))
    b = random_stats(rng, (3, 5))
    got = stats_match_loss(a, b).item()
    want = match_loss_oracle(a.mu.data, a.sigma.data, b.mu.data, b.sigma.data)
    assert abs(got - want) < 1e-12


def test_match_loss_value_symmetric(rng):
    a = random_stats(rng, (2, 4))
    b = random_stats(rng, (2, 4))
    assert abs(stats_match_loss(a, b).item() - stats_match_loss(b, a).item()) < 1e-15


def test_match_loss_gradient_only_reaches_second_argument(rng):
    ft = Tensor(rng.uniform(-1, 1, size=(2, 3, 4, 4)), requires_grad=True)
    fs = Tensor(rng.uniform(-1, 1, size=(2, 3, 4, 4)), requires_grad=True)
    loss = stats_match_loss(channel_stats(ft), channel_stats(fs))
    loss.backward()
    assert np.all(ft.grad == 0.0)
    assert np.any(fs.grad != 0.0)


def test_match_loss_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        stats_match_loss(random_stats(rng, (2, 3)), random_stats(rng, (2, 4)))


def test_match_total_sums_pairs_and_applies_adapter(rng):
    ft = t64(rng.uniform(-1, 1, size=(2, 4, 4, 4)))
    fs = t64(rng.uniform(-1, 1, size=(2, 4, 4, 4)))

    single = stats_match_total([(ft, fs, PairSpec("conv4", "conv4"))])
    double = stats_match_total([
        (ft, fs, PairSpec("conv3", "conv3")),
        (ft, fs, PairSpec("conv4", "conv4")),
    ])
    assert abs(double.item() - 2 * single.item()) < 1e-12

    # adapter doubling the map changes the compared statistics
    doubler = lambda t: t * 2.0
    adapted = stats_match_total([(ft, fs, PairSpec("conv4", "conv4", doubler))])
    assert abs(adapted.item() - single.item()) > 1e-6


def test_match_total_channel_mismatch_requires_adapter(rng):
    ft = t64(rng.uniform(-1, 1, size=(2, 6, 4, 4)))
    fs = t64(rng.uniform(-1, 1, size=(2, 3, 4, 4)))
    with pytest.raises(ShapeError, match="adapter"):
        stats_match_total([(ft, fs, PairSpec("conv4", "conv4"))])
    with pytest.raises(UsageError):
        stats_match_total([])


# -- adain -------------------------------------------------------------------------


def test_adain_own_stats_is_identity(rng):
    for _ in range(100):
        f = t64(rng.uniform(-3, 3, size=(2, 3, 4, 4)))
        out = adain(f, channel_stats(f))
        assert np.abs(out.data - f.data).max() < 1e-12


def test_adain_constant_map_takes_style_mean(rng):
    f = t64(np.full((1, 2, 3, 3), 4.0))
    style = random_stats(rng, (1, 2))
    out = adain(f, style)
    # constant content has zero deviation, so the output is the style mean
    want = np.broadcast_to(style.mu.data[:, :, None, None], out.shape)
    assert np.abs(out.data - want).max() < 1e-12


def test_adain_replaces_statistics(rng):
    hits = 0
    for _ in range(100):
        f = t64(rng.uniform(-2, 2, size=(2, 3, 5, 5)))
        style = random_stats(rng, (2, 3), mu_range=(1, 3), sigma_range=(1.0, 2.0))
        st = channel_stats(adain(f, style))
        assert np.abs(st.mu.data - style.mu.data).max() < 1e-10
        var_in = f.data.var(axis=(2, 3))
        mask = var_in >= 1.0
        if mask.any():
            hits += 1
            rel = np.abs(st.sigma.data - style.sigma.data) / style.sigma.data
            assert rel[mask].max() < 1e-3
    assert hits > 0


def test_adain_idempotent_when_scales_match(rng):
    """Re-styling with the same stats is stable; exact when scales align."""
    for _ in range(50):
        f = t64(rng.uniform(-2, 2, size=(2, 3, 5, 5)) * 1.5)
        var = f.data.var(axis=(2, 3))
        style = FeatureStats(
            Tensor(rng.uniform(-1, 1, size=(2, 3))),
            Tensor(np.sqrt(var + DEFAULT_EPS)),
            DEFAULT_EPS,
        )
        out1 = adain(f, style)
        out2 = adain(out1, style)
        assert np.abs(out2.data - out1.data).max() < 1e-6


def test_adain_idempotence_bounded_generally(rng):
    # scale mismatch re-introduces the eps bias once per application
    for _ in range(50):
        f = t64(rng.uniform(-2, 2, size=(2, 3, 5, 5)))
        style = random_stats(rng, (2, 3))
        out1 = adain(f, style)
        out2 = adain(out1, style)
        assert np.abs(out2.data - out1.data).max() < 1e-4


def test_adain_invariant_to_content_mean_shift(rng):
    f = t64(rng.uniform(-1, 1, size=(2, 3, 4, 4)))
    shift = rng.uniform(-5, 5, size=(1, 3, 1, 1))
    shifted = t64(f.data + shift)
    style = random_stats(rng, (2, 3))
    a = adain(f, style)
    b = adain(shifted, style)
    assert np.abs(a.data - b.data).max() < 1e-10


def test_adain_shape_validation(rng):
    f = t64(np.zeros((2, 3, 4, 4)))
    with pytest.raises(ShapeError):
        adain(f, random_stats(rng, (2, 4)))
    with pytest.raises(ShapeError):
        adain(t64(np.zeros((2, 3))), random_stats(rng, (2, 3)))


# -- adain output loss ---------------------------------------------------------------


def test_adain_loss_zero_for_identical(rng):
    p = t64(rng.uniform(-1, 1, size=(3, 4)))
    assert adain_loss(p, p).item() == 0.0


def test_adain_loss_is_mse_with_detached_reference(rng):
    p = Tensor(rng.uniform(-1, 1, size=(2, 3)), requires_grad=True)
    q = Tensor(rng.uniform(-1, 1, size=(2, 3)), requires_grad=True)
    loss = adain_loss(p, q)
    want = ((p.data - q.data) ** 2).sum() / 2.0
    assert abs(loss.item() - want) < 1e-12
    loss.backward()
    assert np.all(p.grad == 0.0)
    assert np.any(q.grad != 0.0)


# -- per-sample normalization ---------------------------------------------------------


def test_l2_normalize_unit_rows(rng):
    x = t64(rng.uniform(0.1, 2, size=(4, 6)))
    n = per_sample_l2_normalize(x)
    assert np.abs(np.linalg.norm(n.data, axis=1) - 1.0).max() < 1e-9


def test_l2_normalize_scale_invariant(rng):
    x = rng.uniform(-1, 1, size=(3, 5))
    a = per_sample_l2_normalize(t64(x))
    b = per_sample_l2_normalize(t64(x * 37.5))
    assert np.abs(a.data - b.data).max() < 1e-12
