import numpy as np
import pytest

from islkit import (
    AffineTransform,
    GeneratorSpec,
    IslHyperparams,
    RandomSource,
    TargetSpec,
    fit_robust_transform,
    hard_rank,
    isl_loss_and_gradient,
    isl_surrogate_loss,
    marginal_isl_loss,
    rbf_soft_histogram,
    sample_target,
    sample_unit_sphere,
    sliced_isl_loss,
    soft_rank,
    soft_ranks,
)


# ---------------------------------------------------------------------------
# soft pipeline pieces
# ---------------------------------------------------------------------------


def test_soft_rank_pinned():
    assert soft_rank(0.0, [0.0], alpha=3.0) == pytest.approx(0.5, abs=1e-15)
    assert soft_rank(10.0, [0.0, 1.0], alpha=10.0) == pytest.approx(2.0, abs=1e-6)


def test_soft_rank_saturates_to_hard_rank():
    fake = [-1.0, 0.0, 1.0, 2.0]
    assert soft_rank(0.5, fake, alpha=1e4) == pytest.approx(hard_rank(0.5, fake), abs=1e-6)


def test_soft_rank_no_overflow_at_extreme_slopes():
    assert np.isfinite(soft_rank(1000.0, [-1000.0], alpha=10.0))
    assert soft_rank(-1e4, [1e4], alpha=1.0) == pytest.approx(0.0, abs=1e-12)


def test_soft_ranks_matches_scalar():
    real = np.array([0.1, -0.4, 2.0])
    fakes = np.array([-1.0, 0.3, 0.5])
    vec = soft_ranks(real, fakes, alpha=7.0)
    for i, y in enumerate(real):
        assert vec[i] == pytest.approx(soft_rank(y, fakes, 7.0), abs=1e-15)


def test_rbf_histogram_single_point():
    q = rbf_soft_histogram([3.0], k=5, nu=0.5)
    assert q[3] == pytest.approx(1.0, abs=1e-15)
    assert q[2] == pytest.approx(np.exp(-2.0), abs=1e-15)
    assert q[4] == pytest.approx(np.exp(-2.0), abs=1e-15)


def test_rbf_histogram_identical_points_shift_kernel():
    q1 = rbf_soft_histogram([2.0] * 9, k=4, nu=0.7)
    q2 = rbf_soft_histogram([2.0], k=4, nu=0.7)
    assert np.allclose(q1, q2, atol=1e-15)


def test_rbf_histogram_tiny_lengthscale_recovers_hard_counts():
    q = rbf_soft_histogram([0.0, 6.0], k=6, nu=1e-3)
    assert q[0] == pytest.approx(0.5, abs=1e-12)
    assert q[6] == pytest.approx(0.5, abs=1e-12)
    assert np.all(q[1:6] < 1e-12)


def test_rbf_histogram_validates_range():
    with pytest.raises(ValueError):
        rbf_soft_histogram([7.0], k=6, nu=0.5)
    with pytest.raises(ValueError):
        rbf_soft_histogram([-0.1], k=6, nu=0.5)


def test_surrogate_loss_pinned():
    assert isl_surrogate_loss(np.full(6, 1.0 / 6.0), "l1") == 0.0
    assert isl_surrogate_loss([1.0, 0.0], "l1") == pytest.approx(1.0, abs=1e-15)
    assert isl_surrogate_loss([1.0, 0.0], "l2") == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-15)


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        IslHyperparams(k=0)
    with pytest.raises(ValueError):
        IslHyperparams(k=5, alpha=0.0)
    with pytest.raises(ValueError):
        IslHyperparams(k=5, nu=-1.0)
    with pytest.raises(ValueError):
        IslHyperparams(k=5, norm="linf")


# ---------------------------------------------------------------------------
# soft-to-hard consistency
# ---------------------------------------------------------------------------


def test_soft_histogram_matches_hard_counts_at_sharp_settings():
    rng = RandomSource(42)
    real = rng.split("real").normal(200)
    fakes = rng.split("fake").normal(8)
    gap = np.min(np.abs(real[:, None] - fakes[None, :]))
    alpha = 1e4 / gap
    soft = rbf_soft_histogram(soft_ranks(real, fakes, alpha), k=8, nu=1e-3)
    hard = np.bincount([hard_rank(y, fakes) for y in real], minlength=9) / real.size
    assert np.max(np.abs(soft - hard)) < 1e-6


# ---------------------------------------------------------------------------
# 1D loss and gradient
# ---------------------------------------------------------------------------


def _fd_check(value_fn, grad, params, n_directions=32, rel=1e-4):
    rng = RandomSource(987)
    step = 1e-5
    for _ in range(n_directions):
        d = rng.normal(params.size)
        d /= np.linalg.norm(d)
        fd = (value_fn(params + step * d) - value_fn(params - step * d)) / (2.0 * step)
        an = float(grad @ d)
        assert an == pytest.approx(fd, rel=rel, abs=5e-8)


@pytest.mark.parametrize("norm", ["l1", "l2"])
def test_1d_loss_gradient_matches_fd(norm):
    gen = GeneratorSpec((1, 10, 1), ("tanh", "identity"), seed=31)
    params = gen.init_params()
    hyper = IslHyperparams(k=6, alpha=10.0, nu=0.5, norm=norm)
    rng = RandomSource(8)
    real = rng.split("real").normal(24)
    noise = rng.split("noise").normal((6, 1))

    out = isl_loss_and_gradient(params, real, noise, hyper, gen)

    def value(p):
        return isl_loss_and_gradient(p, real, noise, hyper, gen).loss

    assert out.loss > 0
    _fd_check(value, out.grad, params)


def test_1d_loss_fresh_fakes_per_datum_gradient():
    gen = GeneratorSpec((1, 8, 1), ("relu", "identity"), seed=33)
    params = gen.init_params()
    hyper = IslHyperparams(k=4, alpha=8.0, nu=0.5)
    rng = RandomSource(9)
    real = rng.split("real").normal(12)
    noise = rng.split("noise").normal((12, 4, 1))

    out = isl_loss_and_gradient(params, real, noise, hyper, gen)

    def value(p):
        return isl_loss_and_gradient(p, real, noise, hyper, gen).loss

    _fd_check(value, out.grad, params, n_directions=16)


def test_1d_loss_closed_form_when_fakes_far_above():
    # single affine unit pinned at +100: soft ranks vanish, q is the
    # kernel profile at 0 and the loss follows in closed form
    gen = GeneratorSpec((1, 1), ("identity",))
    params = np.array([0.0, 100.0])  # w = 0, b = 100
    k, nu = 5, 0.5
    hyper = IslHyperparams(k=k, alpha=10.0, nu=nu)
    real = RandomSource(3).normal(50)
    noise = RandomSource(4).normal((k, 1))
    out = isl_loss_and_gradient(params, real, noise, hyper, gen)
    q_expected = np.exp(-np.arange(k + 1) ** 2 / (2.0 * nu * nu))
    expected = float(np.sum(np.abs(1.0 / (k + 1) - q_expected)))
    assert out.loss == pytest.approx(expected, abs=1e-12)


def test_1d_loss_rejects_empty_batch_and_bad_widths():
    gen = GeneratorSpec((1, 1), ("identity",))
    hyper = IslHyperparams(k=2)
    with pytest.raises(ValueError):
        isl_loss_and_gradient(np.zeros(2), np.array([]), np.zeros((2, 1)), hyper, gen)
    wide = GeneratorSpec((1, 2), ("identity",))
    with pytest.raises(ValueError):
        isl_loss_and_gradient(np.zeros(4), np.array([1.0]), np.zeros((2, 1)), hyper, wide)


def test_1d_loss_permutation_invariance_bitwise():
    gen = GeneratorSpec((1, 6, 1), ("tanh", "identity"), seed=35)
    params = gen.init_params()
    hyper = IslHyperparams(k=5)
    rng = RandomSource(10)
    real = rng.split("real").normal(40)
    noise = rng.split("noise").normal((5, 1))
    base = isl_loss_and_gradient(params, real, noise, hyper, gen)
    perm = RandomSource(11).permutation(40)
    shuffled = isl_loss_and_gradient(params, real[perm], noise, hyper, gen)
    # the loss is exactly order-free; gradient scatter order may differ in ulps
    assert base.loss == shuffled.loss
    assert np.allclose(base.grad, shuffled.grad, rtol=1e-12, atol=1e-15)
    # permuting the fake batch == permuting the noise rows (shared fakes)
    noise_perm = noise[RandomSource(12).permutation(5)]
    refaked = isl_loss_and_gradient(params, real, noise_perm, hyper, gen)
    assert base.loss == refaked.loss


def test_monotone_response_in_mean_shift():
    k, n, seeds = 10, 2000, 50
    mus = (0.0, 0.5, 1.0, 2.0)
    means = []
    for mu in mus:
        vals = []
        for s in range(seeds):
            rng = RandomSource(60_000 + s).split(f"mu-{mu}")
            real = rng.split("real").normal(n)
            fakes = mu + rng.split("fake").normal(k)
            q = rbf_soft_histogram(np.clip(soft_ranks(real, fakes, 10.0), 0.0, k), k, 0.5)
            vals.append(isl_surrogate_loss(q, "l1"))
        means.append(float(np.mean(vals)))
    assert all(b >= a for a, b in zip(means, means[1:]))


# ---------------------------------------------------------------------------
# sliced and marginal losses
# ---------------------------------------------------------------------------


def _ring_setup(seed=77, n=64):
    gen = GeneratorSpec((2, 16, 2), ("tanh", "identity"), seed=seed)
    params = gen.init_params()
    hyper = IslHyperparams(k=6)
    real = sample_target(TargetSpec("ring2d"), n, RandomSource(seed).split("data"))
    noise = RandomSource(seed).split("noise").normal((6, 2))
    return gen, params, hyper, real, noise


def test_sliced_axis_direction_equals_projected_1d_pipeline():
    gen, params, hyper, real, noise = _ring_setup()
    e1 = np.array([[1.0, 0.0]])
    out = sliced_isl_loss(params, real, noise, e1, hyper, gen)
    from islkit.diff_engine import mlp_forward

    fakes = mlp_forward(params, gen, noise)[:, 0]
    q = rbf_soft_histogram(np.clip(soft_ranks(real[:, 0], fakes, hyper.alpha), 0, hyper.k), hyper.k, hyper.nu)
    assert out.loss == pytest.approx(isl_surrogate_loss(q, hyper.norm), abs=1e-12)


def test_sliced_direction_set_mean_idempotence():
    gen, params, hyper, real, noise = _ring_setup()
    s = sample_unit_sphere(2, 1, RandomSource(13))[0]
    two = np.stack([s, -s])
    four = np.stack([s, -s, s, -s])
    a = sliced_isl_loss(params, real, noise, two, hyper, gen)
    b = sliced_isl_loss(params, real, noise, four, hyper, gen)
    assert a.loss == pytest.approx(b.loss, rel=1e-12)
    assert np.allclose(a.grad, b.grad, rtol=1e-10, atol=1e-12)


def test_sliced_loss_positive_for_untrained_generator_on_ring():
    gen, params, hyper, real, noise = _ring_setup(seed=101, n=256)
    dirs = sample_unit_sphere(2, 8, RandomSource(14))
    out = sliced_isl_loss(params, real, noise, dirs, hyper, gen)
    assert out.loss > 0.1


def test_sliced_rejects_non_unit_directions():
    gen, params, hyper, real, noise = _ring_setup()
    with pytest.raises(ValueError):
        sliced_isl_loss(params, real, noise, np.array([[1.0, 1.0]]), hyper, gen)


def test_sliced_gradient_matches_fd():
    gen, params, hyper, real, noise = _ring_setup(seed=55, n=32)
    dirs = sample_unit_sphere(2, 3, RandomSource(15))
    out = sliced_isl_loss(params, real, noise, dirs, hyper, gen)

    def value(p):
        return sliced_isl_loss(p, real, noise, dirs, hyper, gen).loss

    _fd_check(value, out.grad, params, n_directions=16)


def test_sliced_fresh_noise_per_direction():
    gen, params, hyper, real, _ = _ring_setup()
    noise = RandomSource(16).normal((3, 6, 2))
    dirs = sample_unit_sphere(2, 3, RandomSource(17))
    out = sliced_isl_loss(params, real, noise, dirs, hyper, gen)
    assert np.isfinite(out.loss)
    with pytest.raises(ValueError):
        sliced_isl_loss(params, real, noise[:2], dirs, hyper, gen)


def test_marginal_equals_1d_loss_in_one_dimension():
    gen = GeneratorSpec((1, 8, 1), ("tanh", "identity"), seed=57)
    params = gen.init_params()
    hyper = IslHyperparams(k=5)
    real = RandomSource(18).normal(30)
    noise = RandomSource(19).normal((5, 1))
    a = isl_loss_and_gradient(params, real, noise, hyper, gen)
    b = marginal_isl_loss(params, real[:, None], noise, hyper, gen)
    assert a.loss == b.loss
    assert np.array_equal(a.grad, b.grad)


def test_marginal_is_dim_times_axis_sliced():
    gen, params, hyper, real, noise = _ring_setup(seed=58)
    axes = np.eye(2)
    sliced = sliced_isl_loss(params, real, noise, axes, hyper, gen)
    marginal = marginal_isl_loss(params, real, noise, hyper, gen)
    assert marginal.loss == pytest.approx(2.0 * sliced.loss, rel=1e-15)
    assert np.allclose(marginal.grad, 2.0 * sliced.grad, rtol=1e-12, atol=0)


def test_marginal_gradient_matches_fd():
    gen, params, hyper, real, noise = _ring_setup(seed=59, n=32)
    out = marginal_isl_loss(params, real, noise, hyper, gen)

    def value(p):
        return marginal_isl_loss(p, real, noise, hyper, gen).loss

    _fd_check(value, out.grad, params, n_directions=16)


def test_marginal_symmetric_coordinates_close_in_expectation():
    # i.i.d. equal-in-distribution coordinates: per-axis losses agree within
    # 3 standard errors over 50 seeds
    gen = GeneratorSpec((2, 8, 2), ("tanh", "identity"), seed=61)
    params = gen.init_params()
    hyper = IslHyperparams(k=5)
    diffs = []
    for s in range(50):
        rng = RandomSource(70_000 + s)
        real = rng.split("data").normal((200, 2))
        noise = rng.split("noise").normal((5, 2))
        a0 = sliced_isl_loss(params, real, noise, np.array([[1.0, 0.0]]), hyper, gen).loss
        a1 = sliced_isl_loss(params, real, noise, np.array([[0.0, 1.0]]), hyper, gen).loss
        diffs.append(a0 - a1)
    diffs = np.asarray(diffs)
    sem = float(np.std(diffs, ddof=1) / np.sqrt(diffs.size))
    assert abs(float(np.mean(diffs))) <= 3.0 * sem + 1e-12


def test_sliced_mc_error_scales_with_projections():
    # std over direction redraws shrinks ~ 1/sqrt(m)
    gen, params, hyper, real, noise = _ring_setup(seed=63, n=128)
    rng = RandomSource(64)
    losses_10, losses_40 = [], []
    for _ in range(160):
        d10 = sample_unit_sphere(2, 10, rng)
        losses_10.append(sliced_isl_loss(params, real, noise, d10, hyper, gen).loss)
    for _ in range(160):
        d40 = sample_unit_sphere(2, 40, rng)
        losses_40.append(sliced_isl_loss(params, real, noise, d40, hyper, gen).loss)
    ratio = np.std(losses_10) / np.std(losses_40)
    assert 1.5 <= ratio <= 2.5


# ---------------------------------------------------------------------------
# standardization transform
# ---------------------------------------------------------------------------


def test_robust_transform_median_iqr():
    data = np.array([[1.0], [2.0], [3.0], [4.0], [100.0]])
    tr = fit_robust_transform(data)
    assert tr.center[0] == pytest.approx(np.median(data))
    assert tr.scale[0] == pytest.approx(np.quantile(data, 0.75) - np.quantile(data, 0.25))
    back = tr.inverse(tr.transform(data))
    assert np.allclose(back, data, atol=1e-12)


def test_robust_transform_degenerate_column_keeps_unit_scale():
    data = np.column_stack([np.ones(10), np.arange(10.0)])
    tr = fit_robust_transform(data)
    assert tr.scale[0] == 1.0
    assert tr.scale[1] > 0


def test_affine_transform_round_trip_dict():
    tr = AffineTransform(center=[1.0, -2.0], scale=[2.0, 0.5])
    back = AffineTransform.from_dict(tr.to_dict())
    assert np.array_equal(back.center, tr.center)
    assert np.array_equal(back.scale, tr.scale)
    with pytest.raises(ValueError):
        AffineTransform(center=[0.0], scale=[0.0])
