import math

import numpy as np
import pytest
from scipy import stats

from ksgdiffuse import _accel
from ksgdiffuse.denoiser import GaussianPriorDenoiser, ZeroDenoiser
from ksgdiffuse.errors import InvalidArgumentError, NumericalError
from ksgdiffuse.kspace import Mask, fft2c, ifft2c, make_cartesian_mask
from ksgdiffuse.oracle import gaussian_posterior, propagate_moments
from ksgdiffuse.phantom import gaussian_phantom, observe
from ksgdiffuse.rng import ChainStream, Purpose
from ksgdiffuse.sampler import (
    SamplerConfig,
    c2f_reconstruct,
    ksg_step,
    project,
    reverse_step,
    sample_ksg,
    sample_unconditional,
    speedup_factor,
    variance_map,
)
from ksgdiffuse.schedule import Schedule, new_cosine, new_linear, respace


class ConstDenoiser:
    def __init__(self, value):
        self.value = value

    def predict_noise(self, y_t, t, schedule):
        return np.full(np.shape(y_t), self.value, dtype=complex)


def _rand(shape, seed):
    r = np.random.default_rng(seed)
    return r.normal(size=shape) + 1j * r.normal(size=shape)


# ------------------------------------------------------------ reverse step


# 30-digit evaluation of (1/sqrt(0.9)) * (1 - 0.1/sqrt(0.19) * 0.5).
REVERSE_EXAMPLE = 0.9331798450377912


def test_reverse_update_example():
    out = _accel.KERNELS.reverse_update(
        np.ones((1, 1), complex), np.full((1, 1), 0.5 + 0j), None, 1 / math.sqrt(0.9), 0.1 / math.sqrt(0.19), 0.0
    )
    assert out[0, 0].real == pytest.approx(REVERSE_EXAMPLE, abs=1e-5)


def test_reverse_step_example_with_its_noise():
    s = new_linear(2, 0.1, 0.1)
    rng = ChainStream(9, 2)
    y = np.ones((1, 1), complex)
    out = reverse_step(y, 2, s, ConstDenoiser(0.5), rng)
    z = rng.complex_normal((1, 1), step=2, purpose=Purpose.REVERSE)
    expected = (1 - 0.1 / math.sqrt(0.19) * 0.5) / math.sqrt(0.9) + math.sqrt(s.sigma2[1]) * z[0, 0]
    assert out[0, 0] == pytest.approx(expected, abs=1e-12)


def test_reverse_step_zero_beta_is_identity():
    beta = np.array([0.1, 0.0])
    abar = np.cumprod(1 - beta)
    s = Schedule(beta=beta, alpha=1 - beta, alpha_bar=abar, sigma2=np.zeros(2),
                 timesteps=np.array([1, 2]), kind="linear")
    y = _rand((3, 3), 1)
    np.testing.assert_array_equal(reverse_step(y, 2, s, ConstDenoiser(7.0), ChainStream(0)), y)


def test_reverse_step_last_step_is_deterministic():
    s = new_cosine(10)
    y = _rand((4, 4), 2)
    out = reverse_step(y, 1, s, ZeroDenoiser(), ChainStream(0))
    np.testing.assert_allclose(out, y / math.sqrt(s.alpha[0]), rtol=1e-15)
    with pytest.raises(InvalidArgumentError):
        reverse_step(y, 11, s, ZeroDenoiser(), ChainStream(0))


def test_reverse_step_rejects_bad_denoiser_shape():
    class Bad:
        def predict_noise(self, y, t, s):
            return np.zeros((1, 1))

    with pytest.raises(InvalidArgumentError):
        reverse_step(np.zeros((2, 2), complex), 2, new_cosine(4), Bad(), ChainStream(0))


# --------------------------------------------------------------- ksg step


def test_ksg_step_trivial_masks():
    s = new_cosine(20)
    y = _rand((6, 8), 1)
    x_obs = fft2c(_rand((6, 8), 2))
    ones, zeros = Mask.dense(np.ones((6, 8))), Mask.dense(np.zeros((6, 8)))
    np.testing.assert_allclose(ksg_step(y, 5, x_obs, ones, s, False, ChainStream(0)), ifft2c(x_obs), atol=1e-14)
    np.testing.assert_allclose(ksg_step(y, 5, x_obs, zeros, s, True, ChainStream(0)), y, atol=1e-14)


def test_ksg_step_level_zero_is_exact_replacement():
    s = new_cosine(20)
    m = make_cartesian_mask(8, 8, 2, 0.25, 0)
    x_obs = fft2c(_rand((8, 8), 3)) * m.entries
    out = ksg_step(_rand((8, 8), 4), 0, x_obs, m, s, True, ChainStream(0))
    assert np.abs(fft2c(out)[m.entries] - x_obs[m.entries]).max() <= 1e-5
    np.testing.assert_allclose(out, project(_rand((8, 8), 4), x_obs, m), atol=1e-15)


def test_ksg_noise_has_forward_marginal_variance():
    s = new_cosine(50)
    t = 30
    m = Mask.dense(np.ones((128, 128)))
    out = ksg_step(np.zeros((128, 128), complex), t, np.zeros((128, 128), complex), m, s, True, ChainStream(1))
    k = fft2c(out)
    target = 1 - s.alpha_bar[t - 1]
    assert k.real.var() == pytest.approx(target, rel=0.03)
    assert k.imag.var() == pytest.approx(target, rel=0.03)


def test_ksg_step_shape_checks():
    s = new_cosine(5)
    with pytest.raises(InvalidArgumentError):
        ksg_step(np.zeros((2, 2)), 1, np.zeros((2, 3)), Mask.dense(np.ones((2, 2))), s, True, ChainStream(0))
    with pytest.raises(InvalidArgumentError):
        ksg_step(np.zeros((2, 2)), 1, np.zeros((2, 2)), Mask.dense(np.ones((3, 2))), s, True, ChainStream(0))


# ---------------------------------------------------- unconditional moments


@pytest.mark.parametrize("mu,s2", [(0.7, 1.0), (-0.3, 0.5), (1.5, 2.0)])
def test_unconditional_moments(mu, s2):
    # 4096 pixels of an i.i.d. prior are 4096 independent one-pixel chains.
    s = new_cosine(200)
    d = GaussianPriorDenoiser(np.full((64, 64), mu + 0j), s2)
    y = sample_unconditional((64, 64), s, d, seed=3).real.ravel()
    n = y.size
    assert abs(y.mean() - mu) <= 3 * math.sqrt(s2) / math.sqrt(n)
    assert 0.9 * s2 <= y.var(ddof=1) <= 1.1 * s2
    m, v = propagate_moments(s, mu, s2)
    assert abs(y.mean() - m) <= 3 * math.sqrt(v / n)
    assert abs(y.var(ddof=1) - v) <= 3 * v * math.sqrt(2 / (n - 1))


def test_single_step_pulls_to_prior():
    s = new_linear(1, 0.999, 0.999)
    d = GaussianPriorDenoiser(np.full((64, 64), 2.0 + 0j), 0.5)
    y = sample_unconditional((64, 64), s, d, seed=1).real.ravel()
    m, v = propagate_moments(s, 2.0, 0.5)
    assert abs(y.mean() - m) <= 3 * math.sqrt(v / y.size)
    assert abs(y.var(ddof=1) - v) <= 3 * v * math.sqrt(2 / (y.size - 1))
    assert abs(m - 2.0) < 0.1


def test_gaussian_state_stays_gaussian():
    s = new_cosine(100)
    d = GaussianPriorDenoiser(np.zeros((64, 64)), 1.0)
    y = sample_unconditional((64, 64), s, d, seed=8)
    _, p = stats.normaltest(y.real.ravel())
    assert p > 1e-3


def test_coarse_noise_constant():
    # Var(coarse) - Var(fine) over 8192 chains each vs the propagated constant.
    full = new_cosine(200)
    coarse = respace(full, 20)
    d = GaussianPriorDenoiser(np.zeros((128, 64)), 1.0)
    vf = sample_unconditional((128, 64), full, d, seed=1).real.var(ddof=1)
    vc = sample_unconditional((128, 64), coarse, d, seed=2).real.var(ddof=1)
    n = 128 * 64
    af = propagate_moments(full, 0.0, 1.0)[1]
    ac = propagate_moments(coarse, 0.0, 1.0)[1]
    se = math.sqrt(2 * af**2 / (n - 1) + 2 * ac**2 / (n - 1))
    assert abs((vc - vf) - (ac - af)) <= 3 * se
    assert ac - af < -0.01


def test_unconditional_determinism():
    s = new_cosine(30)
    d = GaussianPriorDenoiser(np.zeros((5, 5)), 1.0)
    a = sample_unconditional((5, 5), s, d, seed=4)
    assert a.tobytes() == sample_unconditional((5, 5), s, d, seed=4).tobytes()
    assert a.tobytes() != sample_unconditional((5, 5), s, d, seed=5).tobytes()


# --------------------------------------------------------------- guided


def test_sample_ksg_full_mask_returns_observation():
    s = new_cosine(20)
    x_obs = fft2c(_rand((6, 6), 1))
    out = sample_ksg(x_obs, Mask.dense(np.ones((6, 6))), s, GaussianPriorDenoiser(np.zeros((6, 6))), True, 0)
    np.testing.assert_allclose(out, ifft2c(x_obs), atol=1e-13)


def test_sample_ksg_consistency_and_determinism():
    s = new_cosine(40)
    m = make_cartesian_mask(12, 12, 3, 0.2, 1)
    x_obs = observe(_rand((12, 12), 2), m)
    d = GaussianPriorDenoiser(np.zeros((12, 12)), 1.0)
    a = sample_ksg(x_obs, m, s, d, True, 5, chain=2)
    assert np.abs(fft2c(a)[m.entries] - x_obs[m.entries]).max() <= 1e-10
    assert a.tobytes() == sample_ksg(x_obs, m, s, d, True, 5, chain=2).tobytes()


def test_sample_ksg_unobserved_mean_tracks_prior():
    ph = gaussian_phantom(8, 8, seed=0, amplitude=3.0)
    m = make_cartesian_mask(8, 8, 2, 0.25, 0)
    x_obs = observe(ph.ground_truth, m)
    s = new_cosine(50)
    d = GaussianPriorDenoiser(ph.mu, 1.0)
    ks = np.stack([fft2c(sample_ksg(x_obs, m, s, d, True, 1, chain=c)) for c in range(300)])
    un = ~m.entries
    err = ks.mean(axis=0)[un] - fft2c(ph.mu)[un]
    v = propagate_moments(s, 0.0, 1.0)[1]
    assert np.abs(err).max() <= 5 * math.sqrt(2 * v / 300)


def test_non_finite_state_raises():
    s = new_cosine(5)
    with pytest.raises(NumericalError):
        sample_unconditional((2, 2), s, ConstDenoiser(np.inf), 0)


# --------------------------------------------------------------- variance


def test_variance_map_examples():
    a = np.ones((2, 2), complex)
    assert not variance_map([a, a, a]).any()
    x = np.array([[1.0 + 0j]])
    assert variance_map([x, 3j * x])[0, 0] == 2.0
    assert not variance_map([x]).any()
    with pytest.raises(InvalidArgumentError):
        variance_map([])
    with pytest.raises(InvalidArgumentError):
        variance_map([np.zeros((2, 2)), np.zeros((2, 3))])


def test_variance_higher_where_unobserved():
    ph = gaussian_phantom(16, 16, seed=1)
    m = Mask.from_columns(16, 16, list(range(0, 8)), "cartesian")
    x_obs = observe(ph.ground_truth, m)
    cfg = SamplerConfig(T=40, k=2, N=16, refine=False, seed=0)
    res = c2f_reconstruct(x_obs, m, new_cosine(40), GaussianPriorDenoiser(ph.mu, 1.0), cfg)
    # With every coefficient observed all samples coincide.
    full = c2f_reconstruct(observe(ph.ground_truth, Mask.dense(np.ones((16, 16)))),
                           Mask.dense(np.ones((16, 16))), new_cosine(40), GaussianPriorDenoiser(ph.mu, 1.0), cfg)
    assert res.variance.mean() > 10 * max(full.variance.mean(), 1e-12)
    assert np.all(res.variance >= 0)


# ------------------------------------------------------------ config, c2f


def test_speedup_examples():
    assert speedup_factor(SamplerConfig()) == pytest.approx(40000 / 1020, rel=1e-15)
    assert round(speedup_factor(SamplerConfig())) == 39
    assert speedup_factor(SamplerConfig(k=1, T_refine=0)) == 1.0
    assert speedup_factor(SamplerConfig(k=8)) == pytest.approx(7.968127, rel=1e-6)
    assert speedup_factor(SamplerConfig(refine=False)) == 40.0


@pytest.mark.parametrize(
    "kw",
    [{"T": 0}, {"k": 0}, {"N": 0}, {"T": 10, "k": 11}, {"T_refine": -1}, {"T": 10, "k": 1, "T_refine": 10},
     {"seed": 1.5}, {"workers": 0}, {"N": True}],
)
def test_config_validation(kw):
    with pytest.raises(InvalidArgumentError):
        SamplerConfig(**kw)


def test_config_ignores_refine_length_without_refine():
    assert SamplerConfig(T=10, k=1, T_refine=50, refine=False).coarse_steps == 10


def _problem(h=16, w=16, seed=0):
    ph = gaussian_phantom(h, w, seed=seed)
    m = make_cartesian_mask(h, w, 4, 0.08 if w >= 13 else 0.1, seed)
    return ph, m, observe(ph.ground_truth, m)


def test_single_chain_without_refinement():
    ph, m, x = _problem()
    cfg = SamplerConfig(T=50, k=5, N=1, refine=False, keep_samples=True, seed=3)
    r = c2f_reconstruct(x, m, new_cosine(50), GaussianPriorDenoiser(ph.mu), cfg)
    assert r.mean.tobytes() == r.samples[0].tobytes()
    assert not r.variance.any()


@pytest.mark.parametrize("ksg_noise", [True, False])
@pytest.mark.parametrize("refine", [True, False])
def test_c2f_data_consistency(ksg_noise, refine):
    ph, m, x = _problem(20, 24, 2)
    cfg = SamplerConfig(T=60, k=6, N=3, T_refine=5, ksg_noise=ksg_noise, refine=refine, seed=1)
    for d in (GaussianPriorDenoiser(ph.mu), ZeroDenoiser()):
        r = c2f_reconstruct(x, m, new_cosine(60), d, cfg)
        assert np.abs(fft2c(r.mean)[m.entries] - x[m.entries]).max() <= 1e-4


def test_c2f_bit_identical_across_worker_counts():
    ph, m, x = _problem()
    d = GaussianPriorDenoiser(ph.mu)
    base = SamplerConfig(T=40, k=4, N=6, T_refine=4, seed=11, keep_samples=True)
    ref = c2f_reconstruct(x, m, new_cosine(40), d, base)
    for workers in (2, 3, 6):
        other = c2f_reconstruct(x, m, new_cosine(40), d, SamplerConfig(**{**base.__dict__, "workers": workers}))
        assert other.mean.tobytes() == ref.mean.tobytes()
        assert other.variance.tobytes() == ref.variance.tobytes()
        assert all(a.tobytes() == b.tobytes() for a, b in zip(ref.samples, other.samples))


def test_c2f_metadata():
    ph, m, x = _problem()
    cfg = SamplerConfig(T=40, k=4, N=2, T_refine=4)
    r = c2f_reconstruct(x, m, new_cosine(40), GaussianPriorDenoiser(ph.mu), cfg)
    md = r.metadata
    assert md["speedup_factor"] == speedup_factor(cfg)
    assert md["coarse_schedule"]["num_steps"] == 10
    assert md["schedule"]["num_steps"] == 40
    assert set(md["timings"]) == {"coarse_s", "refine_s", "total_s"}
    assert md["backend"] == _accel.BACKEND
    assert r.samples is None


def test_c2f_rejects_mismatched_schedule():
    ph, m, x = _problem()
    with pytest.raises(InvalidArgumentError):
        c2f_reconstruct(x, m, new_cosine(30), ZeroDenoiser(), SamplerConfig(T=40, k=4))


def test_chain_failure_aborts_reconstruction():
    class FailsLate:
        calls = 0

        def predict_noise(self, y, t, s):
            FailsLate.calls += 1
            if FailsLate.calls > 25:
                return np.full(np.shape(y), np.nan, complex)
            return np.zeros(np.shape(y), complex)

    ph, m, x = _problem()
    with pytest.raises(NumericalError):
        c2f_reconstruct(x, m, new_cosine(40), FailsLate(), SamplerConfig(T=40, k=4, N=4, workers=2))


def test_all_zero_observation_accepted():
    m = make_cartesian_mask(16, 16, 4, 0.08, 0)
    r = c2f_reconstruct(np.zeros((16, 16), complex), m, new_cosine(20), GaussianPriorDenoiser(np.zeros((16, 16))),
                        SamplerConfig(T=20, k=2, N=2, T_refine=2))
    assert np.abs(fft2c(r.mean)[m.entries]).max() <= 1e-12


def test_averaging_reduces_error():
    # Distance to the posterior mean shrinks with N (Spearman trend < 0).
    ph, m, x = _problem(12, 12, 4)
    s = new_cosine(30)
    d = GaussianPriorDenoiser(ph.mu)
    target = gaussian_posterior(ph.mu, 1.0, m, x).mean
    Ns, errs = [], []
    for N in (1, 2, 5, 10):
        for trial in range(20):
            r = c2f_reconstruct(x, m, s, d, SamplerConfig(T=30, k=3, N=N, refine=False, seed=100 * N + trial))
            Ns.append(N)
            errs.append(np.linalg.norm(r.mean - target))
    rho, p = stats.spearmanr(Ns, errs)
    assert rho < 0 and p < 0.05
    means = [np.mean(errs[i * 20:(i + 1) * 20]) for i in range(4)]
    assert all(a > b for a, b in zip(means, means[1:]))
