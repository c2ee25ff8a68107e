"""Tests for the Q-distribution inversion: densities, posteriors, MAP."""

import math
import warnings

import numpy as np
import pytest
import scipy.integrate
import scipy.stats

from xiloss import inference as inf
from xiloss.calibrate import Calibration, PowerLawFit
from xiloss.errors import (
    DataError,
    ModelMismatchError,
    ParameterDomainError,
)
from xiloss.inference import (
    LocalizationEstimator,
    LossModel,
    MapEstimate,
    PosteriorGrid,
    compose_q,
    likelihood_distributed_loss,
    likelihood_single_loss,
    map_estimate,
    mean_loss_length,
    p1_cdf,
    p1_density,
    p3_density,
    posterior,
    sample_p1,
)
from xiloss.spectra import QDataset
from xiloss.stack import StackSpec


def _law(a, b):
    return PowerLawFit(a, b, 0.01, 0.01, 0.999, 4)


CAL = Calibration(
    mu_law=_law(5.9, -0.22),
    s_law=_law(0.4, -0.59),
    dn_law=_law(0.22, -0.55),
    reference=StackSpec(),
    xi_over_l_grid=(0.03, 0.06, 0.12, 0.24),
    realizations=1000,
    q_realizations=120,
    master_seed=0,
    wavelength_nm=950.0,
    lambda_range_nm=(940.0, 960.0),
)
LOSS_700 = LossModel.single(700.0)
LOSS_500 = LossModel.single(500.0)


def _dataset(q, sigma_frac=0.01, length=100.0):
    return QDataset(
        tuple((float(v), float(sigma_frac * v)) for v in np.atleast_1d(q)),
        sample_length_um=length,
    )


# ---------------------------------------------------------------------------
# loss model


def test_loss_q_factor_mapping():
    # Q_l = n pi l / lambda with both lengths in the same unit
    assert math.isclose(
        LOSS_700.q_l, 3.44 * math.pi * 700.0 / 0.95, rel_tol=1e-12
    )
    assert math.isclose(LOSS_700.q_l, 7963.1, rel_tol=1e-4)


def test_loss_model_variants_guard_their_fields():
    d = LossModel.distributed(math.log(700.0), 0.5)
    assert math.isclose(
        d.ln_q_l_center,
        math.log(700.0) + math.log(3.44 * math.pi / 0.95),
        rel_tol=1e-12,
    )
    with pytest.raises(ParameterDomainError):
        _ = d.q_l
    with pytest.raises(ParameterDomainError):
        _ = LOSS_700.ln_q_l_center


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(variant="other"),
        dict(variant="single", loss_length_um=0.0),
        dict(variant="single", loss_length_um=700.0, wavelength_nm=0.0),
        dict(variant="distributed", mu_l=math.nan, s_l=0.5),
        dict(variant="distributed", mu_l=6.0, s_l=0.0),
    ],
)
def test_loss_model_rejects_bad_parameters(kwargs):
    with pytest.raises(ParameterDomainError):
        LossModel(**kwargs)


def test_compose_q_is_the_harmonic_sum():
    assert math.isclose(compose_q(2.0, 2.0), 1.0, rel_tol=1e-15)
    assert math.isclose(compose_q(3000.0, 6000.0), 2000.0, rel_tol=1e-15)
    np.testing.assert_allclose(
        compose_q([100.0, 400.0], 400.0), [80.0, 200.0], rtol=1e-15
    )
    assert compose_q(123.0, math.inf) == 123.0
    with pytest.raises(ParameterDomainError):
        compose_q(-1.0, 100.0)


# ---------------------------------------------------------------------------
# observed-Q density


def test_p1_is_zero_at_and_above_the_ceiling():
    q_l = LOSS_700.q_l
    vals = p1_density([q_l, q_l + 1.0, 2 * q_l], 0.1, LOSS_700, CAL)
    np.testing.assert_array_equal(vals, [0.0, 0.0, 0.0])
    assert p1_density(0.9 * q_l, 0.1, LOSS_700, CAL) > 0.0


def test_p1_lossless_limit_is_the_plain_lognormal():
    mu = float(CAL.mu_at(0.1))
    s = float(CAL.s_at(0.1))
    huge = LossModel.single(1e12)
    for q in (2e3, 2e4, 2e5):
        plain = math.exp(-0.5 * ((math.log(q) - mu) / s) ** 2) / (
            q * s * math.sqrt(2 * math.pi)
        )
        assert math.isclose(
            float(p1_density(q, 0.1, huge, CAL)), plain, rel_tol=1e-6
        )


def test_p1_normalizes_to_one_on_its_support():
    # independent adaptive quadrature over (0, Q_l)
    total, err = scipy.integrate.quad(
        lambda q: float(p1_density(q, 0.1, LOSS_700, CAL)),
        0.0,
        LOSS_700.q_l,
        limit=400,
    )
    assert err < 1e-7
    assert abs(total - 1.0) < 1e-6


def test_p1_rejects_bad_input():
    with pytest.raises(ParameterDomainError):
        p1_density(-5.0, 0.1, LOSS_700, CAL)
    with pytest.raises(ParameterDomainError):
        p1_density(100.0, 0.0, LOSS_700, CAL)
    with pytest.raises(ParameterDomainError):
        p1_density(100.0, 0.1, LossModel.distributed(6.0, 0.5), CAL)


def test_p1_samples_respect_the_ceiling_and_the_cdf():
    qs = sample_p1(100_000, 0.1, LOSS_700, CAL, seed=3)
    assert np.all(qs < LOSS_700.q_l)  # exact, by construction
    stat = scipy.stats.kstest(
        qs, lambda v: np.asarray(p1_cdf(v, 0.1, LOSS_700, CAL))
    )
    assert stat.pvalue > 0.01
    again = sample_p1(100_000, 0.1, LOSS_700, CAL, seed=3)
    assert np.array_equal(qs, again)


def test_p1_cdf_saturates_above_the_ceiling():
    q_l = LOSS_700.q_l
    grid = np.array([0.2 * q_l, 0.6 * q_l, 0.95 * q_l])
    vals = p1_cdf(grid, 0.1, LOSS_700, CAL)
    assert np.all(np.diff(vals) > 0)
    assert p1_cdf(q_l + 1.0, 0.1, LOSS_700, CAL) == 1.0


# ---------------------------------------------------------------------------
# noise-smoothed likelihood


def test_noise_free_limit_recovers_p1():
    for q in (1500.0, 6000.0):
        a = float(likelihood_single_loss(q, 1e-6 * q, 0.1, LOSS_700, CAL))
        b = float(p1_density(q, 0.1, LOSS_700, CAL))
        assert math.isclose(a, b, rel_tol=1e-6)


def test_noise_smooths_the_hard_ceiling():
    q_l = LOSS_700.q_l
    sigma = 50.0
    above = float(
        likelihood_single_loss(q_l + sigma, sigma, 0.1, LOSS_700, CAL)
    )
    grid = np.linspace(1.0, q_l - 1.0, 4001)
    peak = float(np.max(p1_density(grid, 0.1, LOSS_700, CAL)))
    assert 0.0 < above < peak


def test_noise_convolution_matches_monte_carlo():
    # independent oracle: draw from p1, add Gaussian noise, read the
    # density off a histogram window; the analytic side is averaged over
    # the same window so the comparison carries no binning bias
    sigma = 150.0
    # noise seed must differ from the sampling seed: identical seeds
    # replay the same normal stream and correlate noise with signal
    rng = np.random.default_rng(1001)
    qs = sample_p1(1_000_000, 0.1, LOSS_700, CAL, seed=9)
    noisy = qs + rng.normal(0.0, sigma, qs.size)
    for q in (2000.0, 4000.0, 6000.0):
        h = 250.0
        mc = np.mean((noisy > q - h) & (noisy < q + h)) / (2 * h)
        window = np.linspace(q - h, q + h, 81)
        an = float(
            np.trapezoid(
                likelihood_single_loss(window, sigma, 0.1, LOSS_700, CAL),
                window,
            )
            / (2 * h)
        )
        assert math.isclose(an, mc, rel_tol=0.02)


def test_noise_likelihood_validates_input():
    with pytest.raises(ParameterDomainError):
        likelihood_single_loss(100.0, 0.0, 0.1, LOSS_700, CAL)
    with pytest.raises(ParameterDomainError):
        likelihood_single_loss(100.0, 1.0, 0.1, LOSS_700, CAL, nodes=4)
    with pytest.raises(ParameterDomainError):
        likelihood_single_loss(
            100.0, 1.0, 0.1, LossModel.distributed(6.0, 0.5), CAL
        )


# ---------------------------------------------------------------------------
# loss-distribution density and average


def test_p3_is_a_normalized_lognormal_with_the_stated_mode():
    mu, s = math.log(4000.0), 0.6
    mode = math.exp(mu - s * s)
    eps = 1e-4 * mode
    center = float(p3_density(mode, mu, s))
    assert center > float(p3_density(mode - eps, mu, s))
    assert center > float(p3_density(mode + eps, mu, s))
    total, _ = scipy.integrate.quad(
        lambda v: float(p3_density(v, mu, s)), 0.0, np.inf, limit=400
    )
    assert abs(total - 1.0) < 1e-8
    with pytest.raises(ParameterDomainError):
        p3_density(-1.0, mu, s)
    with pytest.raises(ParameterDomainError):
        p3_density(100.0, mu, 0.0)


def test_mean_loss_length_closed_form_and_sampled():
    assert math.isclose(
        mean_loss_length(math.log(500.0), 0.0), 500.0, rel_tol=1e-12
    )
    val = mean_loss_length(math.log(500.0), 0.5)
    assert math.isclose(val, 566.6, rel_tol=1e-3)
    rng = np.random.default_rng(2)
    draws = rng.lognormal(math.log(500.0), 0.5, 1_000_000)
    assert math.isclose(draws.mean(), val, rel_tol=0.01)
    with pytest.raises(ParameterDomainError):
        mean_loss_length(6.0, -0.1)


def test_distributed_likelihood_degenerates_to_single_loss():
    tight = LossModel.distributed(math.log(700.0), 1e-4)
    for q in (1500.0, 6000.0):
        a = float(likelihood_distributed_loss(q, 0.1, tight, CAL))
        b = float(p1_density(q, 0.1, LOSS_700, CAL))
        assert math.isclose(a, b, rel_tol=1e-3)


def test_distributed_likelihood_is_stable_under_node_doubling():
    loss = LossModel.distributed(math.log(700.0), 0.5)
    for q in (800.0, 4000.0, 9000.0):
        a = float(likelihood_distributed_loss(q, 0.1, loss, CAL, nodes=64))
        b = float(likelihood_distributed_loss(q, 0.1, loss, CAL, nodes=128))
        assert math.isclose(a, b, rel_tol=1e-4)


def test_distributed_likelihood_softens_any_fixed_ceiling():
    loss = LossModel.distributed(math.log(700.0), 0.5)
    q_above = 1.5 * LOSS_700.q_l
    assert float(likelihood_distributed_loss(q_above, 0.1, loss, CAL)) > 0.0


def test_distributed_likelihood_matches_double_sampling():
    loss = LossModel.distributed(math.log(700.0), 0.5)
    rng = np.random.default_rng(4)
    n = 1_000_000
    q_l_draw = loss.q_l_of(np.exp(rng.normal(loss.mu_l, loss.s_l, n)))
    q0 = np.exp(rng.normal(float(CAL.mu_at(0.1)), float(CAL.s_at(0.1)), n))
    qs = compose_q(q0, q_l_draw)
    for q in (2000.0, 4000.0):
        h = 0.05 * q
        mc = np.mean((qs > q - h) & (qs < q + h)) / (2 * h)
        an = float(likelihood_distributed_loss(q, 0.1, loss, CAL))
        assert math.isclose(an, mc, rel_tol=0.02)


def test_distributed_likelihood_validates_input():
    with pytest.raises(ParameterDomainError):
        likelihood_distributed_loss(100.0, 0.1, LOSS_700, CAL)
    with pytest.raises(ParameterDomainError):
        likelihood_distributed_loss(
            100.0, 0.1, LossModel.distributed(6.0, 0.5), CAL, nodes=32
        )


# ---------------------------------------------------------------------------
# posterior grids


def _small_grids():
    return dict(
        xi_grid_um=np.geomspace(2.0, 50.0, 16),
        l_grid_um=np.geomspace(100.0, 2000.0, 12),
    )


def test_single_datum_posterior_is_proportional_to_its_likelihood():
    post = posterior(_dataset([4000.0]), CAL, "single", **_small_grids())
    lik = np.array(
        [
            [
                float(
                    likelihood_single_loss(
                        4000.0, 40.0, xi / 100.0, LossModel.single(l), CAL
                    )
                )
                for l in post.axis("l_um")
            ]
            for xi in post.axis("xi_um")
        ]
    )
    expected = lik / lik.sum()
    actual = np.exp(post.log_posterior)
    mask = expected > 0
    assert np.all(
        np.abs(actual[mask] / expected[mask] - 1.0) < 1e-10
    )
    np.testing.assert_array_equal(actual[~mask], 0.0)


def test_posterior_is_permutation_invariant_bit_for_bit():
    q = sample_p1(40, 0.1, LOSS_500, CAL, seed=5)
    pairs = [(float(v), float(0.01 * v)) for v in q]
    a = posterior(
        QDataset(tuple(pairs), sample_length_um=100.0),
        CAL, "single", **_small_grids(),
    )
    b = posterior(
        QDataset(tuple(reversed(pairs)), sample_length_um=100.0),
        CAL, "single", **_small_grids(),
    )
    assert np.array_equal(a.log_posterior, b.log_posterior)
    assert a.log_evidence == b.log_evidence


def test_posterior_mass_is_exactly_normalized():
    post = posterior(_dataset([3000.0, 4500.0]), CAL, "single", **_small_grids())
    assert abs(float(np.exp(post.log_posterior).sum()) - 1.0) < 1e-9
    assert math.isfinite(post.log_evidence)


def test_posterior_rejects_empty_and_unlabeled_datasets():
    with pytest.raises(DataError):
        posterior(QDataset(()), CAL, "single")
    with pytest.raises(ParameterDomainError):
        posterior(
            QDataset(((3000.0, 30.0),)), CAL, "single", **_small_grids()
        )  # no sample length anywhere
    post = posterior(
        QDataset(((3000.0, 30.0),)),
        CAL,
        "single",
        sample_length_um=100.0,
        **_small_grids(),
    )
    assert post.sample_length_um == 100.0


def test_posterior_flags_data_no_model_can_produce():
    ds = QDataset(((1e9, 1.0),), sample_length_um=100.0)
    with pytest.raises(ModelMismatchError):
        posterior(ds, CAL, "single", **_small_grids())


def test_posterior_recovers_synthetic_truth():
    # truth xi=10 um (xi/L=0.1 at L=100), l=500 um; grids dense enough
    # that cell quantization stays inside the quoted tolerances
    hits = 0
    for seed in range(3):
        q = sample_p1(100, 0.1, LOSS_500, CAL, seed=seed)
        post = posterior(
            _dataset(q),
            CAL,
            "single",
            xi_grid_um=np.geomspace(2.0, 50.0, 96),
            l_grid_um=np.geomspace(150.0, 1500.0, 96),
        )
        m = map_estimate(post)
        hits += (
            abs(m.xi_um - 10.0) / 10.0 < 0.2
            and abs(m.loss_length_um - 500.0) / 500.0 < 0.3
        )
    assert hits >= 2


def test_wider_q_distributions_mean_smaller_localization_lengths():
    # same draws, same loss, only the intrinsic ln Q spread scaled; the
    # loss axis is pinned at the generating value so the ceiling cannot
    # trade against xi
    mu = float(CAL.mu_at(0.1))
    s = float(CAL.s_at(0.1))
    q_l = LOSS_500.q_l
    pin = np.array([499.9, 500.1])
    for seed in (1, 11):
        z = np.random.default_rng(seed).normal(size=150)
        maps = []
        for g in (1.0, 1.3, 1.6):
            q = compose_q(np.exp(mu + g * s * z), q_l)
            post = posterior(
                _dataset(q),
                CAL,
                "single",
                xi_grid_um=np.geomspace(2.0, 50.0, 64),
                l_grid_um=pin,
            )
            with warnings.catch_warnings():
                # MAP l sits on the two-point pinned axis by construction
                warnings.simplefilter("ignore", RuntimeWarning)
                maps.append(map_estimate(post).xi_um)
        assert maps[0] > maps[1] > maps[2]


def test_map_error_shrinks_with_dataset_size():
    grids = dict(
        xi_grid_um=np.geomspace(2.0, 50.0, 32),
        l_grid_um=np.geomspace(150.0, 1500.0, 32),
    )
    med = {}
    for n in (25, 100, 400):
        errs = []
        for seed in range(10):
            q = sample_p1(n, 0.1, LOSS_500, CAL, seed=100 * n + seed)
            m = map_estimate(posterior(_dataset(q), CAL, "single", **grids))
            errs.append(abs(math.log(m.xi_um / 10.0)))
        med[n] = float(np.median(errs))
    assert med[400] <= med[100] <= med[25]
    assert med[400] < med[25]


def test_distributed_posterior_finds_the_loss_family():
    loss = LossModel.distributed(math.log(500.0), 0.4)
    rng = np.random.default_rng(21)
    n = 150
    q_l_draw = loss.q_l_of(np.exp(rng.normal(loss.mu_l, loss.s_l, n)))
    q0 = np.exp(rng.normal(float(CAL.mu_at(0.1)), float(CAL.s_at(0.1)), n))
    ds = _dataset(compose_q(q0, q_l_draw))
    post = posterior(
        ds,
        CAL,
        "distributed",
        xi_grid_um=np.geomspace(3.0, 30.0, 24),
        mu_l_grid=np.linspace(math.log(200.0), math.log(1200.0), 20),
        s_l_grid=np.geomspace(0.1, 1.2, 12),
    )
    m = map_estimate(post)
    assert m.variant == "distributed"
    truth = mean_loss_length(loss.mu_l, loss.s_l)
    assert abs(m.mean_loss_um - truth) / truth < 0.3
    assert abs(m.xi_um - 10.0) / 10.0 < 0.35


def test_posterior_grid_round_trips_through_dict():
    post = posterior(_dataset([3000.0, 4500.0]), CAL, "single", **_small_grids())
    again = PosteriorGrid.from_dict(post.to_dict())
    assert again.variant == post.variant
    assert again.axis_names == post.axis_names
    for a, b in zip(again.axes, post.axes):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(again.log_posterior, post.log_posterior)
    assert again.log_evidence == post.log_evidence


def test_posterior_grid_validates_itself():
    post = posterior(_dataset([3000.0]), CAL, "single", **_small_grids())
    d = post.to_dict()
    d["format"] = "something-else"
    with pytest.raises(ParameterDomainError):
        PosteriorGrid.from_dict(d)
    bad = post.to_dict()
    bad["log_posterior"] = (np.asarray(bad["log_posterior"]) + 1.0).tolist()
    with pytest.raises(ParameterDomainError):
        PosteriorGrid.from_dict(bad)  # mass no longer 1
    flipped = post.to_dict()
    flipped["axes"][0] = list(reversed(flipped["axes"][0]))
    with pytest.raises(ParameterDomainError):
        PosteriorGrid.from_dict(flipped)


def test_posterior_grid_is_read_only():
    post = posterior(_dataset([3000.0]), CAL, "single", **_small_grids())
    with pytest.raises(ValueError):
        post.log_posterior[0, 0] = 0.0


# ---------------------------------------------------------------------------
# MAP extraction


def _hand_grid(values):
    lp = np.log(np.asarray(values, dtype=float))
    lp -= _logsumexp(lp)
    return PosteriorGrid(
        variant="single",
        axes=(np.array([1.0, 2.0, 4.0]), np.array([10.0, 20.0, 40.0])),
        axis_names=("xi_um", "l_um"),
        log_posterior=lp,
        log_evidence=0.0,
        sample_length_um=100.0,
        wavelength_nm=950.0,
        group_index=3.44,
    )


def _logsumexp(a):
    m = np.max(a)
    return m + math.log(float(np.exp(a - m).sum()))


def test_map_picks_the_peak_cell():
    vals = np.full((3, 3), 1e-3)
    vals[1, 1] = 1.0
    m = map_estimate(_hand_grid(vals))
    assert (m.xi_um, m.loss_length_um) == (2.0, 20.0)
    assert not m.on_boundary
    assert not m.degenerate
    assert m.credible_region[1, 1]
    assert m.mean_loss_um == 20.0


def test_flat_posterior_breaks_ties_toward_the_smallest_cell():
    with pytest.warns(RuntimeWarning):
        m = map_estimate(_hand_grid(np.ones((3, 3))))
    assert (m.xi_um, m.loss_length_um) == (1.0, 10.0)
    assert m.degenerate


def test_boundary_map_raises_a_warning():
    vals = np.full((3, 3), 1e-3)
    vals[0, 2] = 1.0
    with pytest.warns(RuntimeWarning):
        m = map_estimate(_hand_grid(vals))
    assert m.on_boundary


def test_credible_region_matches_its_threshold():
    vals = np.full((3, 3), 1e-6)
    vals[1, 1] = 1.0
    vals[1, 2] = 0.5
    g = _hand_grid(vals)
    m = map_estimate(g, credible_fraction=0.25)
    expected = g.log_posterior >= m.log_posterior_at_map + math.log(0.25)
    np.testing.assert_array_equal(m.credible_region, expected)
    assert m.credible_region.sum() == 2
    with pytest.raises(ParameterDomainError):
        map_estimate(g, credible_fraction=1.5)


# ---------------------------------------------------------------------------
# estimator surface


def test_estimator_requires_a_calibration():
    with pytest.raises(ParameterDomainError):
        LocalizationEstimator().fit(_dataset([3000.0]))


def test_estimator_fits_and_exposes_map_attributes():
    q = sample_p1(60, 0.1, LOSS_500, CAL, seed=8)
    est = LocalizationEstimator(
        calibration=CAL,
        xi_grid_um=np.geomspace(2.0, 50.0, 48),
        l_grid_um=np.geomspace(150.0, 1500.0, 48),
    )
    assert est.fit(_dataset(q)) is est
    assert est.xi_um_ == est.map_.xi_um
    assert est.loss_length_um_ == est.map_.loss_length_um
    assert isinstance(est.posterior_, PosteriorGrid)
    assert 2.0 <= est.xi_um_ <= 50.0


def test_estimator_distributed_variant_reports_the_family():
    loss = LossModel.distributed(math.log(500.0), 0.4)
    rng = np.random.default_rng(3)
    q_l_draw = loss.q_l_of(np.exp(rng.normal(loss.mu_l, loss.s_l, 80)))
    q0 = np.exp(rng.normal(float(CAL.mu_at(0.1)), float(CAL.s_at(0.1)), 80))
    est = LocalizationEstimator(
        calibration=CAL,
        model="distributed",
        xi_grid_um=np.geomspace(3.0, 30.0, 16),
        mu_l_grid=np.linspace(math.log(200.0), math.log(1200.0), 14),
        s_l_grid=np.geomspace(0.1, 1.2, 10),
    )
    est.fit(_dataset(compose_q(q0, q_l_draw)))
    assert est.mean_loss_um_ == mean_loss_length(est.mu_l_, est.s_l_)
    assert est.posterior_.variant == "distributed"


def test_estimator_get_params_round_trip():
    est = LocalizationEstimator(calibration=CAL, model="distributed")
    params = est.get_params()
    assert params["model"] == "distributed"
    clone = LocalizationEstimator(**params)
    assert clone.get_params()["calibration"] is CAL
    est.set_params(model="single")
    assert est.model == "single"
