"""Tests for emitter intensity, LDOS, and fluctuation statistics."""

import math

import numpy as np
import pytest

from xiloss.errors import ParameterDomainError
from xiloss.intensity import (
    FluctuationHistogram,
    _pooled_normalized,
    fluctuation_histogram,
    intensity_at,
    ldos_at,
)
from xiloss.stack import EnsembleSpec, StackSpec, ensemble_stack

FREE = StackSpec(mean_index=1.0, delta_n=0.0, sample_length_um=20.0)
STRONG = StackSpec(mean_index=3.44, delta_n=0.8, sample_length_um=30.0)
WEAK = StackSpec(mean_index=3.44, delta_n=0.1, sample_length_um=30.0)


def _stack(spec, master_seed=0, index=0):
    return ensemble_stack(EnsembleSpec(spec, max(index + 1, 1), master_seed), index)


# ---------------------------------------------------------------------------
# point observables


def test_free_space_intensity_and_ldos():
    # n = 1 and matched surround: G(z, z) = i/(2k) everywhere
    st = _stack(FREE)
    k = 2.0 * math.pi  # lambda = 1 um
    assert math.isclose(
        intensity_at(st, 10.0, 1000.0), 1.0 / (4.0 * k * k), rel_tol=1e-12
    )
    assert math.isclose(
        ldos_at(st, 10.0, 1000.0), 1.0 / (2.0 * k), rel_tol=1e-12
    )
    assert math.isclose(ldos_at(st, 10.0, 1000.0), 0.07958, rel_tol=1e-4)


def test_homogeneous_intensity_is_translation_invariant():
    st = _stack(FREE)
    a = intensity_at(st, 5.0, 1000.0)
    b = intensity_at(st, 13.7, 1000.0)
    assert math.isclose(a, b, rel_tol=1e-12)


def test_speckle_contrast_is_large_when_localized():
    # xi ~ 3 um << L = 30 um: intensity varies by orders of magnitude
    st = _stack(STRONG, master_seed=3)
    vals = [intensity_at(st, z, 950.0) for z in np.arange(2.0, 29.0, 1.5)]
    assert max(vals) / min(vals) > 10.0


def test_ldos_is_positive_across_random_stacks():
    ens = EnsembleSpec(
        StackSpec(mean_index=3.44, delta_n=0.5, sample_length_um=20.0), 300, 7
    )
    for r in range(ens.realization_count):
        assert ldos_at(ensemble_stack(ens, r), 10.0, 950.0) > 0.0


def test_ldos_is_continuous_in_the_lossless_limit():
    lossless = _stack(StackSpec(delta_n=0.5, sample_length_um=20.0), 1)
    lossy = _stack(
        StackSpec(delta_n=0.5, sample_length_um=20.0, loss_length_um=1e4), 1
    )
    a = ldos_at(lossless, 10.0, 950.0)
    b = ldos_at(lossy, 10.0, 950.0)
    assert abs(b - a) / a < 0.01


# ---------------------------------------------------------------------------
# fluctuation histograms


def test_constant_field_collapses_to_unity():
    # index-matched homogeneous medium over a hairline window: the
    # normalized signal is 1 everywhere, so only the bins touching 1
    # can carry mass (the value may sit exactly on a bin edge)
    h = fluctuation_histogram(
        EnsembleSpec(FREE, 2, 0), (949.9, 950.1), kind="intensity",
        wavelength_points=16,
    )
    nonzero = np.nonzero(h.probability_density)[0]
    assert 1 <= nonzero.size <= 2
    for j in nonzero:
        assert h.bin_edges[j] < 1.001 and h.bin_edges[j + 1] > 0.999


def test_localized_tail_is_heavier_than_rayleigh():
    h = fluctuation_histogram(
        EnsembleSpec(STRONG, 8, 5), (940.0, 960.0), wavelength_points=48
    )
    assert h.survival(10.0) > math.exp(-10.0)


def test_tail_grows_with_disorder_strength():
    kw = dict(kind="intensity", wavelength_points=48)
    strong = fluctuation_histogram(EnsembleSpec(STRONG, 8, 5), (940.0, 960.0), **kw)
    weak = fluctuation_histogram(EnsembleSpec(WEAK, 8, 5), (940.0, 960.0), **kw)
    assert weak.survival(10.0) < strong.survival(10.0)


def test_both_kinds_share_the_sample_count():
    ens = EnsembleSpec(STRONG, 3, 9)
    hi = fluctuation_histogram(ens, (945.0, 955.0), wavelength_points=16)
    hl = fluctuation_histogram(ens, (945.0, 955.0), kind="ldos", wavelength_points=16)
    assert hi.sample_count == hl.sample_count
    assert hi.kind == "intensity" and hl.kind == "ldos"


def test_histogram_mass_and_positivity():
    h = fluctuation_histogram(
        EnsembleSpec(STRONG, 4, 2), (945.0, 955.0), wavelength_points=16
    )
    mass = float(np.sum(h.probability_density * np.diff(h.bin_edges)))
    assert abs(mass - 1.0) < 1e-6
    assert np.all(h.probability_density >= 0.0)
    assert h.sample_count == 4 * 16 * 99


def test_per_position_normalization_is_exact():
    wavelengths = np.linspace(945.0, 955.0, 16)
    z = np.arange(0.5, 29.5, 0.5)
    pooled = _pooled_normalized(EnsembleSpec(STRONG, 3, 4), wavelengths, z, "intensity")
    # mean over wavelengths is 1 per (realization, position) by construction
    assert float(np.abs(pooled.mean(axis=1) - 1.0).max()) < 1e-12


def test_histogram_validates_its_inputs():
    ens = EnsembleSpec(STRONG, 1, 0)
    with pytest.raises(ParameterDomainError):
        fluctuation_histogram(ens, (940.0, 960.0), kind="power")
    with pytest.raises(ParameterDomainError):
        fluctuation_histogram(ens, (960.0, 940.0))
    with pytest.raises(ParameterDomainError):
        fluctuation_histogram(ens, (940.0, 960.0), z_positions_um=[5.0, 35.0])
    with pytest.raises(ParameterDomainError):
        fluctuation_histogram(ens, (940.0, 960.0), wavelength_points=4)
    with pytest.raises(ParameterDomainError):
        fluctuation_histogram(ens, (940.0, 960.0), bins=2)
    short = EnsembleSpec(StackSpec(sample_length_um=0.2), 1, 0)
    with pytest.raises(ParameterDomainError):
        fluctuation_histogram(short, (940.0, 960.0))  # no default positions fit


# ---------------------------------------------------------------------------
# histogram container


def _toy_histogram():
    return FluctuationHistogram(
        bin_edges=np.array([1.0, 2.0, 4.0]),
        probability_density=np.array([0.5, 0.25]),
        sample_count=10,
        kind="intensity",
    )


def test_survival_integrates_the_bins():
    h = _toy_histogram()
    assert h.survival(0.5) == 1.0
    assert h.survival(4.0) == 0.0
    assert math.isclose(h.survival(2.0), 0.5, rel_tol=1e-15)
    assert math.isclose(h.survival(1.5), 0.75, rel_tol=1e-15)
    assert math.isclose(h.survival(3.0), 0.25, rel_tol=1e-15)
    assert h.tail_summary() == {3.0: h.survival(3.0), 10.0: 0.0, 30.0: 0.0}


def test_histogram_container_validation():
    with pytest.raises(ParameterDomainError):
        FluctuationHistogram(
            np.array([1.0, 2.0]), np.array([0.5, 0.5]), 10, "intensity"
        )
    with pytest.raises(ParameterDomainError):
        FluctuationHistogram(
            np.array([1.0, 2.0, 4.0]), np.array([0.5, -0.1]), 10, "intensity"
        )
    with pytest.raises(ParameterDomainError):
        FluctuationHistogram(
            np.array([1.0, 2.0, 4.0]), np.array([0.5, 0.5]), 10, "intensity"
        )  # mass 1.5
    with pytest.raises(ParameterDomainError):
        FluctuationHistogram(
            np.array([1.0, 2.0, 4.0]), np.array([0.5, 0.25]), 10, "other"
        )
    with pytest.raises(ParameterDomainError):
        FluctuationHistogram(
            np.array([1.0, 2.0, 4.0]), np.array([0.5, 0.25]), 0, "ldos"
        )
