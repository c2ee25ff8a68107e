"""Ensemble intensity and local-DOS fluctuation statistics.

An emitter buried at depth z couples to the field through the diagonal
Green's function averaged over one wavelength around the source.  Its
squared magnitude is the observable intensity (arbitrary units); the
imaginary part is the local density of states.  Pooling the per-position
wavelength-normalized values over a disorder ensemble gives the
fluctuation distributions whose heavy tails distinguish localized from
diffusive light.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import (
    check_1d,
    check_count,
    check_in,
    check_interval,
    check_positive,
)
from .errors import NumericalError, ParameterDomainError
from .solver import averaged_green, green_window_means
from .stack import DisorderedStack, EnsembleSpec, ensemble_stack

__all__ = [
    "DEFAULT_POSITION_STEP_UM",
    "HISTOGRAM_SPAN",
    "TAIL_ABSCISSAS",
    "FluctuationHistogram",
    "fluctuation_histogram",
    "intensity_at",
    "ldos_at",
]

# scan resolution of the positioned measurements the statistics mimic
DEFAULT_POSITION_STEP_UM = 0.3

# normalized values are histogrammed on this fixed logarithmic span;
# anything beyond lands in the edge bins so the mass stays exactly 1
HISTOGRAM_SPAN = (1e-3, 1e3)

# fixed tail abscissas reported across runs, robust to binning choices
TAIL_ABSCISSAS = (3.0, 10.0, 30.0)


def intensity_at(
    stack: DisorderedStack, z_src_um: float, wavelength_nm: float
) -> float:
    """Emitted intensity (arbitrary units) for a source at ``z_src_um``.

    Squared magnitude of the wavelength-window average of G(z, z).
    """
    sample = averaged_green(stack, z_src_um, wavelength_nm)
    return float(abs(sample.averaged_value) ** 2)


def ldos_at(
    stack: DisorderedStack, z_src_um: float, wavelength_nm: float
) -> float:
    """Local density of states (arbitrary units) at the source position.

    Imaginary part of the window-averaged G(z, z); strictly positive for
    passive media under the sign convention of the solver.
    """
    sample = averaged_green(stack, z_src_um, wavelength_nm)
    return float(sample.averaged_value.imag)


@dataclass(frozen=True)
class FluctuationHistogram:
    """Normalized fluctuation distribution on fixed logarithmic bins."""

    bin_edges: np.ndarray
    probability_density: np.ndarray
    sample_count: int
    kind: str

    def __post_init__(self) -> None:
        check_in(self.kind, "kind", ("intensity", "ldos"))
        edges = np.asarray(self.bin_edges, dtype=float)
        dens = np.asarray(self.probability_density, dtype=float)
        if edges.ndim != 1 or dens.ndim != 1 or edges.size != dens.size + 1:
            raise ParameterDomainError(
                "bin_edges must be 1d with one more entry than the density"
            )
        if np.any(edges <= 0) or np.any(np.diff(edges) <= 0):
            raise ParameterDomainError("bin_edges must be positive, increasing")
        if np.any(dens < 0) or not np.all(np.isfinite(dens)):
            raise ParameterDomainError("density must be finite and >= 0")
        check_count(self.sample_count, "sample_count", minimum=1)
        total = float(np.sum(dens * np.diff(edges)))
        if abs(total - 1.0) > 1e-6:
            raise ParameterDomainError(
                f"density must integrate to 1 within 1e-6, got {total!r}"
            )
        edges.setflags(write=False)
        dens.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "probability_density", dens)

    def survival(self, threshold: float) -> float:
        """P(value > threshold), integrated from the binned density."""
        check_positive(threshold, "threshold")
        edges = self.bin_edges
        if threshold <= edges[0]:
            return 1.0
        if threshold >= edges[-1]:
            return 0.0
        j = int(np.searchsorted(edges, threshold, side="right") - 1)
        partial = float(self.probability_density[j] * (edges[j + 1] - threshold))
        rest = float(
            np.sum(self.probability_density[j + 1:] * np.diff(edges[j + 1:]))
        )
        return partial + rest

    def tail_summary(self) -> dict[float, float]:
        """Survival probabilities at the fixed reporting abscissas."""
        return {x: self.survival(x) for x in TAIL_ABSCISSAS}


def _default_positions(length_um: float) -> np.ndarray:
    return np.arange(DEFAULT_POSITION_STEP_UM, length_um, DEFAULT_POSITION_STEP_UM)


def _pooled_normalized(
    ens: EnsembleSpec, wavelengths: np.ndarray, z: np.ndarray, kind: str
) -> np.ndarray:
    """Signals normalized per (realization, position) by their own
    wavelength average; shape (realizations, wavelengths, positions)."""
    pooled = np.empty((ens.realization_count, wavelengths.size, z.size))
    for r in range(ens.realization_count):
        stack = ensemble_stack(ens, r)
        signal = np.empty((wavelengths.size, z.size))
        for i, lam in enumerate(wavelengths):
            g = green_window_means(stack, float(lam), z)
            signal[i] = np.abs(g) ** 2 if kind == "intensity" else g.imag
        norm = signal.mean(axis=0, keepdims=True)
        if not np.all(norm > 0.0):
            raise NumericalError(
                f"wavelength-averaged {kind} vanished at realization {r}; "
                "the signal underflowed or the medium is not passive"
            )
        pooled[r] = signal / norm
    return pooled


def fluctuation_histogram(
    ens: EnsembleSpec,
    lambda_range_nm: tuple[float, float],
    z_positions_um=None,
    kind: str = "intensity",
    wavelength_points: int = 64,
    bins: int = 60,
) -> FluctuationHistogram:
    """Pooled distribution of I/<I> (or LDOS/<LDOS>) over an ensemble.

    For every realization and every position the signal is normalized by
    its own wavelength average, so each (realization, position) cell has
    mean exactly 1 and the pooled statistics carry no free scale.
    """
    check_in(kind, "kind", ("intensity", "ldos"))
    lam_lo, lam_hi = check_interval(
        lambda_range_nm[0], lambda_range_nm[1], "lambda_range_nm"
    )
    check_count(wavelength_points, "wavelength_points", minimum=8)
    check_count(bins, "bins", minimum=4)
    length = ens.base.sample_length_um
    if z_positions_um is None:
        z = _default_positions(length)
    else:
        z = check_1d(z_positions_um, "z_positions_um")
    if z.size == 0:
        raise ParameterDomainError("no source positions to pool over")
    if z.min() <= 0.0 or z.max() >= length:
        raise ParameterDomainError(
            f"z_positions_um must lie strictly inside (0, {length})"
        )
    wavelengths = np.linspace(lam_lo, lam_hi, wavelength_points)

    pooled = _pooled_normalized(ens, wavelengths, z, kind)
    lo, hi = HISTOGRAM_SPAN
    values = np.clip(pooled.ravel(), lo, hi)
    edges = np.geomspace(lo, hi, bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    density = counts / (values.size * np.diff(edges))
    return FluctuationHistogram(
        bin_edges=edges,
        probability_density=density,
        sample_count=int(values.size),
        kind=kind,
    )
