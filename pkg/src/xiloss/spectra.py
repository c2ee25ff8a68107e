"""Spectra to Q datasets: synthesis, peak fitting, deconvolution, grouping.

The measurement model is a Lorentzian resonance observed through a
Gaussian instrument response of known FWHM.  Fits therefore adjust the
underlying Lorentzian width while the reported ``Resonance.fwhm`` is the
apparent width of the convolved line, computed with the Olivero and
Longbothum approximation

    f_V = 0.5346 f_L + sqrt(0.2166 f_L^2 + f_G^2)

(accurate to a few 1e-4 relative).  ``deconvolve_irf`` inverts the same
relation, so a resonance's Q is corrected for the instrument without ever
dividing spectra.  With a zero IRF the model degenerates to a plain
Lorentzian fit and both steps are exact identities.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.optimize import curve_fit
from scipy.signal import find_peaks, peak_widths
from scipy.special import voigt_profile
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_count, check_nonnegative, check_positive
from .errors import (
    DataError,
    ParameterDomainError,
    ResolutionLimitedError,
    UnderResolvedError,
)
from .solver import SpectrumScan

__all__ = [
    "SyntheticMode",
    "PositionedSpectrum",
    "Resonance",
    "ModeRecord",
    "QDataset",
    "lorentzian",
    "voigt_fwhm",
    "lorentz_fwhm_from_apparent",
    "synth_spectrum",
    "find_resonances",
    "deconvolve_irf",
    "group_modes",
    "build_qdataset",
    "ResonanceExtractor",
]

log = logging.getLogger(__name__)

DEFAULT_IRF_FWHM_NM = 0.05
SIGMA_Q_FLOOR_FRACTION = 0.05


def lorentzian(x, amplitude, center, fwhm):
    """Peak-normalized Lorentzian, value `amplitude` at `center`."""
    u = 2.0 * (np.asarray(x) - center) / fwhm
    return amplitude / (1.0 + u * u)


def voigt_fwhm(lorentz_fwhm: float, gauss_fwhm: float) -> float:
    """Apparent FWHM of a Lorentzian seen through a Gaussian kernel."""
    if gauss_fwhm == 0.0:
        return lorentz_fwhm
    return 0.5346 * lorentz_fwhm + math.sqrt(
        0.2166 * lorentz_fwhm**2 + gauss_fwhm**2
    )


def _dvoigt_dlorentz(lorentz_fwhm: float, gauss_fwhm: float) -> float:
    root = math.sqrt(0.2166 * lorentz_fwhm**2 + gauss_fwhm**2)
    return 0.5346 + 0.2166 * lorentz_fwhm / root


def lorentz_fwhm_from_apparent(apparent_fwhm: float, gauss_fwhm: float) -> float:
    """Invert :func:`voigt_fwhm`; may return <= 0 when the apparent width
    does not exceed the Gaussian's (callers must treat that as unresolved)."""
    if gauss_fwhm == 0.0:
        return apparent_fwhm
    a = 0.5346**2 - 0.2166  # exact inverse of the width combination above
    b = 2.0 * 0.5346 * apparent_fwhm
    c = apparent_fwhm**2 - gauss_fwhm**2
    disc = b * b - 4.0 * a * c
    # smaller root of a*f^2 - b*f + c, written to avoid cancellation near f=0
    return 2.0 * c / (b + math.sqrt(disc))


def _observed_line(x, amplitude, center, lorentz_fwhm, sigma_g):
    """Lorentzian of peak height `amplitude` convolved with the Gaussian IRF."""
    gamma = 0.5 * lorentz_fwhm
    # convolution preserves area; the clean Lorentzian has area A*pi*gamma
    return amplitude * math.pi * gamma * voigt_profile(
        np.asarray(x) - center, sigma_g, gamma
    )


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticMode:
    """Ground-truth mode for scan synthesis.

    The spatial intensity profile is exponential around ``z_um`` with
    decay ``extent_um``, so a scan taken away from the mode sees a
    weaker copy of the same line.
    """

    center_nm: float
    fwhm_nm: float
    amplitude: float
    z_um: float
    extent_um: float

    def weight_at(self, position_um: float) -> float:
        return math.exp(-abs(position_um - self.z_um) / self.extent_um)


@dataclass(frozen=True)
class PositionedSpectrum:
    position_um: float
    scan: SpectrumScan
    irf_fwhm_nm: float = DEFAULT_IRF_FWHM_NM

    def __post_init__(self) -> None:
        check_nonnegative(self.position_um, "position_um")
        check_nonnegative(self.irf_fwhm_nm, "irf_fwhm_nm")


@dataclass(frozen=True)
class Resonance:
    center_nm: float
    fwhm_nm: float
    amplitude: float
    q: float
    q_err: float
    position_um: float
    center_err_nm: float = math.nan
    fwhm_err_nm: float = math.nan
    irf_correction_nm: float = 0.0

    def __post_init__(self) -> None:
        check_positive(self.fwhm_nm, "fwhm_nm")
        if not math.isclose(self.q, self.center_nm / self.fwhm_nm, rel_tol=1e-9):
            raise ParameterDomainError(
                f"q must equal center/fwhm, got {self.q!r} vs "
                f"{self.center_nm / self.fwhm_nm!r}"
            )


@dataclass(frozen=True)
class ModeRecord:
    """Resonances attributed to one localized mode across scan positions."""

    members: tuple[Resonance, ...]
    center_nm: float
    q_best: float
    z_m_um: float


@dataclass(frozen=True)
class QDataset:
    """Measured Q factors with uncertainties plus acquisition metadata."""

    q_values: tuple[tuple[float, float], ...]
    delta_label: float = math.nan
    lambda_range_nm: tuple[float, float] = (math.nan, math.nan)
    sample_length_um: float = math.nan

    def __post_init__(self) -> None:
        for q, sq in self.q_values:
            if q <= 0:
                raise ParameterDomainError(f"all Q must be > 0, got {q!r}")
            check_positive(sq, "sigma_q")

    def __len__(self) -> int:
        return len(self.q_values)

    @property
    def q(self) -> np.ndarray:
        return np.array([q for q, _ in self.q_values])

    @property
    def sigma_q(self) -> np.ndarray:
        return np.array([s for _, s in self.q_values])


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def synth_spectrum(
    modes: Sequence[SyntheticMode],
    position_um: float,
    noise_rms: float,
    irf_fwhm_nm: float,
    grid_nm: np.ndarray,
    seed: int,
) -> PositionedSpectrum:
    """Scan of Lorentzian modes at one position, IRF-convolved, plus noise.

    ``noise_rms`` is the Gaussian noise standard deviation as a fraction
    of the clean signal maximum; an SNR-20 scan uses 0.05.  Deterministic
    under (inputs, seed).
    """
    check_nonnegative(noise_rms, "noise_rms")
    check_nonnegative(irf_fwhm_nm, "irf_fwhm_nm")
    grid = np.ascontiguousarray(grid_nm, dtype=np.float64)
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ParameterDomainError("grid_nm must be strictly increasing, size >= 2")
    if not modes:
        raise ParameterDomainError("modes must be non-empty")
    narrowest = min(m.fwhm_nm for m in modes)
    if narrowest <= 0:
        raise ParameterDomainError("every mode fwhm must be > 0")
    step = np.max(np.diff(grid))
    if step > narrowest / 4.0:
        raise UnderResolvedError(
            f"grid step {step:.4g} nm cannot resolve fwhm {narrowest:.4g} nm "
            "with >= 5 points; refine the grid"
        )
    sigma_g = irf_fwhm_nm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    clean = np.zeros_like(grid)
    for m in modes:
        w = m.weight_at(position_um)
        if w == 0.0:
            continue
        if sigma_g == 0.0:
            clean += lorentzian(grid, m.amplitude * w, m.center_nm, m.fwhm_nm)
        else:
            clean += _observed_line(grid, m.amplitude * w, m.center_nm, m.fwhm_nm, sigma_g)
    values = clean
    if noise_rms > 0.0:
        rng = np.random.default_rng(seed)
        values = clean + rng.normal(0.0, noise_rms * clean.max(), grid.size)
    return PositionedSpectrum(
        position_um=position_um,
        scan=SpectrumScan(wavelengths_nm=grid, values=values, kind="intensity"),
        irf_fwhm_nm=irf_fwhm_nm,
    )


def _fit_group(x, y, peaks_idx, apparent0, sigma_g, scan_step):
    """Jointly fit a sum of observed lines to one window. Returns per-peak
    (amplitude, center, lorentz_fwhm, errs) or None on non-convergence."""
    n = len(peaks_idx)

    def model(xx, *p):
        out = np.zeros_like(xx)
        for i in range(n):
            a, c, fl = p[3 * i], p[3 * i + 1], p[3 * i + 2]
            if sigma_g == 0.0:
                out = out + lorentzian(xx, a, c, fl)
            else:
                out = out + _observed_line(xx, a, c, fl, sigma_g)
        return out

    p0, lo, hi = [], [], []
    span = x[-1] - x[0]
    for i, idx in enumerate(peaks_idx):
        fl0 = lorentz_fwhm_from_apparent(apparent0[i], 2.355 * sigma_g)
        fl0 = max(fl0, scan_step / 4.0)
        p0 += [max(y[idx], 1e-30), x[idx], fl0]
        lo += [0.0, x[0], scan_step / 100.0]
        hi += [np.inf, x[-1], 4.0 * span]
    try:
        popt, pcov = curve_fit(
            model, x, y, p0=p0, bounds=(lo, hi), maxfev=4000
        )
    except (RuntimeError, ValueError) as exc:
        log.info("resonance fit dropped (non-convergence): %s", exc)
        return None
    perr = np.sqrt(np.diag(pcov))
    return [
        (popt[3 * i], popt[3 * i + 1], popt[3 * i + 2],
         perr[3 * i], perr[3 * i + 1], perr[3 * i + 2])
        for i in range(n)
    ]


def find_resonances(
    spectrum: PositionedSpectrum,
    prominence: float = 0.05,
    max_peaks: int | None = None,
) -> list[Resonance]:
    """Locate and fit resonance lines in one positioned scan.

    Local maxima above ``prominence`` (a fraction of the scan maximum) are
    fitted over windows of +-3 apparent FWHM; windows overlapping by more
    than a quarter are fitted jointly as a sum of lines.  Non-convergent
    fits are dropped with a logged diagnostic, never invented.
    """
    scan = spectrum.scan
    x, y = scan.wavelengths_nm, scan.values
    if x.size < 16:
        raise ParameterDomainError("scan must have at least 16 points")
    check_nonnegative(prominence, "prominence")
    if max_peaks is not None:
        check_count(max_peaks, "max_peaks", minimum=1)
    top = float(y.max())
    if top <= 0.0:
        return []
    # resolved lines span >= 4 samples at half height; single-sample noise
    # spikes do not, so a 2.5-sample width floor rejects them cheaply
    idx, props = find_peaks(y, prominence=prominence * top, width=2.5)
    if idx.size == 0:
        return []
    if max_peaks is not None and idx.size > max_peaks:
        order = np.argsort(props["prominences"])[::-1][:max_peaks]
        idx = np.sort(idx[order])
    step = scan.step_nm
    widths_pts = peak_widths(y, idx, rel_height=0.5)[0]
    apparent0 = np.maximum(widths_pts * step, step)
    sigma_g = spectrum.irf_fwhm_nm / (2.0 * math.sqrt(2.0 * math.log(2.0)))

    # windows of +-3 apparent widths, merged transitively when the overlap
    # exceeds a quarter of the smaller window
    lo_w = x[idx] - 3.0 * apparent0
    hi_w = x[idx] + 3.0 * apparent0
    groups: list[list[int]] = [[0]]
    for i in range(1, idx.size):
        prev = groups[-1][-1]
        overlap = hi_w[prev] - lo_w[i]
        smaller = min(hi_w[prev] - lo_w[prev], hi_w[i] - lo_w[i])
        if overlap > 0.25 * smaller:
            groups[-1].append(i)
        else:
            groups.append([i])

    out: list[Resonance] = []
    for group in groups:
        a = max(lo_w[group[0]], x[0])
        b = min(hi_w[group[-1]], x[-1])
        m = (x >= a) & (x <= b)
        if m.sum() < 5 + 3 * len(group):
            log.info("resonance window too small to fit near %.4f nm", x[idx[group[0]]])
            continue
        fitted = _fit_group(
            x[m], y[m], [int(np.searchsorted(x[m], x[idx[g]])) for g in group],
            [apparent0[g] for g in group], sigma_g, step,
        )
        if fitted is None:
            continue
        for amp, cen, fl, amp_e, cen_e, fl_e in fitted:
            apparent = voigt_fwhm(fl, spectrum.irf_fwhm_nm)
            apparent_err = _dvoigt_dlorentz(fl, spectrum.irf_fwhm_nm) * fl_e
            q = cen / apparent
            q_err = q * math.sqrt(
                (cen_e / cen) ** 2 + (apparent_err / apparent) ** 2
            )
            peak_height = amp if sigma_g == 0.0 else float(
                _observed_line(np.array([cen]), amp, cen, fl, sigma_g)[0]
            )
            out.append(
                Resonance(
                    center_nm=float(cen),
                    fwhm_nm=float(apparent),
                    amplitude=float(peak_height),
                    q=float(q),
                    q_err=float(q_err) if math.isfinite(q_err) and q_err > 0 else math.nan,
                    position_um=spectrum.position_um,
                    center_err_nm=float(cen_e),
                    fwhm_err_nm=float(apparent_err),
                )
            )
    out.sort(key=lambda r: r.center_nm)
    return out


def deconvolve_irf(res: Resonance, irf_fwhm_nm: float) -> Resonance:
    """Correct a resonance's width for the Gaussian instrument response.

    Raises :class:`ResolutionLimitedError` when the apparent width sits at
    or below the instrument floor (apparent <= 0.9 IRF, or a corrected
    width below half the IRF), in which case the entry must be flagged and
    excluded rather than trusted.
    """
    check_nonnegative(irf_fwhm_nm, "irf_fwhm_nm")
    if irf_fwhm_nm == 0.0:
        return res
    if res.fwhm_nm <= 0.9 * irf_fwhm_nm:
        raise ResolutionLimitedError(
            f"apparent width {res.fwhm_nm:.4g} nm at or below the "
            f"{irf_fwhm_nm:.4g} nm instrument response"
        )
    corrected = lorentz_fwhm_from_apparent(res.fwhm_nm, irf_fwhm_nm)
    if corrected < 0.5 * irf_fwhm_nm:
        raise ResolutionLimitedError(
            f"corrected width {corrected:.4g} nm below half the "
            f"{irf_fwhm_nm:.4g} nm instrument response; Q unresolvable"
        )
    slope = _dvoigt_dlorentz(corrected, irf_fwhm_nm)
    fwhm_err = res.fwhm_err_nm / slope if math.isfinite(res.fwhm_err_nm) else math.nan
    q = res.center_nm / corrected
    if math.isfinite(res.center_err_nm) and math.isfinite(fwhm_err):
        q_err = q * math.sqrt(
            (res.center_err_nm / res.center_nm) ** 2 + (fwhm_err / corrected) ** 2
        )
    else:
        q_err = math.nan
    return replace(
        res,
        fwhm_nm=float(corrected),
        q=float(q),
        q_err=float(q_err),
        fwhm_err_nm=float(fwhm_err),
        irf_correction_nm=float(res.fwhm_nm - corrected),
    )


def group_modes(
    resonances: Sequence[Resonance],
    lambda_tol: float = 0.5,
    z_link_um: float = 1.0,
) -> list[ModeRecord]:
    """Cluster resonances into modes by spectral and spatial proximity.

    Single linkage: two resonances may join when their centers differ by
    at most ``lambda_tol`` times the smaller width and their positions by
    at most ``z_link_um``.  Links are applied in order of increasing
    spectral distance, and a link is refused when it would stretch a
    cluster's spectral span beyond 3 * lambda_tol * median(fwhm); the
    result is therefore independent of input order.
    """
    check_nonnegative(lambda_tol, "lambda_tol")
    check_nonnegative(z_link_um, "z_link_um")
    res = sorted(resonances, key=lambda r: (r.center_nm, r.position_um, r.fwhm_nm))
    n = len(res)
    if n == 0:
        return []
    span_cap = 3.0 * lambda_tol * float(np.median([r.fwhm_nm for r in res]))

    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    # candidate links, nearest pairs first; refusal of a long link cannot
    # disable a shorter one, so ordering by distance fixes the outcome
    links = []
    widest = max(r.fwhm_nm for r in res)
    for i in range(n):
        for j in range(i + 1, n):
            d = res[j].center_nm - res[i].center_nm
            if d > lambda_tol * widest:
                break
            if d <= lambda_tol * min(res[i].fwhm_nm, res[j].fwhm_nm) and abs(
                res[i].position_um - res[j].position_um
            ) <= z_link_um:
                links.append((d, i, j))
    links.sort()

    lo = [r.center_nm for r in res]
    hi = [r.center_nm for r in res]
    for _, i, j in links:
        ri, rj = find(i), find(j)
        if ri == rj:
            continue
        if max(hi[ri], hi[rj]) - min(lo[ri], lo[rj]) > span_cap:
            continue
        parent[rj] = ri
        lo[ri] = min(lo[ri], lo[rj])
        hi[ri] = max(hi[ri], hi[rj])

    clusters: dict[int, list[Resonance]] = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(res[i])

    records = []
    for members in clusters.values():
        members = tuple(sorted(members, key=lambda r: (r.position_um, r.center_nm)))
        amps = np.array([m.amplitude for m in members])
        centers = np.array([m.center_nm for m in members])
        weights = amps if amps.sum() > 0 else np.ones_like(amps)
        zs = [m.position_um for m in members]
        z_m = max(abs(a - b) for a in zs for b in zs) if len(zs) > 1 else 0.0
        records.append(
            ModeRecord(
                members=members,
                center_nm=float(np.average(centers, weights=weights)),
                q_best=float(members[int(np.argmax(amps))].q),
                z_m_um=float(z_m),
            )
        )
    records.sort(key=lambda m: m.center_nm)
    return records


def build_qdataset(
    modes: Sequence[ModeRecord],
    delta_label: float = math.nan,
    lambda_range_nm: tuple[float, float] = (math.nan, math.nan),
    sample_length_um: float = math.nan,
) -> QDataset:
    """One (Q, sigma_Q) per mode, taken from its best-resolved member.

    Best-resolved means smallest relative Q uncertainty; members without a
    usable fit covariance fall back to max(fit error, 5 percent of Q).
    """
    if not modes:
        raise DataError("cannot build a Q dataset from zero modes")
    entries = []
    for mode in modes:
        def rel_err(r: Resonance) -> float:
            return (r.q_err / r.q) if (math.isfinite(r.q_err) and r.q_err > 0) else math.inf

        best = min(mode.members, key=lambda r: (rel_err(r), -r.amplitude))
        sigma = best.q_err
        if not (math.isfinite(sigma) and sigma > 0):
            sigma = SIGMA_Q_FLOOR_FRACTION * best.q
        else:
            sigma = max(sigma, 0.0)
        entries.append((best.q, sigma))
    return QDataset(
        q_values=tuple(entries),
        delta_label=delta_label,
        lambda_range_nm=lambda_range_nm,
        sample_length_um=sample_length_um,
    )


class ResonanceExtractor(BaseEstimator, TransformerMixin):
    """Positioned spectra in, deduplicated Q dataset out.

    Runs find -> deconvolve -> group -> build over a collection of scans,
    with the grouping and exclusion bookkeeping exposed as fitted
    attributes (`modes_`, `resonances_`, `excluded_count_`).
    """

    def __init__(
        self,
        prominence: float = 0.05,
        max_peaks: int | None = None,
        lambda_tol: float = 0.5,
        z_link_um: float = 1.0,
        irf_fwhm_nm: float | None = None,
        delta_label: float = math.nan,
        sample_length_um: float = math.nan,
    ):
        self.prominence = prominence
        self.max_peaks = max_peaks
        self.lambda_tol = lambda_tol
        self.z_link_um = z_link_um
        self.irf_fwhm_nm = irf_fwhm_nm
        self.delta_label = delta_label
        self.sample_length_um = sample_length_um

    def fit(self, X: Sequence[PositionedSpectrum], y=None) -> "ResonanceExtractor":
        if not X:
            raise DataError("no spectra supplied")
        resonances: list[Resonance] = []
        excluded = 0
        lam_lo, lam_hi = math.inf, -math.inf
        for spec in X:
            irf = self.irf_fwhm_nm if self.irf_fwhm_nm is not None else spec.irf_fwhm_nm
            lam_lo = min(lam_lo, float(spec.scan.wavelengths_nm[0]))
            lam_hi = max(lam_hi, float(spec.scan.wavelengths_nm[-1]))
            for res in find_resonances(spec, self.prominence, self.max_peaks):
                try:
                    resonances.append(deconvolve_irf(res, irf))
                except ResolutionLimitedError:
                    excluded += 1
        self.resonances_ = resonances
        self.excluded_count_ = excluded
        self.modes_ = group_modes(resonances, self.lambda_tol, self.z_link_um)
        self.lambda_range_nm_ = (lam_lo, lam_hi)
        return self

    def transform(self, X: Sequence[PositionedSpectrum]) -> QDataset:
        if not hasattr(self, "modes_"):
            self.fit(X)
        return build_qdataset(
            self.modes_,
            delta_label=self.delta_label,
            lambda_range_nm=self.lambda_range_nm_,
            sample_length_um=self.sample_length_um,
        )
