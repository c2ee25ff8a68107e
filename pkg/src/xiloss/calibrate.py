"""Monte Carlo calibration of the disorder <-> localization-length map.

Three empirical power laws tie everything together: the disorder
half-width needed for a target localization length, and the log-normal
parameters (mu, s) of the in-plane quality-factor distribution, all as
functions of xi/L.  The localization length itself is always measured
the same way, from the ensemble decay of the log-transmission.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from ._validation import check_count, check_interval, check_positive
from .errors import (
    CalibrationRangeError,
    NumericalError,
    ParameterDomainError,
    UnderResolvedError,
)
from .solver import (
    SpectrumScan,
    ensemble_ln_transmission,
    ln_transmission_scan,
    transmission_pole,
)
from .spectra import PositionedSpectrum, find_resonances
from .stack import EnsembleSpec, StackSpec, ensemble_stack

log = logging.getLogger(__name__)

XI_OVER_L_GRID = (0.03, 0.06, 0.12, 0.24)
DN_BRACKET = (0.02, 2.5)

# reference coefficients for the expected Q dynamic range at a given xi/L;
# the scan resolution is chosen to cover exp(mu + 3s) and no further, so
# narrower lines are declared out of range rather than half-measured
REFERENCE_MU = (5.9, -0.22)
REFERENCE_S = (0.4, -0.59)
REFERENCE_DN = (0.22, -0.55)


def expected_q_ceiling(xi_over_l: float) -> float:
    check_positive(xi_over_l, "xi_over_l")
    mu = REFERENCE_MU[0] * xi_over_l ** REFERENCE_MU[1]
    s = REFERENCE_S[0] * xi_over_l ** REFERENCE_S[1]
    return math.exp(mu + 3.0 * s)

CALIBRATION_FORMAT = "xiloss-calibration/1"

# zoom scanning: 33-point windows, 4x magnification per level, a candidate
# counts as resolved once its half-maximum width spans >= 4 grid steps
_ZOOM_POINTS = 33
_ZOOM_FACTOR = 4.0
_RESOLVED_STEPS = 4.0
_LN_HALF = math.log(2.0)
# refined poles closer than this (relative, complex distance) are one mode
_POLE_MATCH_REL = 1e-6


# ---------------------------------------------------------------------------
# power-law fitting


@dataclass(frozen=True)
class PowerLawFit:
    """Least-squares fit of y = amplitude * x**exponent on log-log axes."""

    amplitude: float
    exponent: float
    amplitude_err: float
    exponent_err: float
    r_squared: float
    sample_count: int

    def __post_init__(self) -> None:
        check_positive(self.amplitude, "amplitude")
        for name in ("exponent", "amplitude_err", "exponent_err"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ParameterDomainError(f"{name} must be finite, got {v!r}")

    def __call__(self, x):
        return self.amplitude * np.asarray(x, dtype=float) ** self.exponent

    def to_dict(self) -> dict:
        return {
            "amplitude": self.amplitude,
            "exponent": self.exponent,
            "amplitude_err": self.amplitude_err,
            "exponent_err": self.exponent_err,
            "r_squared": self.r_squared,
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PowerLawFit":
        return cls(
            amplitude=float(d["amplitude"]),
            exponent=float(d["exponent"]),
            amplitude_err=float(d["amplitude_err"]),
            exponent_err=float(d["exponent_err"]),
            r_squared=float(d["r_squared"]),
            sample_count=int(d["sample_count"]),
        )


def fit_power_law(x, y) -> PowerLawFit:
    """Fit y = A x^b by ordinary least squares in (ln x, ln y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ParameterDomainError("x and y must be 1d arrays of equal length")
    if x.size < 2:
        raise ParameterDomainError("need at least two points for a power law")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ParameterDomainError("power-law data must be strictly positive")
    lx, ly = np.log(x), np.log(y)
    design = np.column_stack([np.ones_like(lx), lx])
    coef, *_ = np.linalg.lstsq(design, ly, rcond=None)
    resid = ly - design @ coef
    ssr = float(resid @ resid)
    sst = float(np.sum((ly - ly.mean()) ** 2))
    n = x.size
    if n > 2:
        var = ssr / (n - 2)
        cov = var * np.linalg.inv(design.T @ design)
        a_err = math.sqrt(cov[0, 0]) * math.exp(coef[0])
        b_err = math.sqrt(cov[1, 1])
    else:
        a_err = b_err = 0.0
    r2 = 1.0 if sst == 0.0 and ssr <= 1e-28 else (1.0 - ssr / sst if sst > 0 else 0.0)
    return PowerLawFit(
        amplitude=math.exp(coef[0]),
        exponent=float(coef[1]),
        amplitude_err=a_err,
        exponent_err=b_err,
        r_squared=r2,
        sample_count=n,
    )


# ---------------------------------------------------------------------------
# localization length from ensemble transmission decay


@dataclass(frozen=True)
class XiEstimate:
    xi_um: float
    xi_err_um: float
    length_um: float
    wavelength_nm: float
    mean_ln_t: float
    stderr_ln_t: float
    realizations: int

    def __post_init__(self) -> None:
        check_positive(self.xi_um, "xi_um")

    @property
    def xi_over_l(self) -> float:
        return self.xi_um / self.length_um


def xi_from_dn(
    spec: StackSpec,
    delta_n: float,
    realizations: int = 1000,
    wavelength_nm: float = 950.0,
    master_seed: int = 0,
) -> XiEstimate:
    """Localization length for one disorder strength, xi = -L / <ln T>.

    The standard error comes from the realization-to-realization spread of
    ln T; a non-negative mean means no measurable decay.
    """
    check_positive(delta_n, "delta_n")
    check_count(realizations, "realizations", minimum=2)
    ens = EnsembleSpec(
        replace(spec, delta_n=delta_n), realizations, master_seed
    )
    ln_t = ensemble_ln_transmission(ens, wavelength_nm)
    mean = float(ln_t.mean())
    stderr = float(ln_t.std(ddof=1) / math.sqrt(realizations))
    if mean >= 0.0:
        raise CalibrationRangeError(
            f"<ln T> = {mean:.3g} >= 0 at delta_n = {delta_n:g}: "
            "no decay to measure"
        )
    length = spec.sample_length_um
    xi = -length / mean
    return XiEstimate(
        xi_um=xi,
        xi_err_um=length * stderr / mean**2,
        length_um=length,
        wavelength_nm=wavelength_nm,
        mean_ln_t=mean,
        stderr_ln_t=stderr,
        realizations=realizations,
    )


def dn_for_xi(
    spec: StackSpec,
    xi_target_um: float,
    realizations: int = 1000,
    wavelength_nm: float = 950.0,
    master_seed: int = 0,
    bracket: tuple[float, float] = DN_BRACKET,
    rel_tol: float = 5e-3,
) -> float:
    """Disorder half-width giving the target localization length.

    Bisection in ln(delta_n).  Every evaluation reuses the same realization
    seeds, so the objective is a deterministic, strictly decreasing function
    of delta_n and the iteration cannot be derailed by resampling noise.
    """
    check_positive(xi_target_um, "xi_target_um")
    lo, hi = bracket
    check_interval(lo, hi, "bracket")

    def measured(dn: float) -> float:
        return xi_from_dn(
            spec, dn, realizations, wavelength_nm, master_seed
        ).xi_um

    f_lo = measured(lo) - xi_target_um
    f_hi = measured(hi) - xi_target_um
    if f_lo < 0.0 or f_hi > 0.0:
        raise CalibrationRangeError(
            f"xi target {xi_target_um:g} um not bracketed by delta_n in "
            f"[{lo:g}, {hi:g}] (endpoint errors {f_lo:.3g}, {f_hi:.3g})"
        )
    a, b = math.log(lo), math.log(hi)
    while b - a > rel_tol:
        mid = 0.5 * (a + b)
        if measured(math.exp(mid)) - xi_target_um > 0.0:
            a = mid
        else:
            b = mid
    return math.exp(0.5 * (a + b))


def fit_dn_law(
    spec: StackSpec,
    xi_targets_um,
    realizations: int = 1000,
    wavelength_nm: float = 950.0,
    master_seed: int = 0,
) -> PowerLawFit:
    """Power law delta_n = A (xi/L)^b over a grid of target lengths."""
    targets = np.asarray(xi_targets_um, dtype=float)
    if targets.size < 4:
        raise ParameterDomainError("need at least 4 xi targets")
    if targets.max() / targets.min() < 4.0:
        raise ParameterDomainError("xi targets must span at least a factor 4")
    dns = [
        dn_for_xi(spec, t, realizations, wavelength_nm, master_seed)
        for t in targets
    ]
    return fit_power_law(targets / spec.sample_length_um, dns)


# ---------------------------------------------------------------------------
# in-plane quality factors


def _local_maxima(values: np.ndarray) -> np.ndarray:
    rising = values[1:-1] > values[:-2]
    falling = values[1:-1] >= values[2:]
    return np.nonzero(rising & falling)[0] + 1


def _half_crossings(grid: np.ndarray, ln_t: np.ndarray, j: int):
    """(width, sides): distance between the ln2-drop crossings around the
    maximum at j, with how many of the two crossings lie in the window."""
    target = ln_t[j] - _LN_HALF
    left = np.nonzero(ln_t[: j + 1] <= target)[0]
    right = np.nonzero(ln_t[j:] <= target)[0]
    sides = int(left.size > 0) + int(right.size > 0)
    if sides < 2:
        return math.nan, sides
    il = left[-1]
    ir = right[0] + j
    x_l = np.interp(target, [ln_t[il], ln_t[il + 1]], [grid[il], grid[il + 1]])
    x_r = np.interp(target, [ln_t[ir], ln_t[ir - 1]], [grid[ir], grid[ir - 1]])
    return x_r - x_l, 2


def _fit_tent(grid, ln_t):
    """One resolved zoom window -> [(center_nm, q), ...] seed candidates via
    the line fitter, on exp(ln T - apex) so deep tents never underflow.

    Every line fitted inside the window is returned, not just the tent the
    zoom was tracking: overlapping neighbours may have no coarse-grid
    maximum of their own, and this window's joint fit is their only census
    entry.  Lines too close to the window edge to be trusted are skipped.
    These are only seeds: each one is refined to the exact transmission
    pole afterwards, so fit-quality gating would just censor blends.
    """
    apex = ln_t.max()
    scan = SpectrumScan(grid, np.exp(ln_t - apex), kind="transmission")
    try:
        found = find_resonances(
            PositionedSpectrum(0.0, scan, irf_fwhm_nm=0.0), prominence=0.05
        )
    except ParameterDomainError:
        return []
    mid = grid[np.argmax(ln_t)]
    half = 0.5 * (grid[-1] - grid[0])
    step = grid[1] - grid[0]
    out = []
    tracked = min(found, key=lambda r: abs(r.center_nm - mid), default=None)
    for r in found:
        if r is tracked:
            if abs(r.center_nm - mid) > max(r.fwhm_nm, 4.0 * step):
                continue  # the fit wandered off the tent it was tracking
        else:
            # neighbours are only trusted well inside the window
            if abs(r.center_nm - (grid[0] + half)) > 0.7 * half:
                continue
            if r.fwhm_nm > half:
                continue
        out.append((r.center_nm, r.q))
    return out


def _scan_one_realization(
    stack,
    lam_lo: float,
    lam_hi: float,
    coarse_points: int,
    max_zoom: int,
    q_ceiling: float = math.inf,
):
    """All resolvable transmission resonances of one stack in [lam_lo, lam_hi].

    Works on ln T throughout: resonance "tents" have logarithmically decaying
    walls, so they remain visible on grids far coarser than their linewidth.
    Each coarse local maximum is zoomed until its half-maximum width spans
    the window; maxima whose apex stops climbing while unresolved are smooth
    background features, not resonances, and are dropped.  Zooming stops at
    the declared resolution lambda/(10 q_ceiling); lines still unresolved
    there are outside the advertised dynamic range and are excluded.

    Detected lines are seeds only; each is refined to the complex pole of
    the transmission amplitude, which defines Q without lineshape bias,
    and seeds that converge to the same pole collapse to one entry.
    """
    coarse = np.linspace(lam_lo, lam_hi, coarse_points)
    step0 = coarse[1] - coarse[0]
    step_floor = lam_lo / (10.0 * q_ceiling)
    ln_t = ln_transmission_scan(stack, coarse)
    hits = []
    for i in _local_maxima(ln_t):
        center = coarse[i]
        half = 4.0 * step0
        prev_apex = -math.inf
        stalls = 0
        for _ in range(max_zoom):
            if not lam_lo - 2 * step0 <= center <= lam_hi + 2 * step0:
                break
            if half > lam_hi - lam_lo:
                break  # wider than the whole scan: nothing here
            grid = np.linspace(center - half, center + half, _ZOOM_POINTS)
            v = ln_transmission_scan(stack, grid)
            j = int(np.argmax(v))
            if j in (0, _ZOOM_POINTS - 1):
                center = grid[j]  # apex outside window: recenter, same scale
                continue
            step = grid[1] - grid[0]
            width, sides = _half_crossings(grid, v, j)
            if sides == 2 and width >= _RESOLVED_STEPS * step:
                # final fit on a generous +-3 width window, the same margin
                # the line fitter itself uses, so overlapped wide tents are
                # not squeezed by a snug zoom window
                fat = np.linspace(grid[j] - 3 * width, grid[j] + 3 * width, 65)
                hits.extend(_fit_tent(fat, ln_transmission_scan(stack, fat)))
                break
            center = grid[j]
            if sides == 0:
                half *= _ZOOM_FACTOR  # window sits on a plateau: widen
                continue
            if sides == 1:
                stalls += 1  # tent half out of frame: recenter, same scale
                if stalls >= 4:
                    break
                continue
            # both crossings seen but only a few steps apart: sharpen
            if step / _ZOOM_FACTOR < step_floor:
                break  # would pass the declared resolution: out of range
            if v[j] < prev_apex + 0.5:
                stalls += 1
                if stalls >= 4:
                    break  # apex not climbing: background wiggle
            else:
                stalls = 0
            prev_apex = v[j]
            half /= _ZOOM_FACTOR
    poles: list[complex] = []
    kept = []
    for c, q_seed in hits:
        try:
            pole_nm, q = transmission_pole(stack, c, q_seed)
        except NumericalError:
            continue  # seed too poor to converge: stays censored
        if not lam_lo <= pole_nm.real <= lam_hi or q > q_ceiling:
            continue
        # two coarse maxima (or a window and its neighbour census) can
        # funnel into the same pole; complex distance separates real
        # overlapping modes from double finds
        if any(abs(pole_nm - p) < _POLE_MATCH_REL * pole_nm.real for p in poles):
            continue
        poles.append(pole_nm)
        kept.append((float(pole_nm.real), q))
    return kept


def inplane_q_samples(
    spec: StackSpec,
    delta_n: float,
    lambda_range_nm: tuple[float, float] = (940.0, 960.0),
    realizations: int = 100,
    master_seed: int = 0,
    coarse_points: int = 512,
    max_zoom: int = 24,
    q_ceiling: float = math.inf,
) -> np.ndarray:
    """Pooled Q = lambda/fwhm of every resolvable resonance in the ensemble.

    Lossless stacks only: with absorption the linewidths would mix escape
    and dissipation and the samples would no longer be intrinsic Q values.
    ``q_ceiling`` declares the dynamic range the scans are resolved for;
    lines narrower than that are excluded rather than poorly measured.
    """
    check_positive(delta_n, "delta_n")
    if not math.isinf(spec.loss_length_um):
        raise ParameterDomainError(
            "inplane_q_samples requires a lossless stack (loss_length_um=inf)"
        )
    lo, hi = lambda_range_nm
    check_interval(lo, hi, "lambda_range_nm")
    check_count(realizations, "realizations", minimum=100)
    check_count(coarse_points, "coarse_points", minimum=64)
    ens = EnsembleSpec(replace(spec, delta_n=delta_n), realizations, master_seed)
    pooled: list[float] = []
    yielded = 0
    check_positive(q_ceiling, "q_ceiling", allow_inf=True)
    for i in range(realizations):
        stack = ensemble_stack(ens, i)
        found = _scan_one_realization(
            stack, lo, hi, coarse_points, max_zoom, q_ceiling
        )
        if found:
            yielded += 1
            pooled.extend(q for _, q in found)
    if yielded < 0.5 * realizations:
        raise UnderResolvedError(
            f"resonances found in only {yielded}/{realizations} realizations; "
            "use a finer coarse grid or a wider wavelength range"
        )
    return np.asarray(pooled, dtype=float)


def fit_q0_laws(cal_points) -> tuple[PowerLawFit, PowerLawFit]:
    """Fit mu(xi/L) and s(xi/L) power laws from (xi/L, mu, s) triples."""
    pts = [(float(x), float(m), float(s)) for x, m, s in cal_points]
    if len(pts) < 4:
        raise ParameterDomainError("need at least 4 calibration points")
    for x, m, s in pts:
        check_positive(x, "xi_over_l")
        check_positive(m, "mu")
        check_positive(s, "s")
    xs = np.array([p[0] for p in pts])
    mus = np.array([p[1] for p in pts])
    ss = np.array([p[2] for p in pts])
    return fit_power_law(xs, mus), fit_power_law(xs, ss)


# ---------------------------------------------------------------------------
# the full calibration product


@dataclass(frozen=True)
class Calibration:
    """Fitted laws plus enough provenance to reproduce them."""

    mu_law: PowerLawFit
    s_law: PowerLawFit
    dn_law: PowerLawFit
    reference: StackSpec
    xi_over_l_grid: tuple[float, ...]
    realizations: int
    q_realizations: int
    master_seed: int
    wavelength_nm: float
    lambda_range_nm: tuple[float, float]
    q0_samples: dict[float, tuple[float, ...]] | None = None

    def __post_init__(self) -> None:
        if len(self.xi_over_l_grid) < 2:
            raise ParameterDomainError("calibration grid needs >= 2 points")

    @property
    def xi_over_l_range(self) -> tuple[float, float]:
        return (min(self.xi_over_l_grid), max(self.xi_over_l_grid))

    def mu_at(self, xi_over_l):
        return self.mu_law(xi_over_l)

    def s_at(self, xi_over_l):
        return self.s_law(xi_over_l)

    def dn_at(self, xi_over_l):
        return self.dn_law(xi_over_l)

    def to_dict(self) -> dict:
        d = {
            "format": CALIBRATION_FORMAT,
            "mu_law": self.mu_law.to_dict(),
            "s_law": self.s_law.to_dict(),
            "dn_law": self.dn_law.to_dict(),
            "reference": self.reference.to_config_dict(),
            "xi_over_l_grid": list(self.xi_over_l_grid),
            "realizations": self.realizations,
            "q_realizations": self.q_realizations,
            "master_seed": self.master_seed,
            "wavelength_nm": self.wavelength_nm,
            "lambda_range_nm": list(self.lambda_range_nm),
        }
        if self.q0_samples is not None:
            d["q0_samples"] = {
                repr(k): list(v) for k, v in self.q0_samples.items()
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Calibration":
        fmt = d.get("format")
        if fmt != CALIBRATION_FORMAT:
            raise ParameterDomainError(
                f"unsupported calibration format {fmt!r}"
            )
        samples = None
        if "q0_samples" in d:
            samples = {
                float(k): tuple(float(q) for q in v)
                for k, v in d["q0_samples"].items()
            }
        return cls(
            mu_law=PowerLawFit.from_dict(d["mu_law"]),
            s_law=PowerLawFit.from_dict(d["s_law"]),
            dn_law=PowerLawFit.from_dict(d["dn_law"]),
            reference=StackSpec.from_config_dict(d["reference"]),
            xi_over_l_grid=tuple(float(x) for x in d["xi_over_l_grid"]),
            realizations=int(d["realizations"]),
            q_realizations=int(d["q_realizations"]),
            master_seed=int(d["master_seed"]),
            wavelength_nm=float(d["wavelength_nm"]),
            lambda_range_nm=tuple(float(x) for x in d["lambda_range_nm"]),
            q0_samples=samples,
        )


def run_calibration(
    spec: StackSpec | None = None,
    xi_over_l_grid=XI_OVER_L_GRID,
    realizations: int = 1000,
    q_realizations: int = 120,
    master_seed: int = 0,
    wavelength_nm: float = 950.0,
    lambda_range_nm: tuple[float, float] = (940.0, 960.0),
    keep_samples: bool = False,
    coarse_points: int = 512,
) -> Calibration:
    """Run the whole calibration: per grid point, find the disorder giving
    that xi/L, pool in-plane Q samples from a lossless ensemble at the
    resolution expected for that xi/L, then fit the three power laws."""
    spec = StackSpec() if spec is None else spec
    grid = tuple(sorted(float(x) for x in xi_over_l_grid))
    if len(grid) < 4:
        raise ParameterDomainError("calibration grid needs >= 4 points")
    lossless = replace(spec, loss_length_um=math.inf)
    length = spec.sample_length_um
    dns: list[float] = []
    points: list[tuple[float, float, float]] = []
    samples: dict[float, tuple[float, ...]] = {}
    for x in grid:
        dn = dn_for_xi(
            lossless, x * length, realizations, wavelength_nm, master_seed
        )
        dns.append(dn)
        qs = inplane_q_samples(
            lossless, dn, lambda_range_nm, q_realizations, master_seed,
            coarse_points=coarse_points, q_ceiling=expected_q_ceiling(x),
        )
        ln_q = np.log(qs)
        points.append((x, float(ln_q.mean()), float(ln_q.std(ddof=1))))
        if keep_samples:
            samples[x] = tuple(qs)
        log.info(
            "calibration point xi/L=%.3g: dn=%.4g, %d Q samples, mu=%.3g s=%.3g",
            x, dn, qs.size, points[-1][1], points[-1][2],
        )
    mu_law, s_law = fit_q0_laws(points)
    dn_law = fit_power_law(np.asarray(grid), np.asarray(dns))
    return Calibration(
        mu_law=mu_law,
        s_law=s_law,
        dn_law=dn_law,
        reference=spec,
        xi_over_l_grid=grid,
        realizations=realizations,
        q_realizations=q_realizations,
        master_seed=master_seed,
        wavelength_nm=wavelength_nm,
        lambda_range_nm=tuple(lambda_range_nm),
        q0_samples=samples if keep_samples else None,
    )
