"""Bayesian inversion of measured Q distributions.

An observed in-plane quality factor is the harmonic composition of an
intrinsic, escape-limited factor and a vertical-loss factor,
1/Q = 1/Q0 + 1/Q_l.  With ln Q0 normal at parameters given by the
calibration laws, the observed-Q density is an exactly normalized
truncated log-normal on (0, Q_l).  Posteriors are filled on logarithmic
grids under flat priors, accumulating entirely in log space.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr
from sklearn.base import BaseEstimator

from ._validation import (
    check_count,
    check_in,
    check_increasing,
    check_nonnegative,
    check_positive,
)
from .calibrate import Calibration
from .errors import (
    DataError,
    ModelMismatchError,
    ParameterDomainError,
    QuadratureError,
)
from .spectra import QDataset

_SQRT_2PI = math.sqrt(2.0 * math.pi)
# integration windows: measurement noise is integrated over +-10 sigma,
# the loss-length family over +-8 of its log scale
_NOISE_SPAN = 10.0
_LOSS_SPAN = 8.0
QUADRATURE_NODES = 128
POSTERIOR_FORMAT = "xiloss-posterior/1"


@functools.lru_cache(maxsize=8)
def _gauss_legendre(nodes: int):
    x, w = np.polynomial.legendre.leggauss(nodes)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _loss_averaged_like(q, mu, s, m_center, s_l, x, w):
    """Likelihoods averaged over the log-normal loss family.

    Gauss-Legendre in t = ln Q_l over the +-_LOSS_SPAN window, clipped per
    measurement at t = ln q: below it the truncated density is identically
    zero, and integrating across that edge would wreck the rule's
    convergence, while starting on it keeps the integrand smooth.
    ``mu``/``s`` may carry leading broadcast axes; the trailing axis is
    always the quadrature one and is summed away.
    """
    lo = np.maximum(np.log(q), m_center - _LOSS_SPAN * s_l)
    halfw = 0.5 * np.maximum(m_center + _LOSS_SPAN * s_l - lo, 0.0)
    t = (lo + halfw)[:, None] + halfw[:, None] * x
    z = (t - m_center) / s_l
    wts = np.exp(-0.5 * z * z) / (s_l * _SQRT_2PI) * w * halfw[:, None]
    pdf = _truncated_lognormal_pdf(q[:, None], mu, s, np.exp(t))
    return (pdf * wts).sum(axis=-1)


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class LossModel:
    """Vertical loss: one fixed loss length, or a log-normal family of them.

    ``mu_l`` and ``s_l`` are the natural-log location and scale of the loss
    length in um.  Wherever the model enters a likelihood, lengths map to
    loss Q factors through Q_l = group_index * pi * l / lambda.
    """

    variant: str
    loss_length_um: float = math.nan
    mu_l: float = math.nan
    s_l: float = math.nan
    wavelength_nm: float = 950.0
    group_index: float = 3.44

    def __post_init__(self) -> None:
        check_in(self.variant, "variant", ("single", "distributed"))
        check_positive(self.wavelength_nm, "wavelength_nm")
        check_positive(self.group_index, "group_index")
        if self.variant == "single":
            check_positive(self.loss_length_um, "loss_length_um")
        else:
            if not math.isfinite(self.mu_l):
                raise ParameterDomainError(
                    f"mu_l must be finite, got {self.mu_l!r}"
                )
            check_positive(self.s_l, "s_l")

    @classmethod
    def single(
        cls,
        loss_length_um: float,
        wavelength_nm: float = 950.0,
        group_index: float = 3.44,
    ) -> "LossModel":
        return cls(
            "single",
            loss_length_um=loss_length_um,
            wavelength_nm=wavelength_nm,
            group_index=group_index,
        )

    @classmethod
    def distributed(
        cls,
        mu_l: float,
        s_l: float,
        wavelength_nm: float = 950.0,
        group_index: float = 3.44,
    ) -> "LossModel":
        return cls(
            "distributed",
            mu_l=mu_l,
            s_l=s_l,
            wavelength_nm=wavelength_nm,
            group_index=group_index,
        )

    def q_l_of(self, loss_length_um):
        """Loss Q factor for a loss length in um."""
        lam_um = self.wavelength_nm * 1e-3
        return self.group_index * math.pi * np.asarray(loss_length_um) / lam_um

    @property
    def q_l(self) -> float:
        if self.variant != "single":
            raise ParameterDomainError(
                "q_l is defined for the single variant only"
            )
        return float(self.q_l_of(self.loss_length_um))

    @property
    def ln_q_l_center(self) -> float:
        """Distributed variant: ln Q_l ~ Normal(this center, s_l**2)."""
        if self.variant != "distributed":
            raise ParameterDomainError(
                "ln_q_l_center is defined for the distributed variant only"
            )
        lam_um = self.wavelength_nm * 1e-3
        return self.mu_l + math.log(self.group_index * math.pi / lam_um)


@dataclass(frozen=True)
class PosteriorGrid:
    """Normalized log posterior over a logarithmic parameter grid."""

    variant: str
    axes: tuple[np.ndarray, ...]
    axis_names: tuple[str, ...]
    log_posterior: np.ndarray
    log_evidence: float
    sample_length_um: float
    wavelength_nm: float
    group_index: float

    def __post_init__(self) -> None:
        check_in(self.variant, "variant", ("single", "distributed"))
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        lp = np.asarray(self.log_posterior, dtype=float)
        if len(axes) != len(self.axis_names) or lp.ndim != len(axes):
            raise ParameterDomainError(
                "axes, axis_names and log_posterior dimensions must agree"
            )
        for name, a in zip(self.axis_names, axes):
            if a.ndim != 1 or a.size < 2:
                raise ParameterDomainError(f"axis {name} must be a 1d grid")
            check_increasing(a, name)
        if lp.shape != tuple(a.size for a in axes):
            raise ParameterDomainError("log_posterior shape must match axes")
        total = float(np.exp(lp).sum())
        if abs(total - 1.0) > 1e-9:
            raise ParameterDomainError(
                f"posterior mass must be 1 within 1e-9, got {total!r}"
            )
        for a in axes:
            a.setflags(write=False)
        lp.setflags(write=False)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "log_posterior", lp)

    def axis(self, name: str) -> np.ndarray:
        return self.axes[self.axis_names.index(name)]

    def to_dict(self) -> dict:
        return {
            "format": POSTERIOR_FORMAT,
            "variant": self.variant,
            "axis_names": list(self.axis_names),
            "axes": [a.tolist() for a in self.axes],
            "log_posterior": self.log_posterior.tolist(),
            "log_evidence": self.log_evidence,
            "sample_length_um": self.sample_length_um,
            "wavelength_nm": self.wavelength_nm,
            "group_index": self.group_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorGrid":
        fmt = d.get("format")
        if fmt != POSTERIOR_FORMAT:
            raise ParameterDomainError(f"unsupported posterior format {fmt!r}")
        return cls(
            variant=str(d["variant"]),
            axes=tuple(np.asarray(a, dtype=float) for a in d["axes"]),
            axis_names=tuple(str(n) for n in d["axis_names"]),
            log_posterior=np.asarray(d["log_posterior"], dtype=float),
            log_evidence=float(d["log_evidence"]),
            sample_length_um=float(d["sample_length_um"]),
            wavelength_nm=float(d["wavelength_nm"]),
            group_index=float(d["group_index"]),
        )


@dataclass(frozen=True)
class MapEstimate:
    """Argmax cell of a posterior plus its high-probability neighbourhood."""

    variant: str
    xi_um: float
    log_posterior_at_map: float
    credible_region: np.ndarray = field(repr=False)
    on_boundary: bool
    degenerate: bool
    loss_length_um: float = math.nan
    mu_l: float = math.nan
    s_l: float = math.nan

    @property
    def mean_loss_um(self) -> float:
        if self.variant == "single":
            return self.loss_length_um
        return mean_loss_length(self.mu_l, self.s_l)


# ---------------------------------------------------------------------------
# densities


def compose_q(q0, q_l):
    """Observed Q from intrinsic and loss factors: 1/Q = 1/Q0 + 1/Q_l.

    Every composed value lies strictly below q_l, which is what puts the
    hard ceiling into the observed-Q density.  An infinite q_l returns the
    intrinsic factor unchanged.
    """
    q0 = np.asarray(q0, dtype=float)
    q_l = np.asarray(q_l, dtype=float)
    if np.any(q0 <= 0) or np.any(q_l <= 0):
        raise ParameterDomainError("q0 and q_l must be > 0")
    with np.errstate(invalid="ignore"):
        out = np.where(np.isinf(q_l), q0, q0 * q_l / (q0 + q_l))
    return out[()]


def _truncated_lognormal_pdf(q, mu, s, q_l):
    """Density of compose_q(Q0, q_l) with ln Q0 ~ Normal(mu, s**2).

    Broadcasts over all arguments; zero outside the support (0, q_l).
    The |q_l - q| denominator form keeps the density non-negative on the
    whole support, and the change of variables makes the normalization
    over (0, q_l) exactly 1.
    """
    q = np.asarray(q, dtype=float)
    denom = q_l - q
    valid = (q > 0) & (denom > 0)
    safe_q = np.where(valid, q, 1.0)
    safe_d = np.where(valid, denom, 1.0)
    ln_q0 = np.log(safe_q) + np.log(q_l) - np.log(safe_d)
    z = (ln_q0 - mu) / s
    pdf = q_l / (s * _SQRT_2PI * safe_q * safe_d) * np.exp(-0.5 * z * z)
    return np.where(valid, pdf, 0.0)


def _law_params(cal: Calibration, xi_over_l: float) -> tuple[float, float]:
    return float(cal.mu_at(xi_over_l)), float(cal.s_at(xi_over_l))


def p1_density(q, xi_over_l: float, loss: LossModel, cal: Calibration):
    """Density of one observed Q at fixed localization and loss length.

    Truncated log-normal: zero at and above the loss ceiling Q_l, exactly
    normalized on (0, Q_l).
    """
    if loss.variant != "single":
        raise ParameterDomainError("p1_density needs a single-loss model")
    check_positive(xi_over_l, "xi_over_l")
    arr = np.asarray(q, dtype=float)
    if np.any(arr <= 0):
        raise ParameterDomainError("q must be > 0")
    mu, s = _law_params(cal, xi_over_l)
    return _truncated_lognormal_pdf(arr, mu, s, loss.q_l)[()]


def p1_cdf(q, xi_over_l: float, loss: LossModel, cal: Calibration):
    """Analytic CDF of the truncated log-normal observed-Q density."""
    if loss.variant != "single":
        raise ParameterDomainError("p1_cdf needs a single-loss model")
    check_positive(xi_over_l, "xi_over_l")
    arr = np.asarray(q, dtype=float)
    if np.any(arr <= 0):
        raise ParameterDomainError("q must be > 0")
    mu, s = _law_params(cal, xi_over_l)
    q_l = loss.q_l
    below = arr < q_l
    safe = np.where(below, arr, 0.5 * q_l)
    z = (np.log(safe * q_l / (q_l - safe)) - mu) / s
    return np.where(below, ndtr(z), 1.0)[()]


def sample_p1(
    count: int,
    xi_over_l: float,
    loss: LossModel,
    cal: Calibration,
    seed: int = 0,
) -> np.ndarray:
    """Draw observed Q values by composing log-normal intrinsic factors
    with the fixed loss ceiling; no sample can exceed Q_l."""
    if loss.variant != "single":
        raise ParameterDomainError("sample_p1 needs a single-loss model")
    check_count(count, "count", minimum=1)
    mu, s = _law_params(cal, xi_over_l)
    rng = np.random.default_rng(seed)
    q0 = np.exp(rng.normal(mu, s, count))
    return compose_q(q0, loss.q_l)


def p3_density(q_l, mu: float, s: float):
    """Log-normal density in its first argument, natural-log parameters.

    Used for the loss-Q family: when ln l ~ Normal(mu_l, s_l**2) on the
    length scale, ln Q_l is normal with the same scale and a center shifted
    by ln(group_index*pi/lambda); pass that shifted center here.  The
    Jacobian 1/q_l of the log map is included.
    """
    check_positive(s, "s")
    arr = np.asarray(q_l, dtype=float)
    if np.any(arr <= 0):
        raise ParameterDomainError("q_l must be > 0")
    z = (np.log(arr) - mu) / s
    return (np.exp(-0.5 * z * z) / (arr * s * _SQRT_2PI))[()]


def _noise_smoothed_like(q, sigma, mu, s, q_l, x, w):
    """p1-convolved-with-noise likelihoods for one (mu, s).

    Gauss-Legendre over the intersection of the support (0, q_l) with the
    +-_NOISE_SPAN sigma window around each measurement.  ``q_l`` may be a
    scalar or carry a leading axis (one ceiling per grid cell); the result
    broadcasts accordingly, data axis last.
    """
    q_l = np.asarray(q_l, dtype=float)[..., None]
    lo = np.maximum(0.0, np.minimum(q, q_l) - _NOISE_SPAN * sigma)
    hi = np.minimum(q_l, q + _NOISE_SPAN * sigma)
    mid = 0.5 * (hi + lo)
    halfw = 0.5 * (hi - lo)
    qi = mid[..., None] + halfw[..., None] * x
    pdf = _truncated_lognormal_pdf(qi, mu, s, q_l[..., None])
    z = (q[:, None] - qi) / sigma[:, None]
    gauss = np.exp(-0.5 * z * z) / (sigma[:, None] * _SQRT_2PI)
    return (pdf * gauss) @ w * halfw


def likelihood_single_loss(
    q_meas,
    sigma_q,
    xi_over_l: float,
    loss: LossModel,
    cal: Calibration,
    nodes: int = QUADRATURE_NODES,
):
    """Observed-Q density smoothed by Gaussian measurement noise.

    The convolution softens the hard ceiling: a measurement slightly above
    Q_l keeps a small positive likelihood instead of vetoing the model.
    """
    if loss.variant != "single":
        raise ParameterDomainError(
            "likelihood_single_loss needs a single-loss model"
        )
    check_positive(xi_over_l, "xi_over_l")
    check_count(nodes, "nodes", minimum=16)
    q = np.atleast_1d(np.asarray(q_meas, dtype=float))
    sigma = np.broadcast_to(np.asarray(sigma_q, dtype=float), q.shape)
    if np.any(q <= 0):
        raise ParameterDomainError("q_meas must be > 0")
    if np.any(sigma <= 0):
        raise ParameterDomainError("sigma_q must be > 0")
    mu, s = _law_params(cal, xi_over_l)
    x, w = _gauss_legendre(nodes)
    like = _noise_smoothed_like(q, sigma, mu, s, loss.q_l, x, w)
    if not np.all(np.isfinite(like)):
        raise QuadratureError(
            f"noise convolution produced non-finite values at "
            f"xi/L={xi_over_l:g}, Q_l={loss.q_l:g}"
        )
    return like.reshape(np.shape(q_meas))[()]


def likelihood_distributed_loss(
    q_meas,
    xi_over_l: float,
    loss: LossModel,
    cal: Calibration,
    nodes: int = QUADRATURE_NODES,
):
    """Observed-Q likelihood averaged over the log-normal loss family.

    Gauss-Legendre in ln Q_l across +-8 scale parameters of the family;
    measured-Q uncertainties are treated as negligible here, so this is
    the pure loss-distribution average of the truncated density.
    """
    if loss.variant != "distributed":
        raise ParameterDomainError(
            "likelihood_distributed_loss needs a distributed-loss model"
        )
    check_positive(xi_over_l, "xi_over_l")
    check_count(nodes, "nodes", minimum=64)
    q = np.atleast_1d(np.asarray(q_meas, dtype=float))
    if np.any(q <= 0):
        raise ParameterDomainError("q_meas must be > 0")
    mu, s = _law_params(cal, xi_over_l)
    x, w = _gauss_legendre(nodes)
    like = _loss_averaged_like(q, mu, s, loss.ln_q_l_center, loss.s_l, x, w)
    if not np.all(np.isfinite(like)):
        raise QuadratureError(
            f"loss-family average produced non-finite values at "
            f"xi/L={xi_over_l:g}, mu_l={loss.mu_l:g}, s_l={loss.s_l:g}"
        )
    return like.reshape(np.shape(q_meas))[()]


def mean_loss_length(mu_l: float, s_l: float) -> float:
    """Average loss length of the log-normal family, exp(mu_l + s_l**2/2)."""
    check_nonnegative(s_l, "s_l")
    return math.exp(mu_l + 0.5 * s_l * s_l)


# ---------------------------------------------------------------------------
# posterior over parameter grids


def default_grids(model: str) -> dict[str, np.ndarray]:
    """Declared default grids: logarithmic, spanning the plausible range of
    micron-scale localization and 50 um to 5 mm loss lengths."""
    check_in(model, "model", ("single", "distributed"))
    grids = {"xi_grid_um": np.geomspace(1.0, 100.0, 64)}
    if model == "single":
        grids["l_grid_um"] = np.geomspace(50.0, 5000.0, 64)
    else:
        grids["mu_l_grid"] = np.linspace(
            math.log(50.0), math.log(5000.0), 48
        )
        grids["s_l_grid"] = np.geomspace(0.05, 2.0, 32)
    return grids


def posterior(
    dataset: QDataset,
    cal: Calibration,
    model: str = "single",
    xi_grid_um=None,
    l_grid_um=None,
    mu_l_grid=None,
    s_l_grid=None,
    sample_length_um: float | None = None,
    wavelength_nm: float | None = None,
    group_index: float | None = None,
    nodes: int = QUADRATURE_NODES,
) -> PosteriorGrid:
    """Flat-prior log posterior of the dataset over a parameter grid.

    Likelihoods multiply across data (independent measurements), so cells
    accumulate sums of log likelihoods with a final log-sum-exp
    normalization; a cell with zero likelihood is -inf, never a NaN.
    Wavelength and group index default to the calibration's.
    """
    check_in(model, "model", ("single", "distributed"))
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    length = (
        dataset.sample_length_um
        if sample_length_um is None
        else sample_length_um
    )
    if not (isinstance(length, (int, float)) and math.isfinite(length)):
        raise ParameterDomainError(
            "dataset carries no sample length; pass sample_length_um"
        )
    check_positive(length, "sample_length_um")
    lam = cal.wavelength_nm if wavelength_nm is None else wavelength_nm
    n_g = cal.reference.mean_index if group_index is None else group_index
    check_positive(lam, "wavelength_nm")
    check_positive(n_g, "group_index")

    defaults = default_grids(model)
    xi_grid = np.asarray(
        defaults["xi_grid_um"] if xi_grid_um is None else xi_grid_um, float
    )
    check_increasing(xi_grid, "xi_grid_um")
    if np.any(xi_grid <= 0):
        raise ParameterDomainError("xi_grid_um must be positive")
    q = dataset.q
    sigma = dataset.sigma_q
    mus = np.array([float(cal.mu_at(xi / length)) for xi in xi_grid])
    ss = np.array([float(cal.s_at(xi / length)) for xi in xi_grid])

    if model == "single":
        l_grid = np.asarray(
            defaults["l_grid_um"] if l_grid_um is None else l_grid_um, float
        )
        check_increasing(l_grid, "l_grid_um")
        if np.any(l_grid <= 0):
            raise ParameterDomainError("l_grid_um must be positive")
        x, w = _gauss_legendre(nodes)
        q_ls = n_g * math.pi * l_grid / (lam * 1e-3)
        loglike = np.empty((xi_grid.size, l_grid.size))
        with np.errstate(divide="ignore"):
            for i in range(xi_grid.size):
                like = _noise_smoothed_like(q, sigma, mus[i], ss[i], q_ls, x, w)
                # value-sorted accumulation: permuting the dataset must
                # reproduce the posterior bit for bit
                loglike[i] = np.sort(np.log(like), axis=1).sum(axis=1)
        axes = (xi_grid, l_grid)
        names = ("xi_um", "l_um")
    else:
        mu_l = np.asarray(
            defaults["mu_l_grid"] if mu_l_grid is None else mu_l_grid, float
        )
        s_l = np.asarray(
            defaults["s_l_grid"] if s_l_grid is None else s_l_grid, float
        )
        check_increasing(mu_l, "mu_l_grid")
        check_increasing(s_l, "s_l_grid")
        if np.any(s_l <= 0):
            raise ParameterDomainError("s_l_grid must be positive")
        x, w = _gauss_legendre(max(nodes, 64))
        offset = math.log(n_g * math.pi / (lam * 1e-3))
        mu_col = mus[:, None, None]
        s_col = ss[:, None, None]
        loglike = np.empty((xi_grid.size, mu_l.size, s_l.size))
        with np.errstate(divide="ignore"):
            for j, ml in enumerate(mu_l):
                for k, sl in enumerate(s_l):
                    like = _loss_averaged_like(
                        q, mu_col, s_col, ml + offset, sl, x, w
                    )
                    # canonical accumulation order, as in the single fill
                    loglike[:, j, k] = np.sort(np.log(like), axis=1).sum(axis=1)
        axes = (xi_grid, mu_l, s_l)
        names = ("xi_um", "mu_l", "s_l")

    peak = float(np.max(loglike))
    if not math.isfinite(peak):
        raise ModelMismatchError(
            "every grid cell has zero likelihood for this dataset; "
            "the grids or the model do not cover the data"
        )
    log_z = float(logsumexp(loglike))
    return PosteriorGrid(
        variant=model,
        axes=axes,
        axis_names=names,
        log_posterior=loglike - log_z,
        log_evidence=log_z,
        sample_length_um=float(length),
        wavelength_nm=float(lam),
        group_index=float(n_g),
    )


def map_estimate(
    post: PosteriorGrid, credible_fraction: float = math.exp(-2.0)
) -> MapEstimate:
    """Argmax cell of the posterior.

    Ties break toward the first cell in C order, which on increasing axes
    means the smallest localization length, then the smallest loss
    parameter.  An argmax on any grid edge triggers a boundary warning:
    the true maximum may lie outside the searched range.
    """
    if not 0.0 < credible_fraction < 1.0:
        raise ParameterDomainError(
            f"credible_fraction must be in (0, 1), got {credible_fraction!r}"
        )
    lp = post.log_posterior
    idx = np.unravel_index(int(np.argmax(lp)), lp.shape)
    peak = float(lp[idx])
    degenerate = int(np.count_nonzero(lp == peak)) > 1
    on_boundary = any(
        i in (0, n - 1) for i, n in zip(idx, lp.shape)
    )
    if on_boundary:
        warnings.warn(
            "posterior maximum lies on a grid boundary; widen the grid",
            RuntimeWarning,
            stacklevel=2,
        )
    region = lp >= peak + math.log(credible_fraction)
    values = [float(a[i]) for a, i in zip(post.axes, idx)]
    if post.variant == "single":
        return MapEstimate(
            variant="single",
            xi_um=values[0],
            log_posterior_at_map=peak,
            credible_region=region,
            on_boundary=on_boundary,
            degenerate=degenerate,
            loss_length_um=values[1],
        )
    return MapEstimate(
        variant="distributed",
        xi_um=values[0],
        log_posterior_at_map=peak,
        credible_region=region,
        on_boundary=on_boundary,
        degenerate=degenerate,
        mu_l=values[1],
        s_l=values[2],
    )


# ---------------------------------------------------------------------------
# estimator surface


class LocalizationEstimator(BaseEstimator):
    """MAP inference of localization length and vertical loss from Q data.

    Construction stores parameters untouched; ``fit`` runs the posterior
    for a :class:`~xiloss.spectra.QDataset` and exposes the results as
    trailing-underscore attributes (``xi_um_``, ``loss_length_um_`` or
    ``mu_l_``/``s_l_``/``mean_loss_um_``, ``posterior_``, ``map_``).
    """

    def __init__(
        self,
        calibration: Calibration | None = None,
        model: str = "single",
        xi_grid_um=None,
        l_grid_um=None,
        mu_l_grid=None,
        s_l_grid=None,
        sample_length_um: float | None = None,
        credible_fraction: float = math.exp(-2.0),
    ):
        self.calibration = calibration
        self.model = model
        self.xi_grid_um = xi_grid_um
        self.l_grid_um = l_grid_um
        self.mu_l_grid = mu_l_grid
        self.s_l_grid = s_l_grid
        self.sample_length_um = sample_length_um
        self.credible_fraction = credible_fraction

    def fit(self, dataset: QDataset, y=None) -> "LocalizationEstimator":
        if self.calibration is None:
            raise ParameterDomainError("calibration is required to fit")
        self.posterior_ = posterior(
            dataset,
            self.calibration,
            self.model,
            xi_grid_um=self.xi_grid_um,
            l_grid_um=self.l_grid_um,
            mu_l_grid=self.mu_l_grid,
            s_l_grid=self.s_l_grid,
            sample_length_um=self.sample_length_um,
        )
        self.map_ = map_estimate(self.posterior_, self.credible_fraction)
        self.xi_um_ = self.map_.xi_um
        if self.model == "single":
            self.loss_length_um_ = self.map_.loss_length_um
        else:
            self.mu_l_ = self.map_.mu_l
            self.s_l_ = self.map_.s_l
            self.mean_loss_um_ = self.map_.mean_loss_um
        return self
