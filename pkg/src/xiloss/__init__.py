"""Localization and loss lengths from resonance Q statistics in 1D stacks."""

from ._version import __version__
from .calibrate import (
    Calibration,
    PowerLawFit,
    XiEstimate,
    dn_for_xi,
    expected_q_ceiling,
    fit_power_law,
    run_calibration,
    xi_from_dn,
)
from .errors import (
    CalibrationRangeError,
    ConditioningError,
    DataError,
    DegenerateSolutionError,
    ModelMismatchError,
    NumericalError,
    ParameterDomainError,
    QuadratureError,
    ResolutionLimitedError,
    UnderResolvedError,
    XilossError,
)
from .inference import (
    LocalizationEstimator,
    LossModel,
    MapEstimate,
    PosteriorGrid,
    compose_q,
    default_grids,
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
from .intensity import (
    FluctuationHistogram,
    fluctuation_histogram,
    intensity_at,
    ldos_at,
)
from .io import (
    load_calibration,
    load_manifest,
    load_posterior,
    load_qdataset,
    read_config,
    read_positioned_csv,
    read_spectrum_csv,
    save_calibration,
    save_manifest,
    save_posterior,
    save_qdataset,
    write_config,
    write_positioned_csv,
    write_spectrum_csv,
)
from .solver import (
    GreenSample,
    SpectrumScan,
    averaged_green,
    ensemble_ln_transmission,
    green_diagonal,
    green_function,
    green_window_means,
    ln_transmission,
    ln_transmission_scan,
    scan_transmission,
    transmission,
    transmission_reflection,
)
from .spectra import (
    ModeRecord,
    PositionedSpectrum,
    QDataset,
    Resonance,
    ResonanceExtractor,
    SyntheticMode,
    build_qdataset,
    deconvolve_irf,
    find_resonances,
    group_modes,
    synth_spectrum,
)
from .stack import (
    DisorderedStack,
    EnsembleSpec,
    StackSpec,
    ensemble_iter,
    ensemble_stack,
    generate_stack,
)

__all__ = [
    "__version__",
    "Calibration",
    "CalibrationRangeError",
    "ConditioningError",
    "DataError",
    "DegenerateSolutionError",
    "DisorderedStack",
    "EnsembleSpec",
    "FluctuationHistogram",
    "GreenSample",
    "LocalizationEstimator",
    "LossModel",
    "MapEstimate",
    "ModeRecord",
    "ModelMismatchError",
    "NumericalError",
    "ParameterDomainError",
    "PositionedSpectrum",
    "PosteriorGrid",
    "PowerLawFit",
    "QDataset",
    "QuadratureError",
    "Resonance",
    "ResonanceExtractor",
    "ResolutionLimitedError",
    "SpectrumScan",
    "StackSpec",
    "SyntheticMode",
    "UnderResolvedError",
    "XiEstimate",
    "XilossError",
    "averaged_green",
    "build_qdataset",
    "compose_q",
    "deconvolve_irf",
    "default_grids",
    "dn_for_xi",
    "ensemble_iter",
    "ensemble_ln_transmission",
    "ensemble_stack",
    "expected_q_ceiling",
    "find_resonances",
    "fit_power_law",
    "fluctuation_histogram",
    "generate_stack",
    "green_diagonal",
    "green_function",
    "green_window_means",
    "group_modes",
    "intensity_at",
    "ldos_at",
    "likelihood_distributed_loss",
    "likelihood_single_loss",
    "ln_transmission",
    "ln_transmission_scan",
    "load_calibration",
    "load_manifest",
    "load_posterior",
    "load_qdataset",
    "map_estimate",
    "mean_loss_length",
    "p1_cdf",
    "p1_density",
    "p3_density",
    "posterior",
    "read_config",
    "read_positioned_csv",
    "read_spectrum_csv",
    "run_calibration",
    "sample_p1",
    "save_calibration",
    "save_manifest",
    "save_posterior",
    "save_qdataset",
    "scan_transmission",
    "synth_spectrum",
    "transmission",
    "transmission_reflection",
    "write_config",
    "write_positioned_csv",
    "write_spectrum_csv",
    "xi_from_dn",
]
