"""Disordered 1D layer stacks and reproducible ensembles.

A stack is a sequence of equally thick layers whose real refractive
indices are drawn i.i.d. from a flat distribution ``n +- delta_n``.
Out-of-plane loss is modeled as a homogeneous imaginary index evaluated
from a loss length at whatever wavelength a solver call supplies; it is
deliberately not stored per layer.

Seeds are derived per realization from ``(master_seed, index)`` through
``numpy.random.SeedSequence``, so any partitioning of an ensemble over
workers enumerates exactly the same stacks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ._validation import check_count, check_positive
from .errors import ParameterDomainError

__all__ = [
    "StackSpec",
    "DisorderedStack",
    "EnsembleSpec",
    "generate_stack",
    "imag_index_for",
    "ensemble_iter",
    "ensemble_stack",
    "derive_seed",
]

CONFIG_KEYS = (
    "mean_index",
    "delta_n",
    "layer_thickness_nm",
    "sample_length_um",
    "loss_length_um",
    "surround_index",
)


@dataclass(frozen=True)
class StackSpec:
    """Physical parameters of the random layer medium.

    ``loss_length_um`` may be ``math.inf`` for a lossless medium; any
    finite value maps to a homogeneous Im(n) via :func:`imag_index_for`.
    """

    mean_index: float = 3.44
    delta_n: float = 0.0
    layer_thickness_nm: float = 10.0
    sample_length_um: float = 100.0
    loss_length_um: float = math.inf
    surround_index: float = 1.0

    def __post_init__(self) -> None:
        if self.delta_n < 0:
            raise ParameterDomainError(f"delta_n must be >= 0, got {self.delta_n!r}")
        if not self.delta_n < self.mean_index:
            raise ParameterDomainError(
                "delta_n must stay below mean_index so the index stays positive, "
                f"got delta_n={self.delta_n!r}, mean_index={self.mean_index!r}"
            )
        check_positive(self.mean_index, "mean_index")
        check_positive(self.layer_thickness_nm, "layer_thickness_nm")
        check_positive(self.surround_index, "surround_index")
        check_positive(self.loss_length_um, "loss_length_um", allow_inf=True)
        if self.sample_length_um * 1e3 < self.layer_thickness_nm:
            raise ParameterDomainError(
                "sample_length_um must be at least one layer thick, got "
                f"{self.sample_length_um!r} um vs {self.layer_thickness_nm!r} nm"
            )

    @property
    def layer_count(self) -> int:
        # L/Lp rounded to nearest; with the defaults this is exactly 10^4.
        return int(round(self.sample_length_um * 1e3 / self.layer_thickness_nm))

    def imag_index(self, wavelength_nm: float) -> float:
        return imag_index_for(self.loss_length_um, wavelength_nm)

    def to_config_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in CONFIG_KEYS}

    @classmethod
    def from_config_dict(cls, cfg: dict) -> "StackSpec":
        kwargs = {k: float(cfg[k]) for k in CONFIG_KEYS if k in cfg}
        return cls(**kwargs)


@dataclass(frozen=True)
class DisorderedStack:
    """One disorder realization: real index per layer plus provenance."""

    n_real: np.ndarray
    spec: StackSpec
    seed: int

    @property
    def thickness_nm(self) -> float:
        return self.spec.layer_thickness_nm

    @property
    def length_um(self) -> float:
        return self.n_real.size * self.spec.layer_thickness_nm * 1e-3

    def index_at(self, wavelength_nm: float) -> np.ndarray:
        """Complex layer indices with the loss channel evaluated at this wavelength."""
        im = self.spec.imag_index(wavelength_nm)
        return self.n_real + 1j * im

    def layers(self, wavelength_nm: float | None = None) -> list[tuple[float, complex]]:
        idx = self.n_real if wavelength_nm is None else self.index_at(wavelength_nm)
        d = self.spec.layer_thickness_nm
        return [(d, complex(n)) for n in idx]


@dataclass(frozen=True)
class EnsembleSpec:
    base: StackSpec
    realization_count: int = 1000
    master_seed: int = 0

    def __post_init__(self) -> None:
        check_count(self.realization_count, "realization_count", minimum=1)
        if int(self.master_seed) != self.master_seed or self.master_seed < 0:
            raise ParameterDomainError(
                f"master_seed must be a non-negative integer, got {self.master_seed!r}"
            )

    def to_config_dict(self) -> dict[str, float]:
        cfg = self.base.to_config_dict()
        cfg["realizations"] = self.realization_count
        cfg["master_seed"] = self.master_seed
        return cfg

    @classmethod
    def from_config_dict(cls, cfg: dict) -> "EnsembleSpec":
        return cls(
            base=StackSpec.from_config_dict(cfg),
            realization_count=int(cfg.get("realizations", 1000)),
            master_seed=int(cfg.get("master_seed", 0)),
        )


def imag_index_for(loss_length_um: float, wavelength_nm: float) -> float:
    """Homogeneous imaginary index for a given loss length, lambda/(2 pi l)."""
    check_positive(loss_length_um, "loss_length_um", allow_inf=True)
    check_positive(wavelength_nm, "wavelength_nm")
    if math.isinf(loss_length_um):
        return 0.0
    return wavelength_nm * 1e-3 / (2.0 * math.pi * loss_length_um)


def derive_seed(master_seed: int, index: int) -> int:
    """64-bit realization seed from (master_seed, index), partition independent."""
    ss = np.random.SeedSequence((int(master_seed), int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


def generate_stack(spec: StackSpec, seed: int) -> DisorderedStack:
    """Draw one realization; identical (spec, seed) gives bit-identical layers."""
    rng = np.random.default_rng(int(seed))
    lo = spec.mean_index - spec.delta_n
    hi = spec.mean_index + spec.delta_n
    n_real = rng.uniform(lo, hi, spec.layer_count)
    n_real.setflags(write=False)
    return DisorderedStack(n_real=n_real, spec=spec, seed=int(seed))


def ensemble_stack(ens: EnsembleSpec, index: int) -> DisorderedStack:
    if not 0 <= index < ens.realization_count:
        raise ParameterDomainError(
            f"realization index {index} outside [0, {ens.realization_count})"
        )
    return generate_stack(ens.base, derive_seed(ens.master_seed, index))


def ensemble_iter(
    ens: EnsembleSpec, start: int = 0, stop: int | None = None
) -> Iterator[DisorderedStack]:
    """Yield realizations ``start..stop``; any partition of the range is
    consistent with any other, so concurrent consumers may split it freely."""
    stop = ens.realization_count if stop is None else stop
    if not 0 <= start <= stop <= ens.realization_count:
        raise ParameterDomainError(
            f"partition [{start}, {stop}) outside [0, {ens.realization_count}]"
        )
    for i in range(start, stop):
        yield ensemble_stack(ens, i)
