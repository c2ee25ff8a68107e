"""File formats for every pipeline product.

CSV carries measured or simulated curves (spectra, histograms, posterior
profiles); JSON carries structured documents (datasets, calibrations,
posterior grids, manifests).  All floats are written at full double
precision so byte-identical reruns are meaningful.  Non-finite values in
JSON use the JavaScript-style literals ``NaN``/``Infinity`` that the
standard-library parser reads back; external consumers need a lenient
parser for those fields (loss_length_um is infinity for lossless stacks).
"""

from __future__ import annotations

import csv
import json
import math
import os
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._version import __version__
from .calibrate import Calibration
from .errors import DataError, ParameterDomainError
from .inference import MapEstimate, PosteriorGrid, mean_loss_length
from .intensity import TAIL_ABSCISSAS, FluctuationHistogram
from .solver import SpectrumScan
from .spectra import PositionedSpectrum, QDataset

__all__ = [
    "QDATASET_FORMAT",
    "format_float",
    "load_calibration",
    "load_manifest",
    "load_posterior",
    "load_qdataset",
    "map_summary_line",
    "read_config",
    "read_positioned_csv",
    "read_spectrum_csv",
    "save_calibration",
    "save_manifest",
    "save_posterior",
    "save_qdataset",
    "svg_histograms",
    "write_config",
    "write_histogram_csv",
    "write_loss_distribution_csv",
    "write_positioned_csv",
    "write_posterior_slices",
    "write_spectrum_csv",
    "write_survival_csv",
]

QDATASET_FORMAT = "xiloss-qdataset/1"


def format_float(value: float) -> str:
    """Full-precision decimal form: round-trips to the same double."""
    return format(float(value), ".17g")


def _write_json(path: str | os.PathLike, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: str | os.PathLike) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise DataError(f"{path}: expected a JSON object at the top level")
    return doc


# ---------------------------------------------------------------------------
# key=value configuration


def read_config(path: str | os.PathLike) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blanks are skipped."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(
                    f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}"
                )
            key, value = line.split("=", 1)
            key, value = key.strip(), value.strip()
            if not key or not value:
                raise DataError(
                    f"{path}:{lineno}: empty key or value in {raw.strip()!r}"
                )
            out[key] = value
    return out


def write_config(path: str | os.PathLike, values: Mapping[str, object]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(values):
            v = values[key]
            text = format_float(v) if isinstance(v, float) else str(v)
            fh.write(f"{key} = {text}\n")


# ---------------------------------------------------------------------------
# spectra CSV


def write_spectrum_csv(path: str | os.PathLike, scan: SpectrumScan) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("wavelength_nm,value\n")
        for w, v in zip(scan.wavelengths_nm, scan.values):
            fh.write(f"{format_float(w)},{format_float(v)}\n")


def _float_cell(path, lineno, name, text):
    try:
        return float(text)
    except ValueError:
        raise DataError(
            f"{path}:{lineno}: column {name} is not a number: {text!r}"
        ) from None


def read_spectrum_csv(
    path: str | os.PathLike, kind: str = "transmission"
) -> SpectrumScan:
    wavelengths: list[float] = []
    values: list[float] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or [c.strip() for c in header] != ["wavelength_nm", "value"]:
            raise DataError(f"{path}:1: expected header 'wavelength_nm,value'")
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            wavelengths.append(_float_cell(path, lineno, "wavelength_nm", row[0]))
            values.append(_float_cell(path, lineno, "value", row[1]))
    if not wavelengths:
        raise DataError(f"{path}: no data rows")
    return SpectrumScan(np.array(wavelengths), np.array(values), kind=kind)


def write_positioned_csv(
    path: str | os.PathLike, spectra: Sequence[PositionedSpectrum]
) -> None:
    """All scan positions in one file, grouped by position."""
    if not spectra:
        raise ParameterDomainError("spectra must be non-empty")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("position_um,wavelength_nm,counts\n")
        for ps in spectra:
            p = format_float(ps.position_um)
            for w, v in zip(ps.scan.wavelengths_nm, ps.scan.values):
                fh.write(f"{p},{format_float(w)},{format_float(v)}\n")


def read_positioned_csv(
    path: str | os.PathLike, irf_fwhm_nm: float | None = None
) -> list[PositionedSpectrum]:
    """Read a positioned scan set; rows for one position must be contiguous."""
    groups: list[tuple[float, list[float], list[float]]] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        expected = ["position_um", "wavelength_nm", "counts"]
        if header is None or [c.strip() for c in header] != expected:
            raise DataError(
                f"{path}:1: expected header 'position_um,wavelength_nm,counts'"
            )
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            pos = _float_cell(path, lineno, "position_um", row[0])
            w = _float_cell(path, lineno, "wavelength_nm", row[1])
            v = _float_cell(path, lineno, "counts", row[2])
            if not groups or groups[-1][0] != pos:
                groups.append((pos, [], []))
            groups[-1][1].append(w)
            groups[-1][2].append(v)
    if not groups:
        raise DataError(f"{path}: no data rows")
    extra = {} if irf_fwhm_nm is None else {"irf_fwhm_nm": irf_fwhm_nm}
    return [
        PositionedSpectrum(
            position_um=pos,
            scan=SpectrumScan(np.array(ws), np.array(vs), kind="intensity"),
            **extra,
        )
        for pos, ws, vs in groups
    ]


def write_modes_csv(path: str | os.PathLike, modes) -> None:
    """Per-mode table: center, best Q, maximum speckle separation z_m."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("center_nm,q,z_m_um,member_count\n")
        for m in modes:
            fh.write(
                f"{format_float(m.center_nm)},{format_float(m.q_best)},"
                f"{format_float(m.z_m_um)},{len(m.members)}\n"
            )


# ---------------------------------------------------------------------------
# datasets, calibrations, posteriors


def save_qdataset(path: str | os.PathLike, ds: QDataset) -> None:
    _write_json(
        path,
        {
            "format": QDATASET_FORMAT,
            "q": [q for q, _ in ds.q_values],
            "sigma_q": [s for _, s in ds.q_values],
            "delta_label": ds.delta_label,
            "lambda_range_nm": list(ds.lambda_range_nm),
            "sample_length_um": ds.sample_length_um,
        },
    )


def load_qdataset(path: str | os.PathLike) -> QDataset:
    doc = _read_json(path)
    if doc.get("format") != QDATASET_FORMAT:
        raise DataError(
            f"{path}: unsupported dataset format {doc.get('format')!r}"
        )
    q = doc["q"]
    sigma = doc["sigma_q"]
    if len(q) != len(sigma):
        raise DataError(f"{path}: q and sigma_q lengths disagree")
    lam = doc.get("lambda_range_nm", (math.nan, math.nan))
    return QDataset(
        q_values=tuple(zip(map(float, q), map(float, sigma))),
        delta_label=float(doc.get("delta_label", math.nan)),
        lambda_range_nm=(float(lam[0]), float(lam[1])),
        sample_length_um=float(doc.get("sample_length_um", math.nan)),
    )


def save_calibration(path: str | os.PathLike, cal: Calibration) -> None:
    _write_json(path, cal.to_dict())


def load_calibration(path: str | os.PathLike) -> Calibration:
    return Calibration.from_dict(_read_json(path))


def save_posterior(path: str | os.PathLike, post: PosteriorGrid) -> None:
    _write_json(path, post.to_dict())


def load_posterior(path: str | os.PathLike) -> PosteriorGrid:
    return PosteriorGrid.from_dict(_read_json(path))


def write_posterior_slices(path: str | os.PathLike, post: PosteriorGrid) -> None:
    """1D log-posterior profiles through the maximum cell, one per axis."""
    peak = np.unravel_index(
        int(np.argmax(post.log_posterior)), post.log_posterior.shape
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("axis,value,log_posterior\n")
        for i, name in enumerate(post.axis_names):
            indexer = list(peak)
            for j, value in enumerate(post.axes[i]):
                indexer[i] = j
                lp = post.log_posterior[tuple(indexer)]
                fh.write(f"{name},{format_float(value)},{format_float(lp)}\n")


def map_summary_line(m: MapEstimate) -> str:
    """The MAP as a single machine-readable JSON line."""
    doc = {
        "variant": m.variant,
        "xi_um": m.xi_um,
        "log_posterior_at_map": m.log_posterior_at_map,
        "on_boundary": m.on_boundary,
        "degenerate": m.degenerate,
        "mean_loss_um": m.mean_loss_um,
    }
    if m.variant == "single":
        doc["loss_length_um"] = m.loss_length_um
    else:
        doc["mu_l"] = m.mu_l
        doc["s_l"] = m.s_l
    return json.dumps(doc, sort_keys=True)


def write_loss_distribution_csv(
    path: str | os.PathLike, mu_l: float, s_l: float, points: int = 200
) -> None:
    """Inferred loss-length density table on a logarithmic l grid."""
    from .inference import p3_density  # local import keeps module load light

    mean = mean_loss_length(mu_l, s_l)
    grid = np.geomspace(
        math.exp(mu_l - 4.0 * s_l), math.exp(mu_l + 4.0 * s_l), points
    )
    dens = p3_density(grid, mu_l, s_l)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# mean_loss_um = {format_float(mean)}\n")
        fh.write("l_um,density\n")
        for l, d in zip(grid, dens):
            fh.write(f"{format_float(l)},{format_float(d)}\n")


# ---------------------------------------------------------------------------
# histograms


def write_histogram_csv(
    path: str | os.PathLike, hist: FluctuationHistogram
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_left,bin_right,density\n")
        edges = hist.bin_edges
        for i, d in enumerate(hist.probability_density):
            fh.write(
                f"{format_float(edges[i])},{format_float(edges[i + 1])},"
                f"{format_float(d)}\n"
            )


def write_survival_csv(
    path: str | os.PathLike, hists: Iterable[FluctuationHistogram]
) -> None:
    """Tail table at the fixed reporting abscissas, one row per (kind, x)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("kind,abscissa,survival\n")
        for hist in hists:
            for x in TAIL_ABSCISSAS:
                fh.write(
                    f"{hist.kind},{format_float(x)},"
                    f"{format_float(hist.survival(x))}\n"
                )


_SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def svg_histograms(
    path: str | os.PathLike, hists: Sequence[FluctuationHistogram]
) -> None:
    """Static log-log density plot; no external assets, deterministic."""
    if not hists:
        raise ParameterDomainError("hists must be non-empty")
    width, height, margin = 640, 480, 60
    x_lo = math.log10(min(h.bin_edges[0] for h in hists))
    x_hi = math.log10(max(h.bin_edges[-1] for h in hists))
    positive = np.concatenate(
        [h.probability_density[h.probability_density > 0] for h in hists]
    )
    if positive.size == 0:
        raise ParameterDomainError("all histogram densities are zero")
    y_lo = math.floor(math.log10(positive.min()))
    y_hi = math.ceil(math.log10(positive.max())) + 1

    def sx(logx):
        return margin + (logx - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def sy(logy):
        return height - margin - (logy - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}" '
        f'height="{height - 2 * margin}" fill="none" stroke="black"/>',
    ]
    for d in range(int(math.ceil(x_lo)), int(math.floor(x_hi)) + 1):
        x = sx(d)
        parts.append(
            f'<line x1="{x:.2f}" y1="{height - margin}" x2="{x:.2f}" '
            f'y2="{height - margin + 6}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{height - margin + 22}" font-size="12" '
            f'text-anchor="middle">1e{d}</text>'
        )
    for d in range(y_lo, y_hi + 1):
        y = sy(d)
        parts.append(
            f'<line x1="{margin - 6}" y1="{y:.2f}" x2="{margin}" '
            f'y2="{y:.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{margin - 10}" y="{y + 4:.2f}" font-size="12" '
            f'text-anchor="end">1e{d}</text>'
        )
    parts.append(
        f'<text x="{width / 2:.0f}" y="{height - 14}" font-size="13" '
        f'text-anchor="middle">normalized value</text>'
    )
    for idx, hist in enumerate(hists):
        color = _SVG_COLORS[idx % len(_SVG_COLORS)]
        centers = np.sqrt(hist.bin_edges[:-1] * hist.bin_edges[1:])
        pts = [
            f"{sx(math.log10(c)):.2f},{sy(math.log10(d)):.2f}"
            for c, d in zip(centers, hist.probability_density)
            if d > 0
        ]
        parts.append(
            f'<polyline points="{" ".join(pts)}" fill="none" '
            f'stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{width - margin - 8}" y="{margin + 18 + 16 * idx}" '
            f'font-size="12" text-anchor="end" fill="{color}">{hist.kind}</text>'
        )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")


# ---------------------------------------------------------------------------
# manifests


def save_manifest(path: str | os.PathLike, payload: Mapping[str, object]) -> None:
    """Config echo plus toolkit version; no timestamps, so a rerun of the
    same command reproduces the manifest byte for byte."""
    doc = dict(payload)
    doc["toolkit"] = "xiloss"
    doc["version"] = __version__
    _write_json(path, doc)


def load_manifest(path: str | os.PathLike) -> dict:
    return _read_json(path)
