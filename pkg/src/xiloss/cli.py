"""Command-line pipeline: simulate, calibrate, extract, infer, intensity, synth.

Configuration precedence is built-in defaults, then the --config file
(key = value lines), then explicit flags.  Every run writes a manifest
echoing the effective configuration next to its outputs, and all outputs
are deterministic functions of that manifest: rerunning a manifest
reproduces every file byte for byte, regardless of worker count.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from ._validation import check_count
from ._version import __version__
from .calibrate import run_calibration
from .errors import DataError, ParameterDomainError, XilossError
from .inference import map_estimate, posterior
from .intensity import fluctuation_histogram, ldos_at
from .io import (
    load_calibration,
    load_qdataset,
    map_summary_line,
    read_config,
    read_positioned_csv,
    save_calibration,
    save_manifest,
    save_posterior,
    save_qdataset,
    svg_histograms,
    write_histogram_csv,
    write_loss_distribution_csv,
    write_modes_csv,
    write_positioned_csv,
    write_posterior_slices,
    write_spectrum_csv,
    write_survival_csv,
)
from .solver import SpectrumScan, ln_transmission_scan
from .spectra import (
    PositionedSpectrum,
    ResonanceExtractor,
    SyntheticMode,
    synth_spectrum,
)
from .stack import CONFIG_KEYS, EnsembleSpec, StackSpec, ensemble_stack

OUTPUT_DIR_ENV = "XILOSS_OUT"


def _floats_csv(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated numbers, got {text!r}"
        ) from None


def _grid_spec(text: str) -> tuple[float, float, int]:
    parts = _floats_csv(text)
    if len(parts) != 3 or parts[2] != int(parts[2]):
        raise argparse.ArgumentTypeError(
            f"expected 'low,high,count', got {text!r}"
        )
    return parts[0], parts[1], int(parts[2])


def _bool_flag(text) -> bool:
    if isinstance(text, bool):
        return text
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _merge_config(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit flags; returns the effective map."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        raw = read_config(config_path)
        for key, value in raw.items():
            if key not in defaults:
                continue  # shared config files may carry other commands' keys
            converter = _CONVERTERS.get(key, float)
            try:
                merged[key] = converter(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise DataError(f"{config_path}: key {key}: {exc}") from None
    for key in defaults:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
    return merged


# converters for config-file strings, keyed by option name; anything not
# listed parses as a plain float
_CONVERTERS: dict[str, object] = {
    "realizations": int,
    "master_seed": int,
    "points": int,
    "wavelength_points": int,
    "coarse_points": int,
    "q_realizations": int,
    "bins": int,
    "nodes": int,
    "mode_count": int,
    "workers": int,
    "observable": str,
    "model": str,
    "grid": _floats_csv,
    "xi_grid": _grid_spec,
    "l_grid": _grid_spec,
    "mu_l_grid": _grid_spec,
    "s_l_grid": _grid_spec,
    "svg": _bool_flag,
}


def _out_dir(args: argparse.Namespace) -> str:
    out = getattr(args, "out", None) or os.environ.get(OUTPUT_DIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _set_workers(count: int | None) -> None:
    if count is None:
        return
    check_count(count, "workers", minimum=1)
    import numba

    # results are partition-invariant, so clamping to the host's thread
    # ceiling never changes outputs, only scheduling
    numba.set_num_threads(min(count, numba.config.NUMBA_NUM_THREADS))


def _stack_spec(merged: dict) -> StackSpec:
    return StackSpec.from_config_dict({k: merged[k] for k in CONFIG_KEYS})


def _manifest_payload(subcommand: str, merged: dict, **extra) -> dict:
    """Worker count is scheduling, not configuration: outputs never depend
    on it, so it stays out of the manifest to keep reruns byte-identical."""
    doc = {
        k: (list(v) if isinstance(v, tuple) else v)
        for k, v in merged.items()
        if k != "workers"
    }
    doc["subcommand"] = subcommand
    doc.update(extra)
    return doc


_STACK_DEFAULTS = {k: getattr(StackSpec(), k) for k in CONFIG_KEYS}


def _add_stack_flags(sub: argparse.ArgumentParser) -> None:
    for key in CONFIG_KEYS:
        sub.add_argument(
            "--" + key.replace("_", "-"), dest=key, type=float, default=None
        )


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default=None, help="key = value file")
    sub.add_argument("--out", default=None, help=f"output dir (or ${OUTPUT_DIR_ENV})")
    sub.add_argument("--workers", type=int, default=None)
    sub.add_argument("--seed", dest="master_seed", type=int, default=None)


# ---------------------------------------------------------------------------
# simulate


def _cmd_simulate(args: argparse.Namespace) -> int:
    defaults = {
        **_STACK_DEFAULTS,
        "realizations": 10,
        "master_seed": 0,
        "lambda_min_nm": 940.0,
        "lambda_max_nm": 960.0,
        "points": 256,
        "observable": "lnt",
        "workers": None,
    }
    merged = _merge_config(args, defaults)
    _set_workers(merged["workers"])
    if merged["observable"] not in ("lnt", "ldos"):
        raise ParameterDomainError(
            f"observable must be lnt or ldos, got {merged['observable']!r}"
        )
    check_count(merged["realizations"], "realizations", minimum=1)
    spec = _stack_spec(merged)
    ens = EnsembleSpec(spec, merged["realizations"], merged["master_seed"])
    grid = np.linspace(
        merged["lambda_min_nm"], merged["lambda_max_nm"], merged["points"]
    )
    out = _out_dir(args)
    for r in range(ens.realization_count):
        stack = ensemble_stack(ens, r)
        if merged["observable"] == "lnt":
            values = ln_transmission_scan(stack, grid)
            kind = "transmission"
        else:
            mid = 0.5 * spec.sample_length_um
            values = np.array([ldos_at(stack, mid, float(w)) for w in grid])
            kind = "ldos"
        scan = SpectrumScan(grid, values, kind=kind)
        write_spectrum_csv(os.path.join(out, f"scan_{r:04d}.csv"), scan)
    save_manifest(
        os.path.join(out, "manifest.json"), _manifest_payload("simulate", merged)
    )
    return 0


# ---------------------------------------------------------------------------
# calibrate


def _cmd_calibrate(args: argparse.Namespace) -> int:
    defaults = {
        **_STACK_DEFAULTS,
        "grid": (0.03, 0.06, 0.12, 0.24),
        "realizations": 1000,
        "q_realizations": 120,
        "master_seed": 0,
        "wavelength_nm": 950.0,
        "lambda_min_nm": 940.0,
        "lambda_max_nm": 960.0,
        "coarse_points": 512,
        "workers": None,
    }
    merged = _merge_config(args, defaults)
    _set_workers(merged["workers"])
    cal = run_calibration(
        spec=_stack_spec(merged),
        xi_over_l_grid=merged["grid"],
        realizations=merged["realizations"],
        q_realizations=merged["q_realizations"],
        master_seed=merged["master_seed"],
        wavelength_nm=merged["wavelength_nm"],
        lambda_range_nm=(merged["lambda_min_nm"], merged["lambda_max_nm"]),
        coarse_points=merged["coarse_points"],
    )
    out = _out_dir(args)
    save_calibration(os.path.join(out, "calibration.json"), cal)
    save_manifest(
        os.path.join(out, "manifest.json"), _manifest_payload("calibrate", merged)
    )
    return 0


# ---------------------------------------------------------------------------
# extract


def _cmd_extract(args: argparse.Namespace) -> int:
    defaults = {
        "irf_fwhm_nm": None,
        "prominence": 0.05,
        "lambda_tol": 0.5,
        "z_link_um": 1.0,
        "delta_label": math.nan,
        "sample_length_um": math.nan,
        "workers": None,
    }
    merged = _merge_config(args, defaults)
    _set_workers(merged["workers"])
    spectra: list[PositionedSpectrum] = []
    for path in args.inputs:
        spectra.extend(read_positioned_csv(path, merged["irf_fwhm_nm"]))
    extractor = ResonanceExtractor(
        prominence=merged["prominence"],
        lambda_tol=merged["lambda_tol"],
        z_link_um=merged["z_link_um"],
        irf_fwhm_nm=merged["irf_fwhm_nm"],
        delta_label=merged["delta_label"],
        sample_length_um=merged["sample_length_um"],
    )
    dataset = extractor.fit(spectra).transform(spectra)
    out = _out_dir(args)
    save_qdataset(os.path.join(out, "qdataset.json"), dataset)
    write_modes_csv(os.path.join(out, "modes.csv"), extractor.modes_)
    save_manifest(
        os.path.join(out, "manifest.json"),
        _manifest_payload(
            "extract",
            merged,
            inputs=list(args.inputs),
            mode_count=len(extractor.modes_),
            resonance_count=len(extractor.resonances_),
            excluded_resolution_limited=extractor.excluded_count_,
        ),
    )
    return 0


# ---------------------------------------------------------------------------
# infer


def _cmd_infer(args: argparse.Namespace) -> int:
    defaults = {
        "model": "single",
        "xi_grid": None,
        "l_grid": None,
        "mu_l_grid": None,
        "s_l_grid": None,
        "sample_length_um": None,
        "nodes": 128,
        "workers": None,
    }
    merged = _merge_config(args, defaults)
    _set_workers(merged["workers"])
    dataset = load_qdataset(args.dataset)
    cal = load_calibration(args.calibration)

    def geom(spec):
        return None if spec is None else np.geomspace(spec[0], spec[1], spec[2])

    mu_l_grid = None
    if merged["mu_l_grid"] is not None:
        lo, hi, count = merged["mu_l_grid"]
        mu_l_grid = np.linspace(math.log(lo), math.log(hi), count)
    post = posterior(
        dataset,
        cal,
        model=merged["model"],
        xi_grid_um=geom(merged["xi_grid"]),
        l_grid_um=geom(merged["l_grid"]),
        mu_l_grid=mu_l_grid,
        s_l_grid=geom(merged["s_l_grid"]),
        sample_length_um=merged["sample_length_um"],
        nodes=merged["nodes"],
    )
    estimate = map_estimate(post)
    out = _out_dir(args)
    save_posterior(os.path.join(out, "posterior.json"), post)
    write_posterior_slices(os.path.join(out, "posterior_slices.csv"), post)
    line = map_summary_line(estimate)
    with open(os.path.join(out, "map.json"), "w", encoding="utf-8") as fh:
        fh.write(line + "\n")
    if estimate.variant == "distributed":
        write_loss_distribution_csv(
            os.path.join(out, "loss_distribution.csv"),
            estimate.mu_l,
            estimate.s_l,
        )
    print(line)
    save_manifest(
        os.path.join(out, "manifest.json"),
        _manifest_payload(
            "infer", merged, dataset=args.dataset, calibration=args.calibration
        ),
    )
    return 0


# ---------------------------------------------------------------------------
# intensity


def _cmd_intensity(args: argparse.Namespace) -> int:
    defaults = {
        **_STACK_DEFAULTS,
        "realizations": 8,
        "master_seed": 0,
        "lambda_min_nm": 940.0,
        "lambda_max_nm": 960.0,
        "wavelength_points": 64,
        "z_step_um": 0.3,
        "bins": 60,
        "svg": False,
        "workers": None,
    }
    # the stack is derived from the inferred parameters unless overridden
    for key in ("mean_index", "delta_n", "loss_length_um", "sample_length_um"):
        defaults[key] = None
    merged = _merge_config(args, defaults)
    _set_workers(merged["workers"])
    cal = load_calibration(args.calibration)
    with open(args.map, "r", encoding="utf-8") as fh:
        map_doc = json.loads(fh.readline())
    xi_um = float(map_doc["xi_um"])
    loss_um = (
        merged["loss_length_um"]
        if merged["loss_length_um"] is not None
        else float(map_doc["mean_loss_um"])
    )
    length = (
        merged["sample_length_um"]
        if merged["sample_length_um"] is not None
        else cal.reference.sample_length_um
    )
    delta_n = (
        merged["delta_n"]
        if merged["delta_n"] is not None
        else float(cal.dn_at(xi_um / length))
    )
    mean_index = (
        merged["mean_index"]
        if merged["mean_index"] is not None
        else cal.reference.mean_index
    )
    spec = replace(
        cal.reference,
        mean_index=mean_index,
        delta_n=delta_n,
        loss_length_um=loss_um,
        sample_length_um=length,
        layer_thickness_nm=merged["layer_thickness_nm"],
        surround_index=merged["surround_index"],
    )
    ens = EnsembleSpec(spec, merged["realizations"], merged["master_seed"])
    lam = (merged["lambda_min_nm"], merged["lambda_max_nm"])
    z = np.arange(merged["z_step_um"], length, merged["z_step_um"])
    hists = [
        fluctuation_histogram(
            ens, lam, z, kind=kind,
            wavelength_points=merged["wavelength_points"],
            bins=merged["bins"],
        )
        for kind in ("intensity", "ldos")
    ]
    out = _out_dir(args)
    write_histogram_csv(os.path.join(out, "intensity_hist.csv"), hists[0])
    write_histogram_csv(os.path.join(out, "ldos_hist.csv"), hists[1])
    write_survival_csv(os.path.join(out, "survival.csv"), hists)
    if merged["svg"]:
        svg_histograms(os.path.join(out, "fluctuations.svg"), hists)
    save_manifest(
        os.path.join(out, "manifest.json"),
        _manifest_payload(
            "intensity",
            merged,
            map=args.map,
            calibration=args.calibration,
            derived_delta_n=delta_n,
            derived_loss_length_um=loss_um,
        ),
    )
    return 0


# ---------------------------------------------------------------------------
# synth


def _cmd_synth(args: argparse.Namespace) -> int:
    defaults = {
        "mode_count": 20,
        "q_min": 200.0,
        "q_max": 10000.0,
        "master_seed": 0,
        "lambda_min_nm": 940.0,
        "lambda_max_nm": 960.0,
        "points": 0,  # 0 = choose from the narrowest synthetic line
        "sample_length_um": 20.0,
        "z_step_um": 1.0,
        "noise_rms": 0.05,
        "irf_fwhm_nm": 0.05,
        "workers": None,
    }
    merged = _merge_config(args, defaults)
    _set_workers(merged["workers"])
    check_count(merged["mode_count"], "mode_count", minimum=1)
    rng = np.random.default_rng(merged["master_seed"])
    lam_lo, lam_hi = merged["lambda_min_nm"], merged["lambda_max_nm"]
    length = merged["sample_length_um"]
    centers = rng.uniform(lam_lo + 1.0, lam_hi - 1.0, merged["mode_count"])
    qs = np.exp(
        rng.uniform(
            math.log(merged["q_min"]), math.log(merged["q_max"]),
            merged["mode_count"],
        )
    )
    amplitudes = np.exp(rng.uniform(math.log(0.5), math.log(2.0), merged["mode_count"]))
    z_homes = rng.uniform(0.0, length, merged["mode_count"])
    extents = rng.uniform(1.0, 5.0, merged["mode_count"])
    modes = [
        SyntheticMode(
            center_nm=float(c), fwhm_nm=float(c / q), amplitude=float(a),
            z_um=float(z), extent_um=float(e),
        )
        for c, q, a, z, e in zip(centers, qs, amplitudes, z_homes, extents)
    ]
    points = merged["points"]
    if points == 0:
        narrowest = min(m.fwhm_nm for m in modes)
        points = int(math.ceil((lam_hi - lam_lo) / (narrowest / 5.0))) + 1
    grid = np.linspace(lam_lo, lam_hi, points)
    positions = np.arange(0.0, length + 1e-9, merged["z_step_um"])
    spectra = [
        synth_spectrum(
            modes, float(p), merged["noise_rms"], merged["irf_fwhm_nm"],
            grid, seed=merged["master_seed"] + 1000 + i,
        )
        for i, p in enumerate(positions)
    ]
    out = _out_dir(args)
    write_positioned_csv(os.path.join(out, "scans.csv"), spectra)
    truth = {
        "format": "xiloss-synth-truth/1",
        "irf_fwhm_nm": merged["irf_fwhm_nm"],
        "noise_rms": merged["noise_rms"],
        "modes": [
            {
                "center_nm": m.center_nm,
                "fwhm_nm": m.fwhm_nm,
                "q": m.center_nm / m.fwhm_nm,
                "amplitude": m.amplitude,
                "z_um": m.z_um,
                "extent_um": m.extent_um,
            }
            for m in modes
        ],
    }
    with open(os.path.join(out, "truth.json"), "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_manifest(
        os.path.join(out, "manifest.json"), _manifest_payload("synth", merged)
    )
    return 0


# ---------------------------------------------------------------------------
# parser wiring


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xiloss",
        description="1D disordered-stack simulation and Q-statistics inversion",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate", help="ensemble transmission or LDOS scans")
    _add_common(p)
    _add_stack_flags(p)
    p.add_argument("--realizations", type=int, default=None)
    p.add_argument("--lambda-min-nm", dest="lambda_min_nm", type=float, default=None)
    p.add_argument("--lambda-max-nm", dest="lambda_max_nm", type=float, default=None)
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--observable", choices=("lnt", "ldos"), default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("calibrate", help="fit the three dimensionless power laws")
    _add_common(p)
    _add_stack_flags(p)
    p.add_argument("--grid", type=_floats_csv, default=None,
                   help="xi/L grid, comma-separated, >= 4 points")
    p.add_argument("--realizations", type=int, default=None)
    p.add_argument("--q-realizations", dest="q_realizations", type=int, default=None)
    p.add_argument("--wavelength-nm", dest="wavelength_nm", type=float, default=None)
    p.add_argument("--lambda-min-nm", dest="lambda_min_nm", type=float, default=None)
    p.add_argument("--lambda-max-nm", dest="lambda_max_nm", type=float, default=None)
    p.add_argument("--coarse-points", dest="coarse_points", type=int, default=None)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("extract", help="positioned scans to a deduplicated Q dataset")
    _add_common(p)
    p.add_argument("inputs", nargs="+", help="positioned spectra CSV files")
    p.add_argument("--irf-fwhm-nm", dest="irf_fwhm_nm", type=float, default=None)
    p.add_argument("--prominence", type=float, default=None)
    p.add_argument("--lambda-tol", dest="lambda_tol", type=float, default=None)
    p.add_argument("--z-link-um", dest="z_link_um", type=float, default=None)
    p.add_argument("--delta-label", dest="delta_label", type=float, default=None)
    p.add_argument("--sample-length-um", dest="sample_length_um", type=float,
                   default=None)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("infer", help="posterior and MAP from a Q dataset")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--model", choices=("single", "distributed"), default=None)
    p.add_argument("--xi-grid", dest="xi_grid", type=_grid_spec, default=None,
                   help="low,high,count (geometric)")
    p.add_argument("--l-grid", dest="l_grid", type=_grid_spec, default=None)
    p.add_argument("--mu-l-grid", dest="mu_l_grid", type=_grid_spec, default=None,
                   help="low,high,count in um; spaced uniformly in ln l")
    p.add_argument("--s-l-grid", dest="s_l_grid", type=_grid_spec, default=None)
    p.add_argument("--sample-length-um", dest="sample_length_um", type=float,
                   default=None)
    p.add_argument("--nodes", type=int, default=None)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser(
        "intensity", help="fluctuation histograms from inferred parameters"
    )
    _add_common(p)
    p.add_argument("--map", required=True, help="MAP JSON line from infer")
    p.add_argument("--calibration", required=True)
    _add_stack_flags(p)
    p.add_argument("--realizations", type=int, default=None)
    p.add_argument("--lambda-min-nm", dest="lambda_min_nm", type=float, default=None)
    p.add_argument("--lambda-max-nm", dest="lambda_max_nm", type=float, default=None)
    p.add_argument("--wavelength-points", dest="wavelength_points", type=int,
                   default=None)
    p.add_argument("--z-step-um", dest="z_step_um", type=float, default=None)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--svg", action="store_true", default=None)
    p.set_defaults(func=_cmd_intensity)

    p = sub.add_parser("synth", help="synthetic positioned scans with known modes")
    _add_common(p)
    p.add_argument("--mode-count", dest="mode_count", type=int, default=None)
    p.add_argument("--q-min", dest="q_min", type=float, default=None)
    p.add_argument("--q-max", dest="q_max", type=float, default=None)
    p.add_argument("--lambda-min-nm", dest="lambda_min_nm", type=float, default=None)
    p.add_argument("--lambda-max-nm", dest="lambda_max_nm", type=float, default=None)
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--sample-length-um", dest="sample_length_um", type=float,
                   default=None)
    p.add_argument("--z-step-um", dest="z_step_um", type=float, default=None)
    p.add_argument("--noise-rms", dest="noise_rms", type=float, default=None)
    p.add_argument("--irf-fwhm-nm", dest="irf_fwhm_nm", type=float, default=None)
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except XilossError as exc:
        payload = {
            "error": type(exc).__name__,
            "message": str(exc),
            "exit_code": exc.exit_code,
        }
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": 3}
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
