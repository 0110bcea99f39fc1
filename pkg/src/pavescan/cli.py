"""Command-line front end: ``pavescan <subcommand> ...``.

Exit status: 0 on success, 1 on a processing error (message on stderr,
prefixed by the failing stage), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path
from types import SimpleNamespace
from typing import List, Optional, Sequence

import numpy as np

from . import __version__, analyze
from .core import ColorImage
from .dataio import SynthSpec, generate_synthetic, preset, read_dataset, read_manifest, write_dataset
from .dataio.dataset import MANIFEST_NAME, DatasetManifest
from .dataio.netpbm import encode_ppm
from .errors import PavementError
from .pipeline import PipelineConfig, PipelineResult, measure, profile_stations, run_pipeline, stitch_frames, world_frame
from .stitch import export_ply, read_elevation, write_elevation

log = logging.getLogger("pavescan")

STITCH_FIELDS = ("roi_fraction_x", "roi_fraction_y", "smooth_sigma", "smooth_radius", "plane_trim",
                 "hessian_threshold", "octaves", "upright", "ratio_threshold", "msac_threshold",
                 "msac_confidence", "msac_max_iterations", "msac_seed", "transform",
                 "symmetric_residual", "min_inliers", "composite", "gsd", "threads")
PROFILE_FIELDS = ("straightedge", "stations")
MEASURE_FIELDS = ("depth_threshold", "min_area")
ALL_FIELDS = STITCH_FIELDS + PROFILE_FIELDS + MEASURE_FIELDS


class StageError(Exception):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def add_config_flags(p: argparse.ArgumentParser, names: Sequence[str]) -> None:
    """One flag per PipelineConfig field; defaults and help come from the dataclass."""
    defaults = PipelineConfig()
    for f in dataclasses.fields(PipelineConfig):
        if f.name not in names:
            continue
        default = getattr(defaults, f.name)
        help_ = f"{f.metadata['help']} (default: {default})"
        if isinstance(default, bool):
            # BooleanOptionalAction appends the default itself
            p.add_argument(_flag(f.name), dest=f.name, action=argparse.BooleanOptionalAction,
                           default=default, help=f.metadata["help"])
            continue
        typ = {"int": int, "float": float, "str": str, "Optional[float]": float}[str(f.type)]
        p.add_argument(_flag(f.name), dest=f.name, type=typ, default=default,
                       choices=f.metadata.get("choices"), help=help_)


def config_from_args(args) -> PipelineConfig:
    kw = {f.name: getattr(args, f.name) for f in dataclasses.fields(PipelineConfig) if hasattr(args, f.name)}
    return PipelineConfig(**kw)


def _synth_flags(p: argparse.ArgumentParser) -> None:
    base = SynthSpec()
    for f in dataclasses.fields(SynthSpec):
        if f.name in ("defects",):
            continue
        default = getattr(base, f.name)
        if f.name == "tilt":
            p.add_argument("--tilt", nargs=2, type=float, metavar=("SX", "SY"), default=None,
                           help=f"pavement grade (lateral, longitudinal) (default: {list(default)})")
            continue
        typ = type(default)
        kw = {"choices": ("x", "y")} if f.name == "travel_axis" else {}
        p.add_argument(_flag(f.name), dest=f.name, type=typ, default=None,
                       help=f"(default: {default})", **kw)


def file_digests(paths: Sequence[Path], root: Optional[Path] = None) -> dict:
    out = {}
    for p in paths:
        key = str(p.relative_to(root)) if root else p.name
        out[key] = hashlib.sha256(Path(p).read_bytes()).hexdigest()
    return dict(sorted(out.items()))


def dataset_digests(root: Path, manifest: DatasetManifest) -> dict:
    files = [root / MANIFEST_NAME]
    for e in manifest.frames:
        files += [root / e.color, root / e.depth]
    return file_digests(files, root)


def _write(path: Path, text: str) -> None:
    analyze.write_text(path, text)


def _num(x):
    return None if x is None else float(x)


def _mosaic_meta(m) -> dict:
    return {"width": m.width, "height": m.height, "gsd_mm": m.gsd,
            "origin_px": list(m.origin), "travel_axis": m.travel_axis}


def _rut_entries(profiles, ruts) -> List[dict]:
    return [{"station_m": p.station, "depth_mm": r.depth, "offset_at_max_m": r.offset_at_max,
             "straightedge": r.straightedge_span, "samples": len(p), "split": p.split}
            for p, r in zip(profiles, ruts)]


def _write_profiles(out: Path, result_profiles, result_ruts) -> None:
    pdir = out / "profiles"
    pdir.mkdir(parents=True, exist_ok=True)
    for p, r in zip(result_profiles, result_ruts):
        stem = f"station_{p.station:09.3f}m"
        _write(pdir / f"{stem}.csv", analyze.profile_csv(p))
        _write(pdir / f"{stem}.svg", analyze.profile_svg(p, r))


def _figures(out: Path):
    from . import plotting  # matplotlib is imported only when figures are requested

    fdir = out / "figures"
    fdir.mkdir(parents=True, exist_ok=True)
    return plotting, fdir


def _stitch_outputs(out: Path, result: PipelineResult, figures: bool) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    (out / "mosaic_color.ppm").write_bytes(encode_ppm(result.color_mosaic.pixels))
    write_elevation(result.mosaic, out / "mosaic.elev")
    color = result.color_mosaic
    export_ply(result.mosaic, out / "mosaic.ply",
               color if color.pixels.shape[:2] == result.mosaic.elevation.shape else None)
    if figures:
        plotting, fdir = _figures(out)
        plotting.plot_color_mosaic(result.color_mosaic, fdir / "mosaic_color.png")
        plotting.plot_elevation(result.mosaic, fdir / "elevation.png")
    pairs = []
    for (a, b), est in sorted(result.graph.pairs.items()):
        pairs.append({"frames": [a, b], "inliers": est.inlier_count, "score": est.score,
                      "iterations": est.iterations_run,
                      "matrix": [[float(v) for v in row] for row in est.model.matrix]})
    return {"mosaic": _mosaic_meta(result.mosaic), "pairs": pairs,
            "reference_height_mm": [p.leveling.reference_height for p in result.prepared]}


def cmd_synth(args) -> int:
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(SynthSpec)
                 if getattr(args, f.name, None) is not None}
    if "tilt" in overrides:
        overrides["tilt"] = tuple(overrides["tilt"])
    try:
        if args.preset:
            seed = overrides.pop("seed", 0)
            spec = preset(args.preset, seed, **overrides)
        else:
            spec = SynthSpec(**overrides)
        manifest, frames = generate_synthetic(spec)
    except PavementError as exc:
        raise StageError("synth", exc) from exc
    try:
        write_dataset(manifest, frames, args.out)
    except PavementError as exc:
        raise StageError("write", exc) from exc
    log.info("wrote %d frames to %s", len(frames), args.out)
    return 0


def _load(root) -> tuple:
    try:
        return read_dataset(root)
    except PavementError as exc:
        raise StageError("read", exc) from exc


def cmd_stitch(args) -> int:
    cfg = config_from_args(args)
    root = Path(args.dataset)
    manifest, frames = _load(root)
    try:
        result = stitch_frames(manifest, frames, cfg)
    except PavementError as exc:
        raise StageError("stitch", exc) from exc
    out = Path(args.out)
    report = _stitch_outputs(out, result, args.figures)
    report.update(config=cfg.to_dict(), inputs=dataset_digests(root, manifest), version=__version__)
    _write(out / "stitch_report.json", analyze.dumps_report(report))
    return 0


def _read_mosaic(path):
    try:
        return read_elevation(path)
    except OSError as exc:
        raise StageError("read", PavementError(f"cannot read {path}: {exc}")) from exc
    except PavementError as exc:
        raise StageError("read", exc) from exc


def cmd_profile(args) -> int:
    cfg = config_from_args(args)
    mosaic = _read_mosaic(args.mosaic)
    fake = PipelineResult(cfg, [], None, [], None, mosaic)
    try:
        profile_stations(fake, args.at)
    except PavementError as exc:
        raise StageError("profile", exc) from exc
    if args.at and not fake.profiles:
        raise StageError("profile", PavementError("no requested station could be profiled"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_profiles(out, fake.profiles, fake.ruts)
    if args.figures:
        plotting, fdir = _figures(out)
        plotting.plot_profiles(fake.profiles, fake.ruts, fdir / "profiles.png")
    report = {"ruts": _rut_entries(fake.profiles, fake.ruts), "rut_depth_mm": _num(fake.rut_depth),
              "config": cfg.to_dict(), "inputs": file_digests([Path(args.mosaic)]),
              "mosaic": _mosaic_meta(mosaic), "version": __version__}
    _write(out / "profile_report.json", analyze.dumps_report(report))
    return 0


def cmd_measure(args) -> int:
    cfg = config_from_args(args)
    mosaic = _read_mosaic(args.mosaic)
    try:
        defects = analyze.detect_defects(mosaic, cfg.depth_threshold, cfg.min_area)
    except PavementError as exc:
        raise StageError("measure", exc) from exc
    report = {"defects": [d.to_dict() for d in defects], "mosaic": _mosaic_meta(mosaic),
              "config": cfg.to_dict(), "inputs": file_digests([Path(args.mosaic)]),
              "version": __version__}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write(out, analyze.dumps_report(report))
    if args.figures:
        from . import plotting

        plotting.plot_elevation(mosaic, out.with_suffix(".png"), defects)
    return 0


def _read_pairs(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        float(rows[0][0])
    except (ValueError, IndexError):
        rows = rows[1:]
    return np.array([[float(r[0]), float(r[1])] for r in rows])


def evaluate_defects(report: dict, manifest: DatasetManifest) -> dict:
    """MRE (and depth R^2 when >= 3 matches) of a measure report against ground truth."""
    meta = report["mosaic"]
    frame = world_frame(manifest)
    if frame is None:
        raise PavementError("manifest has no reference camera position; cannot place defects")
    geo = SimpleNamespace(gsd=meta["gsd_mm"], origin=tuple(meta["origin_px"]))
    measured = []
    for d in report["defects"]:
        m = analyze.DefectMeasurement(d["kind"], d["depth_mm"], d["width_mm"], d["length_mm"],
                                      (d["station_m"], d["offset_m"]), d["area_mm2"])
        measured.append(frame.defect_to_world(geo, m))
    truth = [g for g in manifest.ground_truth if g.kind == "pothole"]
    pots = [m for m in measured if m.kind == "pothole"]
    out = {"defects": [m.to_dict() for m in measured], "mre": None, "r2": None,
           "slope": None, "intercept": None}
    if not truth:
        log.warning("dataset has no pothole ground truth; MRE not computed")
        return out
    sc = analyze.defect_mre(pots, truth)
    out = {"defects": [m.to_dict() for m in measured],
           "mre": {"depth_pct": sc.mre_depth, "width_pct": sc.mre_width, "length_pct": sc.mre_length},
           "matched": [list(p) for p in sc.pairs], "misses": sc.misses,
           "false_positives": sc.false_positives, "r2": None, "slope": None, "intercept": None}
    if len(sc.pairs) >= 3:
        pairs = [(pots[m].depth, truth[t].depth_mm) for t, m in sc.pairs]
        try:
            st = analyze.linear_fit_r2(pairs)
            out.update(r2=st.r2, slope=st.slope, intercept=st.intercept)
        except PavementError as exc:
            log.warning("depth regression skipped: %s", exc)
    return out


def cmd_eval(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    inputs = []
    result = {}
    try:
        if args.pairs:
            pairs = _read_pairs(args.pairs)
            st = analyze.linear_fit_r2(pairs)
            result.update(r2=st.r2, slope=st.slope, intercept=st.intercept, n=len(pairs))
            inputs.append(Path(args.pairs))
            if args.figures:
                from . import plotting

                plotting.plot_fit(pairs[:, 0], pairs[:, 1], st.slope, st.intercept, st.r2,
                                  out.with_suffix(".png"))
        if args.report:
            if not args.dataset:
                raise PavementError("--report needs --dataset for ground truth")
            rep = json.loads(Path(args.report).read_text(encoding="utf-8"))
            manifest = read_manifest(args.dataset)
            ev = evaluate_defects(rep, manifest)
            if args.pairs:
                ev = {k: v for k, v in ev.items() if k not in ("r2", "slope", "intercept")}
            result.update(ev)
            inputs += [Path(args.report), Path(args.dataset) / MANIFEST_NAME]
    except (PavementError, KeyError, ValueError, OSError) as exc:
        raise StageError("eval", exc) from exc
    if not inputs:
        raise StageError("eval", PavementError("nothing to evaluate: give --report and/or --pairs"))
    result.update(inputs=file_digests(inputs), version=__version__)
    _write(out, analyze.dumps_report(result))
    return 0


def cmd_pipeline(args) -> int:
    cfg = config_from_args(args)
    root = Path(args.dataset)
    manifest, frames = _load(root)
    try:
        result = run_pipeline(manifest, frames, cfg, args.at)
    except PavementError as exc:
        raise StageError("pipeline", exc) from exc
    out = Path(args.out)
    report = _stitch_outputs(out, result, args.figures)
    _write_profiles(out, result.profiles, result.ruts)
    world = result.world_defects()
    report.update(
        config=cfg.to_dict(), inputs=dataset_digests(root, manifest), version=__version__,
        ruts=_rut_entries(result.profiles, result.ruts), rut_depth_mm=_num(result.rut_depth),
        defects=[d.to_dict() for d in world],
        defects_mosaic=[d.to_dict() for d in result.defects],
        mre=None, r2=None, slope=None, intercept=None,
    )
    sc = result.scores
    if sc is not None:
        report.update(mre={"depth_pct": sc.mre_depth, "width_pct": sc.mre_width, "length_pct": sc.mre_length},
                      matched=[list(p) for p in sc.pairs], misses=sc.misses,
                      false_positives=sc.false_positives)
        truth = [g for g in manifest.ground_truth if g.kind == "pothole"]
        pots = [d for d in world if d.kind == "pothole"]
        if len(sc.pairs) >= 3:
            try:
                st = analyze.linear_fit_r2([(pots[m].depth, truth[t].depth_mm) for t, m in sc.pairs])
                report.update(r2=st.r2, slope=st.slope, intercept=st.intercept)
            except PavementError as exc:
                log.warning("depth regression skipped: %s", exc)
    if args.figures:
        plotting, fdir = _figures(out)
        plotting.plot_elevation(result.mosaic, fdir / "defects.png", result.defects)
        plotting.plot_profiles(result.profiles, result.ruts, fdir / "profiles.png")
    _write(out / "report.json", analyze.dumps_report(report))
    print(json.dumps({"rut_depth_mm": report["rut_depth_mm"], "defects": len(world),
                      "mre": report["mre"]}, sort_keys=True))
    return 0


def cmd_info(args) -> int:
    path = Path(args.path)
    try:
        if path.is_dir():
            m = read_manifest(path)
            info = {"kind": "dataset", "frames": len(m.frames), "travel_axis": m.travel_axis,
                    "preregistered": m.preregistered,
                    "color_resolution": [m.color_intr.width, m.color_intr.height],
                    "depth_resolution": [m.depth_intr.width, m.depth_intr.height],
                    "ground_truth": len(m.ground_truth), "camera_height_mm": m.camera_height_mm}
        else:
            mo = read_elevation(path)
            data = mo.elevation[mo.count > 0]
            info = {"kind": "mosaic", **_mosaic_meta(mo), "data_pixels": int(data.size),
                    "elevation_min_mm": _num(data.min()) if data.size else None,
                    "elevation_max_mm": _num(data.max()) if data.size else None}
    except (PavementError, OSError) as exc:
        raise StageError("info", exc) from exc
    print(json.dumps(info, sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pavescan", description="RGB-D pavement survey processing")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--out", required=True, help="dataset directory to write")
    s.add_argument("--preset", choices=("flat", "rut", "potholes"), help="named scene")
    _synth_flags(s)
    s.set_defaults(func=cmd_synth)

    def figs(q):
        q.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True,
                       help="render PNG figures next to the outputs")

    s = sub.add_parser("stitch", help="dataset -> mosaics and PLY")
    s.add_argument("dataset")
    s.add_argument("--out", required=True)
    add_config_flags(s, STITCH_FIELDS)
    figs(s)
    s.set_defaults(func=cmd_stitch)

    s = sub.add_parser("profile", help="mosaic -> transverse profiles (CSV/SVG)")
    s.add_argument("mosaic", help=".elev mosaic file")
    s.add_argument("--out", required=True)
    s.add_argument("--at", nargs="+", type=float, metavar="STATION_M",
                   help="stations in metres from the first mosaic row (default: evenly spaced)")
    add_config_flags(s, PROFILE_FIELDS)
    figs(s)
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("measure", help="mosaic -> defect report")
    s.add_argument("mosaic")
    s.add_argument("--out", required=True, help="report file (JSON)")
    add_config_flags(s, MEASURE_FIELDS)
    figs(s)
    s.set_defaults(func=cmd_measure)

    s = sub.add_parser("eval", help="defect report + ground truth -> MRE / R^2")
    s.add_argument("--report", help="report written by `measure`")
    s.add_argument("--dataset", help="dataset directory holding the ground truth")
    s.add_argument("--pairs", help="CSV of estimated,truth pairs for a linear fit")
    s.add_argument("--out", required=True)
    figs(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("pipeline", help="dataset -> everything")
    s.add_argument("dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--at", nargs="+", type=float, metavar="STATION_M")
    add_config_flags(s, ALL_FIELDS)
    figs(s)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("info", help="summarize a dataset directory or .elev mosaic")
    s.add_argument("path")
    s.set_defaults(func=cmd_info)
    return p


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        if hasattr(args, "straightedge") or hasattr(args, "roi_fraction_x"):
            try:
                config_from_args(args)
            except PavementError as exc:
                parser.error(str(exc))
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except PavementError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
