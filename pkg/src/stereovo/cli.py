"""Command-line surface: the odometry pipeline plus the three experiments.

Every command resolves its inputs into a flat manifest, writes the manifest
before computing anything, and writes result files atomically, so an
interrupted run leaves the manifest but no partial outputs and any run can
be reproduced byte-for-byte with ``stereovo rerun``.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

from . import __version__
from .config import PipelineConfig, apply_flat, flatten, read_flat_config
from .errors import StereoVoError
from .evaluation import (
    Variant,
    inlier_curve,
    repeated_vo_experiment,
    tracking_score,
    variant_config,
)
from .kitti import SequenceSlice, open_sequence
from .odometry import run_sequence
from .synthetic import SyntheticSequence, corridor_scene, facing_plane_scene, load_scene, save_scene

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ESTIMATION = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(Exception):
    """Command-line usage problem; mapped to exit code 1."""


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name("." + path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_manifest(out: Path, manifest: dict[str, str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {v}" for k, v in manifest.items()]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _parse_frames(spec: str) -> tuple[int, int]:
    a, b = spec.split("..")
    return int(a), int(b)


def _load_source(manifest: dict[str, str]):
    kind = manifest["source.kind"]
    if kind == "kitti":
        handle = open_sequence(manifest["source.dataset"], manifest["source.sequence"])
    elif kind == "synthetic":
        handle = SyntheticSequence(load_scene(manifest["source.fixture"]))
    else:
        raise StereoVoError(f"unknown source kind {kind!r}")
    if "frames.start" in manifest:
        handle = SequenceSlice(handle, int(manifest["frames.start"]), int(manifest["frames.stop"]))
    return handle


def _pipeline_cfg(manifest: dict[str, str]) -> PipelineConfig:
    cfg = PipelineConfig()
    apply_flat(cfg, {k[4:]: v for k, v in manifest.items() if k.startswith("cfg.")})
    return cfg


def _base_manifest(command: str, args) -> dict[str, str]:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        apply_flat(cfg, read_flat_config(args.config))
    manifest: dict[str, str] = {
        "command": command,
        "version": __version__,
        "seed": str(args.seed),
        "threads": str(getattr(args, "threads", 1)),
    }
    if getattr(args, "dataset", None):
        manifest["source.kind"] = "kitti"
        manifest["source.dataset"] = str(Path(args.dataset).resolve())
        manifest["source.sequence"] = args.sequence
    elif getattr(args, "synthetic", None):
        manifest["source.kind"] = "synthetic"
        manifest["source.fixture"] = str(Path(args.synthetic).resolve())
    # synth reuses --frames as a count, not a slice
    if isinstance(getattr(args, "frames", None), str):
        start, stop = _parse_frames(args.frames)
        manifest["frames.start"] = str(start)
        manifest["frames.stop"] = str(stop)
    for k, v in flatten(cfg).items():
        manifest[f"cfg.{k}"] = v
    return manifest


def _require_source(args, parser) -> None:
    if not getattr(args, "dataset", None) and not getattr(args, "synthetic", None):
        parser.error("either --dataset/--sequence or --synthetic is required")
    if getattr(args, "dataset", None) and not getattr(args, "sequence", None):
        parser.error("--dataset requires --sequence")


# ---------------------------------------------------------------------------
# command implementations (operate on a resolved manifest so rerun is exact)


def run_vo(manifest: dict[str, str], out: Path) -> int:
    _write_manifest(out, manifest)
    source = _load_source(manifest)
    cfg = _pipeline_cfg(manifest)
    cfg.backend = manifest["vo.descriptor"]
    cfg.stereo_descriptor = manifest["vo.stereo_desc"] == "True"
    cfg.scale.enabled = manifest["vo.scale_norm"] == "True"
    traj, diags = run_sequence(source, source.rig, cfg, seed=int(manifest["seed"]))

    traj_text = "\n".join(" ".join(repr(float(x)) for x in p.matrix34.ravel()) for p in traj)
    _atomic_write(out / "trajectory.txt", traj_text + "\n")
    rows = [[d.frame, d.matches, d.inliers, f"{d.mean_reproj_err:.6f}", f"{d.runtime_ms:.3f}", int(d.fallback)]
            for d in diags]
    _atomic_write(out / "diagnostics.csv",
                  _csv_text(["frame", "matches", "inliers", "mean_reproj_err", "runtime_ms", "fallback"], rows))

    fallback_frac = sum(d.fallback for d in diags) / max(len(diags), 1)
    if fallback_frac > float(manifest.get("vo.max_fallback_frac", "0.5")):
        print(f"error: {fallback_frac:.0%} of frames needed the constant-velocity fallback", file=sys.stderr)
        return EXIT_ESTIMATION
    return EXIT_OK


def run_track_eval(manifest: dict[str, str], out: Path) -> int:
    _write_manifest(out, manifest)
    source = _load_source(manifest)
    base = _pipeline_cfg(manifest)
    budgets = [int(b) for b in manifest["eval.feature_budgets"].split(",")]
    backends = manifest["eval.backends"].split(",")
    t_stride = int(manifest["eval.t_stride"])
    max_step = int(manifest["eval.max_step"])
    tol = float(manifest["eval.correctness_tol"])

    rows = []
    for budget in budgets:
        base.detector.max_features = budget
        for backend in backends:
            variants = [
                Variant(f"sn-{backend}", backend=backend, scale=True),
                Variant(f"std-{backend}", backend=backend, scale=False),
            ]
            report = tracking_score(source, variants, base, t_stride=t_stride,
                                    max_step=max_step, correctness_tol=tol)
            sn = report.scores[f"sn-{backend}"]
            std = report.scores[f"std-{backend}"]
            imp = report.improvement_pct(f"sn-{backend}", f"std-{backend}") if std else float("nan")
            rows.append([budget, backend, sn, std, f"{imp:.2f}"])
    _atomic_write(out / "tracking_scores.csv",
                  _csv_text(["feature_budget", "backend", "sn_score", "standard_score", "improvement_pct"], rows))

    table = ["feature tracking scores (scale-normalized vs standard)"]
    for r in rows:
        table.append(f"  budget {r[0]:>5}  {r[1]:<9} SN {r[2]:>7}  standard {r[3]:>7}  improvement {r[4]}%")
    _atomic_write(out / "tracking_scores.txt", "\n".join(table) + "\n")
    return EXIT_OK


def run_inliers(manifest: dict[str, str], out: Path) -> int:
    _write_manifest(out, manifest)
    source = _load_source(manifest)
    base = _pipeline_cfg(manifest)
    steps = [int(s) for s in manifest["eval.steps"].split(",")]
    variants = [
        Variant("sn-stereo", backend=base.backend, scale=True, stereo=True),
        Variant("standard", backend=base.backend, scale=False, stereo=False),
    ]
    report = inlier_curve(source, variants, base, steps=steps, seed=int(manifest["seed"]))
    rows = [[step, name, f"{report.means[name][i]:.3f}"]
            for name in report.means for i, step in enumerate(report.steps)]
    _atomic_write(out / "inlier_curve.csv", _csv_text(["step", "variant", "mean_inliers"], rows))
    rec_rows = [[r.variant, r.step, r.t, r.inliers] for r in report.records]
    _atomic_write(out / "inlier_records.csv", _csv_text(["variant", "step", "t", "inliers"], rec_rows))
    return EXIT_OK


def run_repeat_vo(manifest: dict[str, str], out: Path) -> int:
    _write_manifest(out, manifest)
    source = _load_source(manifest)
    base = _pipeline_cfg(manifest)
    runs = int(manifest["eval.runs"])
    variants = [
        Variant("stereo", backend=base.backend, scale=True, stereo=True),
        Variant("standard", backend=base.backend, scale=False, stereo=False),
    ]
    run_rows = []
    summary_rows = []
    for v in variants:
        cfg = variant_config(base, v)
        report = repeated_vo_experiment(source, cfg, runs=runs, base_seed=int(manifest["seed"]))
        for i, (err, s) in enumerate(zip(report.per_run, report.seeds)):
            run_rows.append([v.name, i, s, f"{err:.6f}"])
        summary_rows.append([v.name, f"{report.best:.6f}", f"{report.mean:.6f}", f"{report.worst:.6f}"])
    _atomic_write(out / "translation_error_runs.csv",
                  _csv_text(["variant", "run", "seed", "error_pct"], run_rows))
    _atomic_write(out / "translation_error.csv",
                  _csv_text(["variant", "best_pct", "mean_pct", "worst_pct"], summary_rows))
    return EXIT_OK


def run_synth(manifest: dict[str, str], out: Path) -> int:
    _write_manifest(out, manifest)
    preset = manifest["synth.preset"]
    n = int(manifest["synth.frames"])
    seed = int(manifest["seed"])
    if preset == "corridor":
        scene = corridor_scene(n_frames=n, seed=seed)
    elif preset == "plane":
        scene = facing_plane_scene(depths=[10.0] * n, seed=seed)
    else:
        raise StereoVoError(f"unknown synth preset {preset!r}")
    tmp = out / "scene.txt"
    save_scene(scene, tmp.with_name("." + tmp.name + ".tmp"))
    os.replace(tmp.with_name("." + tmp.name + ".tmp"), tmp)
    return EXIT_OK


_RUNNERS = {
    "vo": run_vo,
    "track-eval": run_track_eval,
    "inliers": run_inliers,
    "repeat-vo": run_repeat_vo,
    "synth": run_synth,
}


def _read_manifest(path: Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in path.read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------------------
# argument wiring


def _add_common(p: argparse.ArgumentParser, source: bool = True) -> None:
    p.add_argument("--config", help="flat key=value pipeline config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap; results are identical for any value")
    p.add_argument("--out", required=True, help="output directory")
    if source:
        p.add_argument("--dataset", help="KITTI odometry dataset root")
        p.add_argument("--sequence", help="sequence id, e.g. 00")
        p.add_argument("--synthetic", help="synthetic scene fixture file")
        p.add_argument("--frames", help="frame slice start..stop (half-open)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stereovo", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vo", help="run the odometry pipeline, write a trajectory")
    _add_common(p)
    p.add_argument("--descriptor", choices=["retina", "gradhist"], default="retina")
    p.add_argument("--stereo-desc", action="store_true")
    p.add_argument("--scale-norm", dest="scale_norm", action="store_true", default=True)
    p.add_argument("--no-scale-norm", dest="scale_norm", action="store_false")
    p.add_argument("--max-fallback-frac", type=float, default=0.5)

    p = sub.add_parser("track-eval", help="multi-step tracking-score experiment")
    _add_common(p)
    p.add_argument("--feature-budget", default="1350", help="comma-separated detector budgets")
    p.add_argument("--backends", default="retina", help="comma-separated: retina,gradhist")
    p.add_argument("--t-stride", type=int, default=10)
    p.add_argument("--max-step", type=int, default=10)
    p.add_argument("--correctness-tol", type=float, default=2.0)

    p = sub.add_parser("inliers", help="multi-step inlier-count experiment")
    _add_common(p)
    p.add_argument("--steps", default="1,2,3,4,5")

    p = sub.add_parser("repeat-vo", help="repeated seeded runs, translation error")
    _add_common(p)
    p.add_argument("--runs", type=int, default=20)

    p = sub.add_parser("synth", help="generate a synthetic scene fixture")
    _add_common(p, source=False)
    p.add_argument("--preset", choices=["corridor", "plane"], default="corridor")
    p.add_argument("--frames", type=int, default=20)

    p = sub.add_parser("rerun", help="re-execute a command from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --version / --help
        return int(e.code or 0)

    try:
        if args.command == "rerun":
            manifest = _read_manifest(Path(args.manifest))
            runner = _RUNNERS[manifest["command"]]
            return runner(manifest, Path(args.out))

        if args.command == "synth":
            manifest = _base_manifest("synth", args)
            manifest["synth.preset"] = args.preset
            manifest["synth.frames"] = str(args.frames)
            return run_synth(manifest, Path(args.out))

        _require_source(args, parser)
        manifest = _base_manifest(args.command, args)
        if args.command == "vo":
            manifest["vo.descriptor"] = args.descriptor
            manifest["vo.stereo_desc"] = str(args.stereo_desc)
            manifest["vo.scale_norm"] = str(args.scale_norm)
            manifest["vo.max_fallback_frac"] = str(args.max_fallback_frac)
        elif args.command == "track-eval":
            manifest["eval.feature_budgets"] = args.feature_budget
            manifest["eval.backends"] = args.backends
            manifest["eval.t_stride"] = str(args.t_stride)
            manifest["eval.max_step"] = str(args.max_step)
            manifest["eval.correctness_tol"] = str(args.correctness_tol)
        elif args.command == "inliers":
            manifest["eval.steps"] = args.steps
        elif args.command == "repeat-vo":
            manifest["eval.runs"] = str(args.runs)
        return _RUNNERS[args.command](manifest, Path(args.out))
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (StereoVoError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
