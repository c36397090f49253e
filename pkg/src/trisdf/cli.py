"""Command-line entry point: ``trisdf {synth,fit,mesh,eval,render}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats as fm
from .fitting import CURVE_COLUMNS, FitConfig, FitError, fit_scene, render_view
from .formats import InputError
from .meshing import extract_mesh
from .metrics import evaluate_meshes
from .renderer import SamplerConfig
from .scenes import BUILTIN_SCENES, SceneSpec, synthesize

log = logging.getLogger("trisdf")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _config(args) -> dict:
    return {} if args.config is None else fm.read_json(args.config, "config")


def _merge_options(args, defaults: dict, keys: tuple) -> dict:
    """Config-file values for ``keys``, overridden by explicitly given flags."""
    cfg = _config(args)
    unknown = set(cfg) - set(keys) - {"version"}
    if unknown:
        raise InputError(f"unknown config keys for '{args.command}': {sorted(unknown)}")
    out = {**defaults, **{k: cfg[k] for k in keys if k in cfg}}
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _render_sampler(fit_cfg: dict) -> SamplerConfig:
    s = dict(fit_cfg.get("sampler", {}))
    s["jitter"] = False
    return SamplerConfig(t_near=0.0, t_far=1.0, **s)


def _write_render(color, depth, png, depth_path=None):
    fm.write_png(png, color)
    if depth_path is not None:
        fm.write_depth_pgm(depth_path, depth)


# --- subcommands ------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.config is not None:
        spec_d = _config(args)
    else:
        spec_d = dict(BUILTIN_SCENES[args.scene])
    spec_d.pop("version", None)
    if args.views is not None:
        spec_d["orbit"] = {**spec_d.get("orbit", {}), "count": args.views}
    if args.size is not None:
        spec_d["image_size"] = args.size
    if args.gt_res is not None:
        spec_d["gt_mesh_res"] = args.gt_res
    try:
        spec = SceneSpec.from_dict(spec_d)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid scene spec: {exc}") from exc
    manifest = synthesize(spec, args.out, args.seed)
    log.info("synth: wrote %d views, seed %d -> %s", spec.orbit_spec().count, args.seed, manifest)
    return EXIT_OK


def _manifest_path(p) -> Path:
    p = Path(p)
    return p / "manifest.json" if p.is_dir() or p.suffix != ".json" else p


def cmd_fit(args) -> int:
    manifest = _manifest_path(args.dataset)
    if not manifest.is_file():
        raise InputError(f"manifest not found: {manifest}")
    cfg_d = _config(args)
    if args.seed is not None:
        cfg_d["seed"] = args.seed
    try:
        cfg = FitConfig.from_dict(cfg_d)
        cfg.model_config()
        cfg.sampler_config()
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid fit config: {exc}") from exc
    ds = fm.load_dataset(manifest)
    out = Path(args.out)
    fm.write_json(out / "fit_config.json", {"version": fm.FORMAT_VERSION, **cfg.to_dict()})
    extra = {"seed": cfg.seed, "fit_config": cfg.to_dict()}
    every = max(1, args.checkpoint_every)
    saved = {"block": 0}

    def on_log(state, res):
        # called at logged iterations; save once per crossed --checkpoint-every block
        block = state.iteration // every
        if block > saved["block"] and state.iteration < cfg.total_iters:
            saved["block"] = block
            fm.save_checkpoint(out / "checkpoint.json", state.model, state.iteration, extra)
            fm.write_curves_csv(out / "loss.csv", state.curves, CURVE_COLUMNS)

    log.info("fit: %d iterations (warm-up %d), seed %d", cfg.total_iters, cfg.warmup_iters, cfg.seed)
    state = fit_scene(ds, cfg, callback=on_log)
    digest = fm.save_checkpoint(out / "checkpoint.json", state.model, state.iteration, extra)
    fm.write_curves_csv(out / "loss.csv", state.curves, CURVE_COLUMNS)
    from .plotting import plot_loss_curves

    plot_loss_curves(state.curves, out / "loss.png", cfg.warmup_iters)
    color, depth, _ = render_view(state.model, ds.cameras[0], _render_sampler(cfg.to_dict()), cfg.seed)
    _write_render(color, depth, out / "validation_view000.png", out / "validation_view000_depth.pgm")
    print(f"checkpoint {out / 'checkpoint.json'} sha256 {digest}")
    return EXIT_OK


def cmd_mesh(args) -> int:
    opts = _merge_options(args, {"res": 256}, ("res",))
    if int(opts["res"]) < 2:
        raise InputError("--res must be >= 2")
    out = Path(args.out)
    fm._mesh_kind(out)
    model, _ = fm.load_checkpoint(args.checkpoint)
    mesh = extract_mesh(model, int(opts["res"]))
    if mesh.is_empty:
        print(f"warning: zero level set is empty at res {opts['res']}; writing an empty mesh",
              file=sys.stderr)
    fm.write_mesh(out, mesh)
    log.info("mesh: %d vertices, %d faces -> %s", len(mesh.vertices), len(mesh.faces), out)
    return EXIT_OK


def cmd_eval(args) -> int:
    opts = _merge_options(args, {"n": 20000, "repeats": 20, "emd_subsample": 1024, "seed": 0},
                          ("n", "repeats", "emd_subsample", "seed"))
    if opts["n"] < 1 or opts["repeats"] < 1 or opts["emd_subsample"] < 1:
        raise InputError("--n, --repeats and --emd-subsample must be >= 1")
    gt, pred = fm.read_mesh(args.gt), fm.read_mesh(args.pred)
    try:
        report = evaluate_meshes(gt, pred, int(opts["n"]), int(opts["repeats"]), int(opts["seed"]),
                                 int(opts["emd_subsample"]))
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(report.csv_header())
    w.writerow(report.csv_row())
    if args.out is None:
        sys.stdout.write(report.to_json() + "\n")
        return EXIT_OK
    out = Path(args.out)
    fm.atomic_write_text(out, report.to_json() + "\n")
    fm.atomic_write_text(out.with_suffix(".csv"), buf.getvalue())
    from .plotting import plot_metrics

    plot_metrics(report, out.with_suffix(".png"))
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_render(args) -> int:
    model, doc = fm.load_checkpoint(args.checkpoint)
    fit_cfg = doc.get("fit_config", {})
    opts = _merge_options(args, {"seed": doc.get("seed", 0)}, ("seed",))
    cfg = _config(args)
    if args.camera is not None:
        cam = fm.camera_from_dict(fm.read_json(args.camera, "camera"))
    elif args.manifest is not None:
        _, _, cams = fm.read_manifest(_manifest_path(args.manifest))
        if not 0 <= args.view < len(cams):
            raise InputError(f"--view {args.view} out of range (manifest has {len(cams)} views)")
        cam = cams[args.view]
    else:
        raise UsageError("render needs --camera or --manifest")
    sampler = _render_sampler(fit_cfg) if "sampler" not in cfg else \
        SamplerConfig(t_near=0.0, t_far=1.0, **cfg["sampler"])
    color, depth, _ = render_view(model, cam, sampler, int(opts["seed"]))
    _write_render(color, depth, args.out, args.depth)
    log.info("render: seed %d -> %s", opts["seed"], args.out)
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trisdf", description="Triplane SDF volume-rendering toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True, seed_default=None):
        sp.add_argument("--seed", type=int, default=seed_default, help="random seed")
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", required=out_required, help="output path")

    s = sub.add_parser("synth", help="render a synthetic analytic scene to a posed dataset")
    s.add_argument("--scene", choices=sorted(BUILTIN_SCENES), default="sphere")
    s.add_argument("--views", type=int)
    s.add_argument("--size", type=int)
    s.add_argument("--gt-res", type=int, dest="gt_res")
    common(s, seed_default=0)
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("fit", help="fit a triplane SDF model to a posed dataset")
    f.add_argument("dataset", help="dataset directory or manifest.json")
    f.add_argument("--checkpoint-every", type=int, default=1000, dest="checkpoint_every")
    common(f)
    f.set_defaults(func=cmd_fit)

    m = sub.add_parser("mesh", help="extract the zero level set of a checkpoint")
    m.add_argument("checkpoint")
    m.add_argument("--res", type=int)
    common(m)
    m.set_defaults(func=cmd_mesh)

    e = sub.add_parser("eval", help="compare two meshes with the point-cloud metric suite")
    e.add_argument("gt")
    e.add_argument("pred")
    e.add_argument("--n", type=int)
    e.add_argument("--repeats", type=int)
    e.add_argument("--emd-subsample", type=int, dest="emd_subsample")
    common(e, out_required=False)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="render a checkpoint from a camera")
    r.add_argument("checkpoint")
    r.add_argument("--camera", help="camera JSON (intrinsics + c2w)")
    r.add_argument("--manifest", help="dataset manifest to take the camera from")
    r.add_argument("--view", type=int, default=0)
    r.add_argument("--depth", help="also write a depth PGM here")
    common(r)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (InputError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FitError, RuntimeError, OSError, ValueError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
