"""Command line: ``hpn <command> [options]``.

Commands: compose, render, build-bank, reconstruct, evaluate, sweep-bank,
ablate-levels. Options override keys of the ``--config`` JSON file.

Output layout under ``--out`` (default ``out``)::

    scenes/<id>.json  depth/<id>.hpnd  fields/<id>_L<N>.hpnf  fields/<id>_fused.hpnf
    meshes/<id>.obj   reports/<name>.txt  reports/<name>.csv
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

from . import backends as bk
from .compose import compose_scenes
from .config import RunConfig, load_config
from .fusion import write_hpnf
from .geometry import load_scene, read_obj, save_scene, write_obj
from .metrics import evaluate_split, format_report, mean_report, report_csv
from .patches import LevelConfig
from .pipeline import Level, reconstruct
from .render import read_hpnd, render_depth, write_hpnd, write_pgm16

log = logging.getLogger("hpn")


@contextmanager
def atomic_path(path):
    """Yield a temp path next to ``path``; rename into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _write(path, writer, *args):
    with atomic_path(path) as tmp:
        writer(*args, tmp)


def _write_text(path, text):
    with atomic_path(path) as tmp:
        Path(tmp).write_text(text)


def scene_files(spec) -> list[Path]:
    """A scene file, a directory of ``*.json`` scenes, or a glob."""
    p = Path(spec)
    if p.is_dir():
        return sorted(p.glob("*.json"))
    if p.exists():
        return [p]
    files = sorted(Path(f) for f in glob.glob(str(spec)))
    if not files:
        raise FileNotFoundError(f"no scenes match {spec}")
    return files


# ---------------------------------------------------------------------------
# backend wiring
# ---------------------------------------------------------------------------

def load_bank_for(cfg: RunConfig, n: int, cache: dict | None = None) -> bk.PatchBank:
    cache = {} if cache is None else cache
    if n in cache:
        return cache[n]
    if str(n) in cfg.banks:
        bank = bk.read_bank(cfg.banks[str(n)])
    elif cfg.bank_scenes:
        scenes = [load_scene(f) for f in scene_files(cfg.bank_scenes)]
        stride = cfg.bank_stride.get(str(n))
        bank = bk.build_bank(scenes, LevelConfig(n), stride, width=cfg.image_size, grid_res=cfg.grid_res)
    else:
        raise ValueError(f"retrieval level {n} needs a bank file or bank_scenes")
    if cfg.bank_fraction < 1.0:
        bank = bank.subsample(cfg.bank_fraction, cfg.bank_seed)
    cache[n] = bank
    return bank


def make_levels(cfg: RunConfig, scene, scene_path=None, bank_cache=None, levels=None) -> list[Level]:
    out = []
    for n in levels or cfg.levels:
        name = cfg.backend_for(n)
        if name == "oracle":
            backend = bk.OracleBackend(scene, n, cfg.logit)
        elif name == "oracle_sdf":
            backend = bk.OracleBackend(scene, n, cfg.logit, bk.SIGNED_DISTANCE)
        elif name == "noisy_oracle":
            backend = bk.NoisyOracleBackend(scene, cfg.flip_p, cfg.noise_seed, n, cfg.logit)
        elif name == "retrieval":
            backend = bk.RetrievalBackend(load_bank_for(cfg, n, bank_cache))
        else:
            cmd = [a.replace("{scene}", str(scene_path or "")) for a in cfg.external[str(n)]]
            backend = bk.ExternalBackend(cmd, n)
        out.append(Level(LevelConfig(n, cfg.stride_for(n)), backend, f"{n}:{name}"))
    return out


def hierarchy_name(levels) -> str:
    return "+".join(str(n) for n in levels)


def run_scene(cfg: RunConfig, scene_path: Path, out: Path, bank_cache=None, levels=None,
              tag: str = "", write: bool = True):
    """Render, reconstruct and evaluate one scene; returns (MetricReport, Reconstruction)."""
    scene = load_scene(scene_path)
    sid = scene_path.stem + (f"_{tag}" if tag else "")
    depth = render_depth(scene, cfg.image_size, cfg.image_size)
    lvls = make_levels(cfg, scene, scene_path, bank_cache, levels)
    try:
        rec = reconstruct(depth, lvls, cfg.grid_res, cfg.tau, cfg.tau_sdf, cfg.beta,
                          cfg.worker_count(), cfg.deterministic)
    finally:
        for lv in lvls:
            lv.backend.close()
    if write:
        _write(out / "depth" / f"{scene_path.stem}.hpnd", write_hpnd, depth)
        for n, f in zip(levels or cfg.levels, rec.level_fields):
            _write(out / "fields" / f"{sid}_L{n}.hpnf", write_hpnf, f)
        _write(out / "fields" / f"{sid}_fused.hpnf", write_hpnf, rec.fused)
        _write(out / "meshes" / f"{sid}.obj", write_obj, rec.mesh)
    report = evaluate_split(rec.mesh, scene, depth, cfg.visibility_eps(), cfg.n_samples, cfg.d_thresh,
                            cfg.eval_seed, pred_occupancy=rec.occupancy, iou_samples=cfg.iou_samples)
    report.scene_id = scene_path.stem
    report.backend = ",".join(cfg.backend_for(n) for n in levels or cfg.levels)
    report.hierarchy = hierarchy_name(levels or cfg.levels)
    return report, rec


def write_reports(out: Path, name: str, reports) -> None:
    _write_text(out / "reports" / f"{name}.txt", format_report(reports))
    _write_text(out / "reports" / f"{name}.csv", report_csv(reports))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_compose(args, cfg):
    out = Path(args.out or cfg.output_dir)
    scenes = compose_scenes(args.n, args.max_objects, args.seed if args.seed is not None else cfg.seed,
                            args.min_objects)
    for i, s in enumerate(scenes):
        _write(out / "scenes" / f"scene_{i:04d}.json", save_scene, s)
    log.info("wrote %d scenes to %s", len(scenes), out / "scenes")


def cmd_render(args, cfg):
    out = Path(args.out or cfg.output_dir)
    for f in scene_files(args.scenes):
        depth = render_depth(load_scene(f), cfg.image_size, cfg.image_size)
        _write(out / "depth" / f"{f.stem}.hpnd", write_hpnd, depth)
        if args.pgm:
            _write(out / "depth" / f"{f.stem}.pgm", write_pgm16, depth)


def cmd_build_bank(args, cfg):
    scenes = [load_scene(f) for f in scene_files(args.scenes)]
    bank = bk.build_bank(scenes, LevelConfig(args.patch), args.stride, args.part_res,
                         width=cfg.image_size, grid_res=cfg.grid_res)
    _write(args.out, bk.write_bank, bank)
    log.info("bank N=%d with %d entries -> %s", bank.N, len(bank), args.out)


def _config_scenes(args, cfg) -> list[Path]:
    spec = getattr(args, "scenes", None) or cfg.scene or cfg.scenes_dir
    if spec is None:
        raise ValueError("no scenes given (use --scenes or config scene/scenes_dir)")
    return scene_files(spec)


def cmd_reconstruct(args, cfg):
    out = Path(cfg.output_dir)
    cache = {}
    reports = []
    for f in _config_scenes(args, cfg):
        if args.depth:
            depth = read_hpnd(args.depth)
            scene = load_scene(f)
            lvls = make_levels(cfg, scene, f, cache)
            try:
                rec = reconstruct(depth, lvls, cfg.grid_res, cfg.tau, cfg.tau_sdf, cfg.beta,
                                  cfg.worker_count(), cfg.deterministic)
            finally:
                for lv in lvls:
                    lv.backend.close()
            _write(out / "depth" / f"{f.stem}.hpnd", write_hpnd, depth)
            for n, fld in zip(cfg.levels, rec.level_fields):
                _write(out / "fields" / f"{f.stem}_L{n}.hpnf", write_hpnf, fld)
            _write(out / "fields" / f"{f.stem}_fused.hpnf", write_hpnf, rec.fused)
            _write(out / "meshes" / f"{f.stem}.obj", write_obj, rec.mesh)
            continue
        report, _ = run_scene(cfg, f, out, cache)
        reports.append(report)
        log.info("%s F=%.2f CDx100=%.3f", f.stem, report.fscore, report.chamfer)
    if reports:
        write_reports(out, "reconstruct", reports)


def cmd_evaluate(args, cfg):
    out = Path(args.out or cfg.output_dir)
    pred_dir = Path(args.pred)
    reports, missing = [], []
    for f in _config_scenes(args, cfg):
        mesh_path = pred_dir / f"{f.stem}.obj"
        if not mesh_path.exists():
            missing.append(f.stem)
            log.warning("no prediction for %s", f.stem)
            continue
        scene = load_scene(f)
        depth = render_depth(scene, cfg.image_size, cfg.image_size)
        r = evaluate_split(read_obj(mesh_path), scene, depth, cfg.visibility_eps(), cfg.n_samples,
                           cfg.d_thresh, cfg.eval_seed)
        r.scene_id = f.stem
        reports.append(r)
    write_reports(out, args.name, reports)
    if missing:
        _write_text(out / "reports" / f"{args.name}_missing.txt", "\n".join(missing) + "\n")
    return reports, missing


def cmd_sweep_bank(args, cfg):
    out = Path(cfg.output_dir)
    fractions = [float(x) for x in args.fractions.split(",")]
    if any(not 0.0 < fr <= 1.0 for fr in fractions):
        raise ValueError("bank fractions must lie in (0, 1]")
    if not any(cfg.backend_for(n) == "retrieval" for n in cfg.levels):
        raise ValueError("sweep-bank needs at least one retrieval level")
    full = {}
    for n in cfg.levels:
        if cfg.backend_for(n) == "retrieval":
            load_bank_for(cfg.with_overrides(bank_fraction=1.0), n, full)
    scenes = _config_scenes(args, cfg)
    rows = []
    for fr in fractions:
        cache = {n: b.subsample(fr, cfg.bank_seed) for n, b in full.items()}
        reports = [run_scene(cfg, f, out, cache, write=False)[0] for f in scenes]
        m = mean_report(reports)
        rows.append({"fraction": fr, "bank_entries": {str(n): len(b) for n, b in cache.items()},
                     "mean_fscore": m["fscore"], "mean_chamfer_x100": m["chamfer_x100"]})
        log.info("fraction %.4g: mean F=%.2f", fr, m["fscore"])
    lines = ["fraction,mean_fscore,mean_chamfer_x100"]
    lines += [f"{r['fraction']},{r['mean_fscore']:.4f},{r['mean_chamfer_x100']:.4f}" for r in rows]
    _write_text(out / "reports" / "sweep_bank.csv", "\n".join(lines) + "\n")
    _write_text(out / "reports" / "sweep_bank.json", json.dumps(rows, indent=2) + "\n")
    return rows


def parse_level_sets(spec: str) -> list[list[int]]:
    return [[int(n) for n in part.split("+")] for part in spec.split(";") if part.strip()]


def cmd_ablate_levels(args, cfg):
    out = Path(cfg.output_dir)
    level_sets = parse_level_sets(args.level_sets)
    scenes = _config_scenes(args, cfg)
    cache = {}
    rows = []
    for levels in level_sets:
        RunConfig.from_dict({**cfg.to_dict(), "levels": levels})  # validates the set
        reports = [run_scene(cfg, f, out, cache, levels=levels, tag=hierarchy_name(levels),
                             write=not args.no_write)[0] for f in scenes]
        m = mean_report(reports)
        rows.append((hierarchy_name(levels), m))
    lines = ["hierarchy,full_fscore,full_chamfer_x100,visible_fscore,visible_chamfer_x100,"
             "invisible_fscore,invisible_chamfer_x100"]
    for name, m in rows:
        lines.append(f"{name},{m['fscore']:.4f},{m['chamfer_x100']:.4f},{m['visible_fscore']:.4f},"
                     f"{m['visible_chamfer_x100']:.4f},{m['invisible_fscore']:.4f},"
                     f"{m['invisible_chamfer_x100']:.4f}")
    _write_text(out / "reports" / "ablate_levels.csv", "\n".join(lines) + "\n")
    table = [f"{'hierarchy':<24}{'Full F':>8}{'CD':>8}{'Vis F':>8}{'CD':>8}{'Inv F':>8}{'CD':>8}"]
    for name, m in rows:
        table.append(f"{name:<24}{m['fscore']:8.1f}{m['chamfer_x100']:8.2f}{m['visible_fscore']:8.1f}"
                     f"{m['visible_chamfer_x100']:8.2f}{m['invisible_fscore']:8.1f}"
                     f"{m['invisible_chamfer_x100']:8.2f}")
    _write_text(out / "reports" / "ablate_levels.txt", "\n".join(table) + "\n")
    return rows


# ---------------------------------------------------------------------------

def _int_list(s):
    return [int(x) for x in s.replace("+", ",").split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--deterministic", action="store_true", default=None)
    common.add_argument("--fast", dest="deterministic", action="store_false",
                        help="accumulate patches in completion order")
    common.add_argument("--workers", type=int)
    common.add_argument("--image-size", type=int)
    common.add_argument("--grid-res", type=int)
    common.add_argument("--levels", type=_int_list, help="e.g. 256,64,32")
    common.add_argument("--backend", action="append", default=[], metavar="N=NAME",
                        help="backend for a level, e.g. 64=retrieval or default=oracle")
    common.add_argument("--bank", action="append", default=[], metavar="N=PATH")
    common.add_argument("--bank-scenes")
    common.add_argument("--tau", type=float)
    common.add_argument("--tau-sdf", type=float)
    common.add_argument("--eps", type=float)
    common.add_argument("--d-thresh", type=float)
    common.add_argument("--output-dir")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="hpn", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compose", parents=[common])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--max-objects", type=int, default=3)
    p.add_argument("--min-objects", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("render", parents=[common])
    p.add_argument("--scenes", required=True)
    p.add_argument("--out")
    p.add_argument("--pgm", action="store_true", help="also write 16-bit PGM previews")

    p = sub.add_parser("build-bank", parents=[common])
    p.add_argument("--scenes", required=True)
    p.add_argument("--patch", type=int, required=True)
    p.add_argument("--stride", type=int)
    p.add_argument("--part-res", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("reconstruct", parents=[common])
    p.add_argument("--scenes")
    p.add_argument("--depth", help="reconstruct from this HPND file instead of rendering")

    p = sub.add_parser("evaluate", parents=[common])
    p.add_argument("--pred", required=True, help="directory of predicted <id>.obj meshes")
    p.add_argument("--scenes")
    p.add_argument("--name", default="evaluate")
    p.add_argument("--out")

    p = sub.add_parser("sweep-bank", parents=[common])
    p.add_argument("--fractions", required=True, help="comma-separated, e.g. 0.01,0.1,1.0")
    p.add_argument("--scenes")

    p = sub.add_parser("ablate-levels", parents=[common])
    p.add_argument("--level-sets", required=True, help='e.g. "256;256+64;256+64+32"')
    p.add_argument("--scenes")
    p.add_argument("--no-write", action="store_true")
    return ap


def _pairs(items):
    out = {}
    for item in items:
        key, _, val = item.partition("=")
        if not val:
            raise ValueError(f"expected KEY=VALUE, got {item!r}")
        out[key] = val
    return out


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    d = cfg.to_dict()
    for key in ("deterministic", "workers", "image_size", "grid_res", "levels", "bank_scenes",
                "tau", "tau_sdf", "eps", "d_thresh", "output_dir"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    d["backends"] = {**d["backends"], **_pairs(args.backend)}
    d["banks"] = {**d["banks"], **_pairs(args.bank)}
    return RunConfig.from_dict(d)


COMMANDS = {
    "compose": cmd_compose, "render": cmd_render, "build-bank": cmd_build_bank,
    "reconstruct": cmd_reconstruct, "evaluate": cmd_evaluate, "sweep-bank": cmd_sweep_bank,
    "ablate-levels": cmd_ablate_levels,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except (bk.BackendError, ValueError, FileNotFoundError, OSError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
