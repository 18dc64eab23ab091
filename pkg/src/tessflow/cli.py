"""Command-line entry point: ``tessflow <command> --config run.json``.

Commands and the files they produce (``data`` and ``out`` are the run
configuration's ``data_dir`` and ``output_dir``)::

    simulate         data/pair_NNNN/{scene_*.json, adc_*.bin, points.npy, *.vol}, data/manifest.json
    build-tesseract  data/pair_NNNN/{src,tgt}.tess
    cfar             out/cfar/pair_NNNN.{vol,json}, out/cfar_report.{json,csv}
    train            out/model.ckpt, out/train_log.jsonl, out/train_summary.json
    infer            out/infer/pair_NNNN/{seg,flow}.vol
    eval             out/eval_report.{json,csv}
    export-heatmap   out/heatmaps/pair_NNNN/*.pgm|*.ppm

Exit codes: 0 success, 2 usage error, 3 missing input file, 4 invalid
configuration, 5 checkpoint does not match the data or model, 6 corrupt or
foreign binary file, 7 training diverged (no checkpoint written).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .cfar import os_cfar_detect
from .dataset import (build_pair_tesseracts, dataset_manifest, pair_dirs, read_tesseract_pair,
                      read_truth, simulate_pair, working_grid, write_pair)
from .evaluation import flow_metrics, frame_row, seg_metrics, write_csv_report, write_json_report
from .evaluation.report import summarize
from .formats import FormatError
from .model import CheckpointMismatch, RadarFlowNet, load_checkpoint, save_checkpoint
from .runconfig import ConfigError, RunConfig, load_run_config
from .tesseract import project_planes, read_volume, write_volume
from .train import Trainer, evaluate_losses, jsonl_logger, make_sample, pretrain_planeflow

__all__ = ["main", "build_parser", "EXIT_CODES", "db_to_gray", "write_pgm", "write_ppm"]

EXIT_CODES = {"ok": 0, "usage": 2, "missing_input": 3, "config": 4, "checkpoint": 5,
              "format": 6, "diverged": 7}

# heatmap colour mapping: 10*log10(p / plane max) clipped to [HEATMAP_FLOOR_DB, 0] -> 0..255
HEATMAP_FLOOR_DB = -40.0
# flow magnitudes (bins) at or above this value saturate the colour ramp
FLOW_SATURATION_BINS = 4.0


class Diverged(RuntimeError):
    pass


# ------------------------------------------------------------------ image output


def db_to_gray(plane: np.ndarray) -> np.ndarray:
    """8-bit gray levels of a power image on the fixed dB scale."""
    plane = np.asarray(plane, dtype=float)
    ref = plane.max()
    if not ref > 0:
        return np.zeros(plane.shape, dtype=np.uint8)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(np.maximum(plane, 0.0) / ref)
    t = (np.clip(db, HEATMAP_FLOOR_DB, 0.0) - HEATMAP_FLOOR_DB) / -HEATMAP_FLOOR_DB
    return np.round(255.0 * t).astype(np.uint8)


def flow_to_rgb(magnitude: np.ndarray) -> np.ndarray:
    """Blue (still) to red (at or above saturation) ramp for flow magnitudes in bins."""
    t = np.clip(np.asarray(magnitude, dtype=float) / FLOW_SATURATION_BINS, 0.0, 1.0)
    rgb = np.stack([t, np.zeros_like(t), 1.0 - t], axis=-1)
    return np.round(255.0 * rgb).astype(np.uint8)


def _upscale(img: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(img, factor, axis=0), factor, axis=1)


def write_pgm(path, gray: np.ndarray) -> None:
    gray = np.asarray(gray, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode())
        fh.write(gray.tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode())
        fh.write(rgb.tobytes())


# ------------------------------------------------------------------ helpers


def _pairs(cfg: RunConfig) -> List[Path]:
    root = cfg.data_path
    if not root.is_dir():
        raise FileNotFoundError(f"data directory {root} does not exist; run `simulate` first")
    dirs = pair_dirs(root)
    if not dirs:
        raise FileNotFoundError(f"no pair_* directories under {root}")
    return dirs


def _tesseracts(d: Path):
    for name in ("src.tess", "tgt.tess"):
        if not (d / name).exists():
            raise FileNotFoundError(f"{d / name} is missing; run `build-tesseract` first")
    return read_tesseract_pair(d)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _meta(cfg: RunConfig, **extra) -> dict:
    meta = {"scale": cfg.scale, "seed": cfg.seed, "num_pairs": cfg.num_pairs}
    meta.update(extra)
    return meta


def _load_net(cfg: RunConfig, checkpoint: Optional[str]) -> RadarFlowNet:
    path = Path(checkpoint) if checkpoint else cfg.output_path / "model.ckpt"
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist; run `train` first")
    return load_checkpoint(path)


def _check_spatial(net: RadarFlowNet, t) -> None:
    if tuple(net.spatial) != t.grid.spatial_shape or net.cfg.num_doppler != t.grid.num_doppler:
        raise CheckpointMismatch(
            f"checkpoint expects spatial {tuple(net.spatial)} x {net.cfg.num_doppler} Doppler bins, "
            f"data has {t.grid.spatial_shape} x {t.grid.num_doppler}")


# ------------------------------------------------------------------ commands


def cmd_simulate(cfg: RunConfig, args) -> int:
    radar, pcfg = cfg.radar_config(), cfg.preprocess_config()
    grid = working_grid(radar, pcfg)
    root = cfg.data_path
    root.mkdir(parents=True, exist_ok=True)
    n_dyn = int(round(cfg.dynamic_fraction * cfg.num_pairs))
    for i in range(cfg.num_pairs):
        pair, adc_s, adc_t = simulate_pair(cfg.seed * 1000 + i, radar, pcfg, dynamic=i < n_dyn,
                                           frame_id=2 * i)
        write_pair(root / f"pair_{i:04d}", pair, adc_s, adc_t, grid)
    (root / "radar.json").write_text(radar.to_json() + "\n")
    dataset_manifest(root, {"num_pairs": cfg.num_pairs, "num_dynamic": n_dyn, "seed": cfg.seed,
                            "scale": cfg.scale, "noise_power": cfg.noise_power})
    print(f"simulated {cfg.num_pairs} pairs ({n_dyn} dynamic) into {root}")
    return 0


def cmd_build(cfg: RunConfig, args) -> int:
    radar, pcfg = cfg.radar_config(), cfg.preprocess_config()
    dirs = _pairs(cfg)
    for d in dirs:
        for name in ("adc_src.bin", "adc_tgt.bin", "scene_src.json", "scene_tgt.json"):
            if not (d / name).exists():
                raise FileNotFoundError(f"{d / name} is missing")
        build_pair_tesseracts(d, radar, pcfg)
    print(f"built tesseracts for {len(dirs)} pairs")
    return 0


def cmd_cfar(cfg: RunConfig, args) -> int:
    ccfg = cfg.cfar_config()
    out = cfg.output_path / "cfar"
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for d in _pairs(cfg):
        src, _ = _tesseracts(d)
        truth, _ = read_truth(d)
        mask = os_cfar_detect(src.power.max(axis=0), ccfg)
        write_volume(out / f"{d.name}.vol", mask.astype(float), src.grid, src.frame_id)
        seg = seg_metrics(mask, truth.points, src.grid, energy=src.power)
        _write_json(out / f"{d.name}.json", {"detections": int(mask.sum()), "snr_db": seg.snr_db})
        row = {"frame": src.frame_id}
        row.update(seg.to_dict())
        rows.append(row)
    write_json_report(cfg.output_path / "cfar_report.json", rows,
                      _meta(cfg, method="os-cfar", cfar=cfg.cfar))
    write_csv_report(cfg.output_path / "cfar_report.csv", rows)
    s = summarize(rows)
    print(f"cfar: Pd {s['pd']} Pfa {s['pfa']} CD {s['cd']}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    data = [_tesseracts(d) for d in _pairs(cfg)]
    mcfg = cfg.model_config()
    net = RadarFlowNet(mcfg, data[0][0].grid.spatial_shape)
    out = cfg.output_path
    out.mkdir(parents=True, exist_ok=True)
    log = jsonl_logger(out / "train_log.jsonl")
    try:
        pretrain_planeflow(net.planeflow, [t for pair in data for t in pair],
                           steps=cfg.planeflow_steps, seed=cfg.seed, log=log)
        samples = [make_sample(net, s, t) for s, t in data]
        initial = evaluate_losses(net, samples)
        trainer = Trainer(net, samples, cfg.optim_config(), batch_size=cfg.batch_size,
                          seed=cfg.seed, log=log)
        history = trainer.train(cfg.epochs)
    finally:
        log.close()
    if not trainer.parameters_finite():
        raise Diverged("parameters became non-finite; no checkpoint written")
    samples = [make_sample(net, s, t) for s, t in data]
    final = evaluate_losses(net, samples)
    diverged = sum(1 for h in history if h.get("diverged"))
    summary = {"initial_losses": initial, "final_losses": final, "steps": len(history),
               "skipped_steps": trainer.opt.skipped, "diverged_steps": diverged,
               "total_ratio": final["total"] / initial["total"] if initial["total"] else None}
    _write_json(out / "train_summary.json", summary)
    save_checkpoint(out / "model.ckpt", net, extra={"epochs": cfg.epochs, "steps": len(history)})
    print(f"trained {len(history)} steps: total loss {initial['total']:.4f} -> {final['total']:.4f}")
    return 0


def cmd_infer(cfg: RunConfig, args) -> int:
    net = _load_net(cfg, args.checkpoint)
    out = cfg.output_path / "infer"
    for d in _pairs(cfg):
        src, tgt = _tesseracts(d)
        _check_spatial(net, src)
        seg, flow = net.infer(src, tgt)
        od = out / d.name
        od.mkdir(parents=True, exist_ok=True)
        write_volume(od / "seg.vol", seg, src.grid, src.frame_id)
        write_volume(od / "flow.vol", flow, src.grid, src.frame_id)
    print(f"wrote predictions to {out}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    pred_root = Path(args.predictions) if args.predictions else cfg.output_path / "infer"
    rows = []
    for d in _pairs(cfg):
        pd = pred_root / d.name
        for name in ("seg.vol", "flow.vol"):
            if not (pd / name).exists():
                raise FileNotFoundError(f"{pd / name} is missing; run `infer` first")
        seg, grid, frame, _ = read_volume(pd / "seg.vol")
        flow, _, _, _ = read_volume(pd / "flow.vol")
        truth, tgrid = read_truth(d)
        if grid.spatial_shape != tgrid.spatial_shape or flow.shape[0] != 3:
            raise FormatError(f"prediction volumes in {pd} do not match the reference grid")
        src, _ = _tesseracts(d)
        sm = seg_metrics(seg[0] > cfg.seg_threshold, truth.points, tgrid, energy=src.power)
        fm = flow_metrics(flow, truth.flow, truth.valid, tgrid)
        rows.append(frame_row(frame, sm, fm))
    report = Path(args.report) if args.report else cfg.output_path / "eval_report.json"
    report.parent.mkdir(parents=True, exist_ok=True)
    doc = write_json_report(report, rows, _meta(cfg, threshold=cfg.seg_threshold))
    write_csv_report(report.with_suffix(".csv"), rows)
    s = doc["summary"]
    print(f"eval: Pd {s['pd']} Pfa {s['pfa']} CD {s['cd']} EPE3D {s['epe3d']}")
    return 0


def cmd_heatmap(cfg: RunConfig, args) -> int:
    dirs = _pairs(cfg)
    if not 0 <= args.pair < len(dirs):
        raise FileNotFoundError(f"pair index {args.pair} outside 0..{len(dirs) - 1}")
    d = dirs[args.pair]
    src, _ = _tesseracts(d)
    truth, _ = read_truth(d)
    out = cfg.output_path / "heatmaps" / d.name
    out.mkdir(parents=True, exist_ok=True)
    k = args.upscale
    names = ("ra", "re", "ae")

    def masks(vol):
        return vol.max(axis=2), vol.max(axis=1), vol.max(axis=0)

    for name, plane in zip(names, project_planes(src)):
        write_pgm(out / f"power_{name}.pgm", _upscale(db_to_gray(plane), k))
    for name, plane in zip(names, masks(truth.occupancy.astype(np.uint8) * 255)):
        write_pgm(out / f"occupancy_{name}.pgm", _upscale(plane.astype(np.uint8), k))
    for name, plane in zip(names, masks(np.linalg.norm(truth.flow, axis=0) * truth.valid)):
        write_ppm(out / f"flow_gt_{name}.ppm", _upscale(flow_to_rgb(plane), k))
    pred = cfg.output_path / "infer" / d.name
    if (pred / "seg.vol").exists() and (pred / "flow.vol").exists():
        seg, _, _, _ = read_volume(pred / "seg.vol")
        flow, _, _, _ = read_volume(pred / "flow.vol")
        mask = (seg[0] > cfg.seg_threshold).astype(np.uint8) * 255
        for name, plane in zip(names, masks(mask)):
            write_pgm(out / f"mask_pred_{name}.pgm", _upscale(plane, k))
        mag = np.linalg.norm(flow, axis=0) * (seg[0] > cfg.seg_threshold)
        for name, plane in zip(names, masks(mag)):
            write_ppm(out / f"flow_pred_{name}.ppm", _upscale(flow_to_rgb(plane), k))
    print(f"wrote heatmaps to {out}")
    return 0


COMMANDS = {
    "simulate": (cmd_simulate, "simulate scene pairs, ADC cubes and reference labels"),
    "build-tesseract": (cmd_build, "turn ADC cubes into preprocessed tesseracts"),
    "cfar": (cmd_cfar, "run the OS-CFAR baseline and score it"),
    "train": (cmd_train, "self-supervised training; writes a checkpoint and a JSON-lines log"),
    "infer": (cmd_infer, "predict segmentation and flow volumes"),
    "eval": (cmd_eval, "score predictions against the reference labels"),
    "export-heatmap": (cmd_heatmap, "write plane projections, masks and flow maps as images"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tessflow", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run configuration JSON file")
        if name == "infer":
            p.add_argument("--checkpoint", help="checkpoint path (default: <output_dir>/model.ckpt)")
        if name == "eval":
            p.add_argument("--predictions", help="prediction root (default: <output_dir>/infer)")
            p.add_argument("--report", help="JSON report path (default: <output_dir>/eval_report.json); "
                                            "the CSV goes next to it")
        if name == "export-heatmap":
            p.add_argument("--pair", type=int, default=0, help="pair index")
            p.add_argument("--upscale", type=int, default=8, help="integer pixel magnification")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config)
        return COMMANDS[args.command][0](cfg, args)
    except FileNotFoundError as exc:
        code, msg = EXIT_CODES["missing_input"], f"missing input: {exc}"
    except ConfigError as exc:
        code, msg = EXIT_CODES["config"], f"invalid configuration: {exc}"
    except CheckpointMismatch as exc:
        code, msg = EXIT_CODES["checkpoint"], f"checkpoint mismatch: {exc}"
    except FormatError as exc:
        code, msg = EXIT_CODES["format"], f"format error: {exc}"
    except Diverged as exc:
        code, msg = EXIT_CODES["diverged"], f"training diverged: {exc}"
    print(f"tessflow {args.command}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
