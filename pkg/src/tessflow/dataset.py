"""Simulated scene pairs with tesseracts and ground truth, in memory and on disk.

A pair directory holds::

    scene_src.json, scene_tgt.json   scene descriptions
    adc_src.bin, adc_tgt.bin         raw ADC cubes
    points.npy                       reference point cloud of the source frame
    occupancy.vol                    (1, R, A, E) reference occupancy
    flow.vol                         (3, R, A, E) reference flow in bins
    valid.vol                        (1, R, A, E) flow validity mask

Tesseracts are written next to the cubes by the ``build-tesseract`` step
(``src.tess`` and ``tgt.tess``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .evaluation.labels import FlowLabels, labels_from_scenes
from .sim import (RadarConfig, SceneSpec, advance_scene, cluster_points, occupancy_from_points,
                  random_scene, read_adc, simulate_adc, write_adc)
from .tesseract import (PreprocessConfig, Tesseract, build_tesseract, preprocess, preprocess_grid,
                        raw_grid, read_tesseract, read_volume, write_tesseract, write_volume)
from .tesseract.grid import PolarGrid

__all__ = ["ScenePair", "PairTruth", "simulate_pair", "simulate_dataset", "write_pair",
           "read_truth", "read_pair_scenes", "pair_dirs", "working_grid", "DEFAULT_TRAIN_NOISE"]

# noise floor used for generated training data: roughly 40 dB below a unit scatterer peak
DEFAULT_TRAIN_NOISE = 30.0


@dataclass
class PairTruth:
    occupancy: np.ndarray   # (R, A, E) bool
    flow: np.ndarray        # (3, R, A, E) bins
    valid: np.ndarray       # (R, A, E) bool
    points: np.ndarray      # (P, 3)


@dataclass
class ScenePair:
    src_scene: SceneSpec
    tgt_scene: SceneSpec
    src: Tesseract
    tgt: Tesseract
    truth: PairTruth
    labels: Optional[FlowLabels] = None


def working_grid(cfg: RadarConfig, pcfg: PreprocessConfig) -> PolarGrid:
    return preprocess_grid(raw_grid(cfg), pcfg)


def _truth(src: SceneSpec, tgt: SceneSpec, grid: PolarGrid, dt: float) -> tuple:
    points, _ = cluster_points(src)
    occ, _ = occupancy_from_points(points, grid)
    labels = labels_from_scenes(src, tgt, occ, grid, dt)
    return PairTruth(occ, labels.flow, labels.valid, points), labels


def simulate_pair(seed: int, cfg: RadarConfig, pcfg: PreprocessConfig, dynamic: bool,
                  frame_id: int = 0) -> tuple:
    """Scene, successor, their ADC cubes and the reference labels.

    Returns (ScenePair, adc_src, adc_tgt).
    """
    grid = working_grid(cfg, pcfg)
    src_scene = random_scene(seed, cfg, grid, dynamic=dynamic)
    src_scene.frame = frame_id
    tgt_scene = advance_scene(src_scene, cfg.frame_interval)
    adc_s, adc_t = simulate_adc(src_scene, cfg), simulate_adc(tgt_scene, cfg)
    ts = preprocess(build_tesseract(adc_s, cfg, src_scene.frame), pcfg)
    tt = preprocess(build_tesseract(adc_t, cfg, tgt_scene.frame), pcfg)
    truth, labels = _truth(src_scene, tgt_scene, grid, cfg.frame_interval)
    return ScenePair(src_scene, tgt_scene, ts, tt, truth, labels), adc_s, adc_t


def simulate_dataset(num_pairs: int, seed: int, cfg: RadarConfig, pcfg: PreprocessConfig,
                     dynamic_fraction: float = 0.5) -> List[ScenePair]:
    """``num_pairs`` pairs; the first ``round(dynamic_fraction * n)`` are dynamic."""
    n_dyn = int(round(dynamic_fraction * num_pairs))
    pairs = []
    for i in range(num_pairs):
        pair, _, _ = simulate_pair(seed * 1000 + i, cfg, pcfg, dynamic=i < n_dyn, frame_id=2 * i)
        pairs.append(pair)
    return pairs


def pair_dirs(root) -> List[Path]:
    return sorted(p for p in Path(root).iterdir() if p.is_dir() and p.name.startswith("pair_"))


def write_pair(directory, pair: ScenePair, adc_src, adc_tgt, grid: PolarGrid) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "scene_src.json").write_text(pair.src_scene.to_json())
    (d / "scene_tgt.json").write_text(pair.tgt_scene.to_json())
    write_adc(d / "adc_src.bin", adc_src)
    write_adc(d / "adc_tgt.bin", adc_tgt)
    with open(d / "points.npy", "wb") as fh:
        np.save(fh, pair.truth.points)
    frame = pair.src_scene.frame
    write_volume(d / "occupancy.vol", pair.truth.occupancy.astype(float), grid, frame)
    write_volume(d / "flow.vol", pair.truth.flow, grid, frame)
    write_volume(d / "valid.vol", pair.truth.valid.astype(float), grid, frame)


def read_pair_scenes(directory) -> tuple:
    d = Path(directory)
    return (SceneSpec.from_json((d / "scene_src.json").read_text()),
            SceneSpec.from_json((d / "scene_tgt.json").read_text()))


def read_truth(directory) -> tuple:
    """(PairTruth, grid) read back from a pair directory."""
    d = Path(directory)
    occ, grid, _, _ = read_volume(d / "occupancy.vol")
    flow, _, _, _ = read_volume(d / "flow.vol")
    valid, _, _, _ = read_volume(d / "valid.vol")
    points = np.load(d / "points.npy", allow_pickle=False)
    # volumes store float32; reference flow is rounded accordingly
    return PairTruth(occ[0] > 0.5, flow, valid[0] > 0.5, points), grid


def read_tesseract_pair(directory) -> tuple:
    d = Path(directory)
    return read_tesseract(d / "src.tess"), read_tesseract(d / "tgt.tess")


def build_pair_tesseracts(directory, cfg: RadarConfig, pcfg: PreprocessConfig) -> tuple:
    d = Path(directory)
    src_scene, tgt_scene = read_pair_scenes(d)
    ts = preprocess(build_tesseract(read_adc(d / "adc_src.bin"), cfg, src_scene.frame), pcfg)
    tt = preprocess(build_tesseract(read_adc(d / "adc_tgt.bin"), cfg, tgt_scene.frame), pcfg)
    write_tesseract(d / "src.tess", ts)
    write_tesseract(d / "tgt.tess", tt)
    return ts, tt


def dataset_manifest(root, meta: dict) -> None:
    (Path(root) / "manifest.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


__all__ += ["read_tesseract_pair", "build_pair_tesseracts", "dataset_manifest"]
