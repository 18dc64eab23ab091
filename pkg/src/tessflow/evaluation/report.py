"""Metric reports: one JSON document per sequence and one CSV row per frame."""

from __future__ import annotations

import csv
import json
import math
from typing import Iterable, List

__all__ = ["frame_row", "summarize", "write_json_report", "write_csv_report", "REPORT_FIELDS"]

REPORT_FIELDS = ["frame", "pd", "pfa", "cd", "snr_db", "empty_prediction", "num_predicted",
                 "num_occupied", "epe3d", "acc_s3d", "acc_r3d", "outlier3d", "num_valid"]


def frame_row(frame: int, seg, flow) -> dict:
    row = {"frame": int(frame)}
    row.update(seg.to_dict())
    row.update(flow.to_dict())
    return row


def summarize(rows: List[dict]) -> dict:
    """Mean of each numeric metric over the frames where it is defined."""
    out = {"frames": len(rows)}
    for key in REPORT_FIELDS[1:]:
        vals = [r[key] for r in rows if r.get(key) is not None and not isinstance(r[key], bool)]
        if key == "empty_prediction":
            out["empty_predictions"] = sum(bool(r[key]) for r in rows)
        elif key.startswith("num_"):
            out[key] = int(sum(vals))
        else:
            out[key] = math.fsum(vals) / len(vals) if vals else None
    return out


def write_json_report(path, rows: List[dict], meta: dict = None) -> dict:
    doc = {"summary": summarize(rows), "frames": rows, "meta": meta or {}}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc


def write_csv_report(path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r[k]) for k in REPORT_FIELDS})
