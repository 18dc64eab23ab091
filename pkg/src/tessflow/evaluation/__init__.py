"""Ground-truth flow labels and the segmentation / flow metric suite."""

from .labels import (DYNAMIC_THRESHOLD, FlowLabels, apply_rigid, estimate_rigid, flow_labels,
                     is_rigid, labels_from_scenes)
from .metrics import (CD_VOXEL, FlowMetrics, SegMetrics, chamfer_distance, flow_metrics,
                      flow_metrics_meters, seg_metrics, voxel_filter)
from .report import REPORT_FIELDS, frame_row, summarize, write_csv_report, write_json_report

__all__ = [
    "DYNAMIC_THRESHOLD", "FlowLabels", "apply_rigid", "estimate_rigid", "flow_labels", "is_rigid",
    "labels_from_scenes", "CD_VOXEL", "FlowMetrics", "SegMetrics", "chamfer_distance",
    "flow_metrics", "flow_metrics_meters", "seg_metrics", "voxel_filter", "REPORT_FIELDS",
    "frame_row", "summarize", "write_csv_report", "write_json_report",
]
