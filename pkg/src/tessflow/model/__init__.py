"""Scene-flow and segmentation network built on the autodiff engine."""

from .backbone import FPN, Backbone, ResidualBlock, pad_to_multiple
from .checkpoint import (CHECKPOINT_MAGIC, CHECKPOINT_VERSION, CheckpointMismatch,
                         load_checkpoint, read_checkpoint, save_checkpoint)
from .config import ModelConfig
from .deform import MSDeformAttn, scale_reference
from .doppler import (DopplerEncoder, doppler_logits, frame_seed, normalized_log_power,
                      velocity_readout)
from .globalattn import PatchAttention, SliceAttention, normalized_polar, patchify, unpatchify
from .network import Decoder, PairInputs, PerceptionOutput, RadarFlowNet, plane_pairs, prepare_pair
from .planeflow import PlaneFlowNet, correlation, plane_energy, plane_flow_loss, warp_image
from .refpoints import plane_flows_to_volume, reference_points

__all__ = [
    "FPN", "Backbone", "ResidualBlock", "pad_to_multiple",
    "CHECKPOINT_MAGIC", "CHECKPOINT_VERSION", "CheckpointMismatch", "load_checkpoint",
    "read_checkpoint", "save_checkpoint", "ModelConfig", "MSDeformAttn", "scale_reference",
    "DopplerEncoder", "doppler_logits", "frame_seed", "normalized_log_power", "velocity_readout",
    "PatchAttention", "SliceAttention", "normalized_polar", "patchify", "unpatchify",
    "Decoder", "PairInputs", "PerceptionOutput", "RadarFlowNet", "plane_pairs", "prepare_pair",
    "PlaneFlowNet", "correlation", "plane_energy", "plane_flow_loss", "warp_image",
    "plane_flows_to_volume", "reference_points",
]
