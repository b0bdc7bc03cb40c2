"""Self-supervised stereo depth estimation built on disparity probability
volumes: exponential level discretization, probability-weighted view
synthesis, mutual occlusion masks, and a two-step training strategy, all on
a small reverse-mode autodiff core with finite-difference verification.
"""

from .autodiff import Tape, Tensor, no_grad
from .levels import (CameraModel, DisparityLevels, EXPONENTIAL, LINEAR,
                     depth_to_disparity, disparity_to_depth, make_levels)
from .losses import (FeatureExtractor, LossWeights, mirror_loss,
                     reconstruction_loss, smoothness_loss, total_loss)
from .metrics import EvalReport, evaluate, postprocess_disparity, psnr
from .network import (DispNet, NetworkConfig, load_checkpoint, paperlike_config,
                      save_checkpoint, toy_config)
from .occlusion import (MirroredDisparity, OcclusionMask, mask_coverage,
                        mask_iou, mirrored_disparity, occlusion_mask,
                        occlusion_masks, ones_mask)
from .scenes import (BankSpec, Layer, SceneSpec, StereoSample, Texture,
                     make_bank, one_hot_volume, random_scene, render)
from .training import (TrainConfig, TrainResult, evaluate_model, pair_losses,
                       pair_volumes, step1_config, step2_config, train)
from .volume import (DispVolume, LEFT, RIGHT, disparity_from_volume,
                     synth_right, synthesize_view, volume_from_logits)
from .warp import WarpDirection, shift_sample, shift_stack, warp_volume

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor", "no_grad",
    "CameraModel", "DisparityLevels", "EXPONENTIAL", "LINEAR",
    "depth_to_disparity", "disparity_to_depth", "make_levels",
    "FeatureExtractor", "LossWeights", "mirror_loss", "reconstruction_loss",
    "smoothness_loss", "total_loss",
    "EvalReport", "evaluate", "postprocess_disparity", "psnr",
    "DispNet", "NetworkConfig", "load_checkpoint", "paperlike_config",
    "save_checkpoint", "toy_config",
    "MirroredDisparity", "OcclusionMask", "mask_coverage", "mask_iou",
    "mirrored_disparity", "occlusion_mask", "occlusion_masks", "ones_mask",
    "BankSpec", "Layer", "SceneSpec", "StereoSample", "Texture", "make_bank",
    "one_hot_volume", "random_scene", "render",
    "TrainConfig", "TrainResult", "evaluate_model", "pair_losses",
    "pair_volumes", "step1_config", "step2_config", "train",
    "DispVolume", "LEFT", "RIGHT", "disparity_from_volume", "synth_right",
    "synthesize_view", "volume_from_logits",
    "WarpDirection", "shift_sample", "shift_stack", "warp_volume",
    "__version__",
]
