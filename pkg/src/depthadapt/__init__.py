"""Adapt a day-time monocular depth encoder to night, rain and snow through image transfer."""

from .data import SceneSpec, ShiftParams, apply_shift, generate_scene, load_dataset
from .depthnet import ArchDescriptor, Checkpoint, decode, disparity_to_depth, encode, predict
from .evaluation import EvalReport, compute_metrics, evaluate_model
from .runtime import EncoderRegistry, export_depth
from .trainer import AdaptConfig, LossWeights, adapt, chain_adapt
from .transfer import TransferProvider, make_inverse, transfer

__version__ = "0.1.0"
