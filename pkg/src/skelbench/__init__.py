"""Skeleton extraction benchmark: classical thinning, a multi-stage U-Net in
plain numpy, and the F1 / M-CCORR evaluation metrics."""

__version__ = "0.1.0"

from .classic_skel import ThinningAlgo, ThinningSkeletonizer, Variant, skeletonize
from .datagen import DatasetSpec, SamplePair, gen_dataset, gen_pairs, gen_shape, ingest_dir, split_dataset, stack_pairs
from .estimators import UNetSkeletonizer
from .imgcore import BBox, bounding_box, connected_components, distance_transform, load_png, save_png, shift_mask
from .metrics import MatchConfig, MetricReport, evaluate_pair, f1_score, m_ccorr, max_zncc
from .pipeline import ModelBundle, PipelineConfig, infer, load_model, save_model, train_pipeline
from .tensor_nn import LossConfig, LossMode
from .unet import UNetConfig, build_unet

__all__ = [
    "BBox", "DatasetSpec", "LossConfig", "LossMode", "MatchConfig", "MetricReport",
    "ModelBundle", "PipelineConfig", "SamplePair", "ThinningAlgo", "ThinningSkeletonizer",
    "UNetConfig", "UNetSkeletonizer", "Variant", "bounding_box", "build_unet",
    "connected_components", "distance_transform", "evaluate_pair", "f1_score",
    "gen_dataset", "gen_pairs", "gen_shape", "infer", "ingest_dir", "load_model", "load_png",
    "m_ccorr", "max_zncc", "save_model", "save_png", "shift_mask", "skeletonize",
    "split_dataset", "stack_pairs", "train_pipeline",
]
