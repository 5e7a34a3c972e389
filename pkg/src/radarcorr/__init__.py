"""Learned point correspondences between consecutive sparse radar scans."""

from .assignment import Assignment, solve_max, solve_min
from .geometry import FovSpec, PointCloud, PoseSE3, pad_cloud
from .labelgen import LabelSet, generate_labels
from .matcher import InferenceConfig, MatchSet, calibrate_threshold, match_pair, nearest_neighbor_matches
from .model import CorrespondenceNet, ModelConfig
from .synth import SynthConfig, generate_synthetic, synthetic_pairs
from .trainer import TrainConfig, load_model, train

__version__ = "0.1.0"
