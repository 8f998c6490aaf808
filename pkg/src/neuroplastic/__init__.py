"""Growable gated classifier over embeddings with nearest-neighbour memory."""

from .config import SplitSpec, TrainConfig
from .data_io import EmbeddingDataset, SyntheticSpec, gen_synthetic
from .growth import GrowthConfig, GrowthEvent, GrowthLog, GrowthPolicy, should_grow
from .memory import FlatMemoryIndex, aggregate_mean
from .metrics import confusion_from_pairs, paired_ttest, report_from_confusion
from .model import NeuroClassifier
from .training import Trainer, evaluate, split_dataset, train_epoch

__version__ = "0.1.0"
