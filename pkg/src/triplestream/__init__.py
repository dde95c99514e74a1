"""Multi-stream metric learning for long-tailed action recognition, at desk scale."""

from .config import RunConfig, load_run_config, parse_run_config
from .datagen import Dataset, DatasetConfig, generate, read_dataset, split, write_dataset
from .estimators import ExactTSNE, KNNEmbeddingClassifier, TripleStreamClassifier
from .evaluator import EmbeddingIndex, EvalReport, evaluate, knn_predict
from .losses import LossConfig
from .model import ModelConfig, init_params
from .projection import TsneConfig, tsne
from .trainer import Checkpoint, History, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "Dataset",
    "DatasetConfig",
    "EmbeddingIndex",
    "EvalReport",
    "ExactTSNE",
    "History",
    "KNNEmbeddingClassifier",
    "LossConfig",
    "ModelConfig",
    "RunConfig",
    "TrainConfig",
    "TripleStreamClassifier",
    "TsneConfig",
    "evaluate",
    "generate",
    "init_params",
    "knn_predict",
    "load_checkpoint",
    "load_run_config",
    "parse_run_config",
    "read_dataset",
    "save_checkpoint",
    "split",
    "train",
    "tsne",
    "write_dataset",
]
