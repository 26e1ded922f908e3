"""Dataset condensation for deep hashing retrieval by feature-embedding matching."""

from .augment import AugmentationParams, FormationConfig, apply_aug, assemble, decode, sample_aug
from .condensation import CondenseConfig, CondenseTrace, condense, condense_dm_baseline, matching_loss
from .coreset import CoresetResult, select_herding, select_random
from .data import LabeledDataset, SyntheticSet, load_dataset, load_synthetic, sample_class_batch, save_synthetic
from .hashing import HashLossConfig, TrainedHashModel, build_codebook, hash_loss, train_hash
from .models import HashNetParams, PerturbationConfig, extract_features, hash_forward, init_network, perturb
from .retrieval import BinaryCodes, EvalReport, binarize, hamming_rank, mean_average_precision

__version__ = "0.1.0"

__all__ = [
    "AugmentationParams", "FormationConfig", "apply_aug", "assemble", "decode", "sample_aug",
    "CondenseConfig", "CondenseTrace", "condense", "condense_dm_baseline", "matching_loss",
    "CoresetResult", "select_herding", "select_random",
    "LabeledDataset", "SyntheticSet", "load_dataset", "load_synthetic", "sample_class_batch", "save_synthetic",
    "HashLossConfig", "TrainedHashModel", "build_codebook", "hash_loss", "train_hash",
    "HashNetParams", "PerturbationConfig", "extract_features", "hash_forward", "init_network", "perturb",
    "BinaryCodes", "EvalReport", "binarize", "hamming_rank", "mean_average_precision",
]
