from .batches import Batch, BatchItem, assemble_batches, attach_negatives, epoch_batches
from .container import read_tensor, write_tensor
from .dataset import CaptionRecord, Dataset, load_manifest, validate_dataset, write_manifest
from .synthetic import SyntheticSpec, generate_synthetic

__all__ = [
    "Batch",
    "BatchItem",
    "CaptionRecord",
    "Dataset",
    "SyntheticSpec",
    "assemble_batches",
    "attach_negatives",
    "epoch_batches",
    "generate_synthetic",
    "load_manifest",
    "read_tensor",
    "validate_dataset",
    "write_manifest",
    "write_tensor",
]
