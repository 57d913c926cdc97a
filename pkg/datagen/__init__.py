from datagen.dataset import Dataset, Labeler, build_dataset, read_dataset, write_dataset
from datagen.sampling import SamplerKind, SamplingSpec, sample

__all__ = [
    "Dataset",
    "Labeler",
    "SamplerKind",
    "SamplingSpec",
    "build_dataset",
    "read_dataset",
    "sample",
    "write_dataset",
]
