"""Training engine for small CNNs whose convolutions run through the frequency
domain and carry a learnable, binarized spectral mask, plus a benchmark
harness for clean and corrupted evaluation."""

from .data import CorruptionSpec, Dataset, augment, corrupt, load_cifar10, normalize, synthetic_dataset
from .harness import (
    MetricsLog,
    evaluate,
    load_checkpoint,
    report_masks,
    save_checkpoint,
    train,
)
from .network import ArchSpec, Network, TrainConfig, build_network, softmax_cross_entropy
from .numerics import cmul, crop_same, dft2, idft2, zero_pad
from .spectral_conv import (
    MaskParams,
    SpectralConv,
    binarize,
    init_mask,
    mask_percentage,
    random_drop,
    update_mask,
)

__version__ = "0.1.0"
