"""Cross-modal infrared/visible image fusion on the SPD manifold.

Patch statistics of the two modalities are stacked into one composite
covariance matrix, a small network of manifold layers (BiMap, ReEig,
LogEig) learns an attention weight matrix over its rows, and a
convolutional decoder turns the reweighted patch features into the fused
image. Training couples Riemannian SGD on the Stiefel manifold with an
adaptive-moment step on the decoder.
"""

from .checkpoint import load_checkpoint, load_matrix, save_checkpoint, save_matrix
from .config import RunConfig, parse_config, write_config
from .errors import (
    DataError,
    NumericError,
    SpdFuseError,
    UsageError,
)
from .imgio import add_noise, list_pairs, load_image, resize_bilinear, save_image
from .linalg import EigPair, eig_sym, spectral_fn_backward, svd
from .losses import (
    FixedFilterBank,
    LossReport,
    load_features,
    loss_cov,
    loss_grad,
    loss_int,
    loss_ssim,
    make_bank,
    save_features,
    total_loss,
)
from .metrics import (
    MetricReport,
    PointSet,
    ag,
    cm_nnr,
    compute_all,
    en,
    imdr,
    mi,
    qabf,
    sd,
    sf,
    silhouette,
    vif,
)
from .patches import PatchGeometry, PatchMatrix, extract_patches, fold_patches
from .pipeline import (
    FusionModel,
    TrainConfig,
    fuse,
    init_model,
    loss_and_grads,
    spdam_apply,
    train_step,
)
from .spd import (
    CompositeCovariance,
    SpdNet,
    StiefelParam,
    bimap_backward,
    bimap_forward,
    composite_covariance,
    covariance,
    eig_exp,
    init_stiefel,
    logeig_backward,
    logeig_forward,
    reeig_backward,
    reeig_forward,
    regularize_spd,
    spdnet_backward,
    spdnet_forward,
    stiefel_step,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "CompositeCovariance",
    "DataError",
    "EigPair",
    "FixedFilterBank",
    "FusionModel",
    "LossReport",
    "MetricReport",
    "NumericError",
    "PatchGeometry",
    "PatchMatrix",
    "PointSet",
    "RunConfig",
    "SpdFuseError",
    "SpdNet",
    "StiefelParam",
    "TrainConfig",
    "UsageError",
    "add_noise",
    "ag",
    "bimap_backward",
    "bimap_forward",
    "cm_nnr",
    "composite_covariance",
    "compute_all",
    "covariance",
    "eig_exp",
    "eig_sym",
    "en",
    "extract_patches",
    "fold_patches",
    "fuse",
    "imdr",
    "init_model",
    "init_stiefel",
    "list_pairs",
    "load_checkpoint",
    "load_features",
    "load_image",
    "load_matrix",
    "logeig_backward",
    "logeig_forward",
    "loss_and_grads",
    "loss_cov",
    "loss_grad",
    "loss_int",
    "loss_ssim",
    "make_bank",
    "mi",
    "parse_config",
    "qabf",
    "reeig_backward",
    "reeig_forward",
    "regularize_spd",
    "resize_bilinear",
    "save_checkpoint",
    "save_features",
    "save_image",
    "save_matrix",
    "sd",
    "sf",
    "silhouette",
    "spdam_apply",
    "spdnet_backward",
    "spdnet_forward",
    "spectral_fn_backward",
    "stiefel_step",
    "svd",
    "total_loss",
    "train_step",
    "vif",
    "write_config",
]
