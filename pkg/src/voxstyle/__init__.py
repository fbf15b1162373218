"""Controllable style transfer for voxel radiance fields.

A dense SH voxel grid is pretrained photorealistically on multi-view
images, then its radiance is fine-tuned under per-label losses dispatched
by 2D segmentation masks: preserve (pixel MSE), nearest-neighbor feature
style matching, or semantic-aware matching with label-restricted,
blended-distance candidates.
"""

from .errors import (
    ChecksumError,
    ConfigurationError,
    ContractViolationError,
    DegenerateVectorError,
    DimensionError,
    EmptyCandidateError,
    FormatError,
    InputError,
    MissingFeatureError,
    NonDifferentiableError,
    NumericalError,
    OutOfBoundsError,
    StaleAuxError,
    VoxstyleError,
)
from .grid import (
    SamplePoint,
    VoxelGrid,
    activate_density,
    eval_radiance,
    sh_basis,
    trilinear_sample,
)
from .render import (
    Camera,
    RenderAux,
    backward_full,
    backward_radiance,
    composite,
    march_ray,
    render_view,
)
from .feat import (
    Extractor,
    FeatureMap,
    FeatureSpace,
    LabelMask,
    backprop_extract,
    default_semantic_extractor,
    default_texture_extractor,
    downsample_mask,
    extract,
    resample_bilinear,
)
from .match import MatchResult, cosine_distance, nnfm_match, sannfm_match
from .loss import (
    PRESERVE,
    LossConfig,
    LossReport,
    StyleBinding,
    TaskMode,
    composite_masked_loss,
    l2_feature_loss,
    l2_pixel_loss,
    nnfm_loss,
    sannfm_loss,
    tv_loss,
)
from .stylize import (
    OptState,
    TaskSpec,
    View,
    color_transfer,
    finetune,
    gradient_audit,
    prepare_views,
    pretrain,
)
from .maskgen import LabelEmbeddingSet, mask_from_embeddings, mask_from_pixel_query
from .ctns import read_ctns, write_ctns

__version__ = "0.1.0"
