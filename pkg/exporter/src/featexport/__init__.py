"""Offline feature exporter: runs image encoders on real images and writes
CTNS tensors (texture features, per-pixel semantic embeddings, text-label
embeddings) in the layout voxstyle's bundles and mask generation consume.
"""

from .encoders import (
    SEMANTIC_DIM,
    SEMANTIC_NAME,
    TEXTURE_NAME,
    SemanticEncoder,
    TextureEncoder,
    embed_text,
)
from .export import (
    ExportManifest,
    export_semantic_features,
    export_text_embeddings,
    export_texture_features,
    run_export,
)

__version__ = "0.1.0"
