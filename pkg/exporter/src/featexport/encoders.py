"""Image encoders backing the offline feature export.

Texture features come from the conv3 block of a VGG-16 (output 256
channels at 1/4 the input resolution). Pretrained torchvision weights are
used when available locally; otherwise a state-dict file can be supplied,
and failing that the architecture is initialized from a fixed seed so
exports stay deterministic (a warning is logged, since seeded features
have no perceptual meaning).

Semantic features come from a compact per-pixel conv encoder sharing its
embedding space with text queries: a label word maps to a canonical color
patch which is pushed through the same encoder and pooled. Pixels and
text therefore land in one space by construction.
"""

from __future__ import annotations

import hashlib
import logging

import numpy as np
import torch
from torch import nn

log = logging.getLogger(__name__)

TEXTURE_NAME = "texture-conv3"
SEMANTIC_NAME = "semantic-pixel"
SEMANTIC_DIM = 64

_IMAGENET_MEAN = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
_IMAGENET_STD = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)

# conv1_1..conv3_3 (+ReLU) of VGG-16; pooling after conv2 gives the /4 grid
_VGG16_CONV3_CHANNELS = [64, 64, "M", 128, 128, "M", 256, 256, 256]


def _build_conv3_trunk() -> nn.Sequential:
    layers: list[nn.Module] = []
    prev = 3
    for spec in _VGG16_CONV3_CHANNELS:
        if spec == "M":
            layers.append(nn.MaxPool2d(2, 2))
            continue
        layers.append(nn.Conv2d(prev, spec, kernel_size=3, padding=1))
        layers.append(nn.ReLU(inplace=True))
        prev = spec
    return nn.Sequential(*layers)


def _seeded_init(module: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            std = (2.0 / fan_in) ** 0.5
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                m.bias.zero_()


def _to_tensor(image: np.ndarray) -> torch.Tensor:
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {arr.shape}")
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


class TextureEncoder:
    """VGG-16 conv3-block features, (H, W, 3) in [0,1] -> (H/4, W/4, 256)."""

    def __init__(self, weights_path: str | None = None, seed: int = 0):
        torch.set_num_threads(1)
        self.trunk = _build_conv3_trunk()
        self.pretrained = False
        state = self._load_weights(weights_path)
        if state is not None:
            self.trunk.load_state_dict(state)
            self.pretrained = True
        else:
            log.warning("no pretrained VGG-16 weights available; using the "
                        "seed-%d initialization (features are deterministic "
                        "but not perceptual)", seed)
            _seeded_init(self.trunk, seed)
        self.trunk.eval()

    @staticmethod
    def _load_weights(weights_path):
        source = None
        if weights_path:
            source = torch.load(weights_path, map_location="cpu",
                                weights_only=True)
        else:
            try:
                from torchvision.models import VGG16_Weights, vgg16
                model = vgg16(weights=VGG16_Weights.IMAGENET1K_V1)
                source = model.features.state_dict()
            except Exception as exc:   # no cache and no network
                log.info("torchvision VGG-16 weights unavailable: %s", exc)
                return None
        trunk = _build_conv3_trunk()
        wanted = trunk.state_dict()
        picked = {k: v for k, v in source.items() if k in wanted}
        if set(picked) != set(wanted):
            raise ValueError("weights file does not cover the conv3 trunk")
        return picked

    @property
    def channels(self) -> int:
        return 256

    def __call__(self, image: np.ndarray) -> np.ndarray:
        x = _to_tensor(image)
        if self.pretrained:
            x = (x - _IMAGENET_MEAN) / _IMAGENET_STD
        with torch.no_grad():
            out = self.trunk(x)
        return out.squeeze(0).permute(1, 2, 0).numpy().astype(np.float32)


class SemanticEncoder:
    """Per-pixel embeddings, (H, W, 3) -> (H, W, 64), unit-norm per pixel."""

    def __init__(self, weights_path: str | None = None, seed: int = 1):
        torch.set_num_threads(1)
        self.net = nn.Sequential(
            nn.Conv2d(3, 32, 3, padding=1), nn.Tanh(),
            nn.Conv2d(32, SEMANTIC_DIM, 3, padding=1), nn.Tanh(),
        )
        if weights_path:
            self.net.load_state_dict(torch.load(weights_path, map_location="cpu",
                                                weights_only=True))
        else:
            _seeded_init(self.net, seed)
        self.net.eval()

    @property
    def channels(self) -> int:
        return SEMANTIC_DIM

    def __call__(self, image: np.ndarray) -> np.ndarray:
        x = _to_tensor(image)
        with torch.no_grad():
            out = self.net(x)
            out = out / out.norm(dim=1, keepdim=True).clamp_min(1e-8)
        return out.squeeze(0).permute(1, 2, 0).numpy().astype(np.float32)


# canonical colors for common words; anything else hashes to a stable color
_WORD_COLORS = {
    "black": (0.05, 0.05, 0.05), "white": (0.95, 0.95, 0.95),
    "gray": (0.5, 0.5, 0.5), "red": (0.85, 0.1, 0.1),
    "green": (0.1, 0.7, 0.2), "blue": (0.15, 0.25, 0.85),
    "yellow": (0.9, 0.85, 0.1), "orange": (0.95, 0.55, 0.1),
    "purple": (0.55, 0.15, 0.7), "cyan": (0.1, 0.8, 0.8),
    "pink": (0.95, 0.6, 0.7), "brown": (0.5, 0.33, 0.15),
    "sky": (0.5, 0.7, 0.95), "background": (0.2, 0.2, 0.25),
}


def _color_for_word(word: str) -> np.ndarray:
    key = word.strip().lower()
    if key in _WORD_COLORS:
        return np.asarray(_WORD_COLORS[key], dtype=np.float32)
    digest = hashlib.sha256(key.encode()).digest()
    return np.asarray([b / 255.0 for b in digest[:3]], dtype=np.float32)


def embed_text(words: list[str], encoder: SemanticEncoder,
               patch_size: int = 32) -> np.ndarray:
    """One embedding row per word, in the semantic pixel space.

    Each word becomes a canonical color patch pushed through the pixel
    encoder and mean-pooled, so text and pixel embeddings are directly
    comparable. Duplicate words produce identical rows.
    """
    if not words:
        raise ValueError("at least one label word is required")
    rows = []
    for word in words:
        patch = np.tile(_color_for_word(word), (patch_size, patch_size, 1))
        feat = encoder(patch).reshape(-1, encoder.channels)
        pooled = feat.mean(axis=0)
        pooled /= max(float(np.linalg.norm(pooled)), 1e-8)
        rows.append(pooled)
    return np.stack(rows).astype(np.float32)
