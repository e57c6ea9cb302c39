"""Generator, PatchGAN discriminator and the frozen perceptual feature stack."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .errors import CheckpointError, NumericFault, ParameterError


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 3
    out_channels: int = 1
    base_width: int = 64
    n_residual_blocks: int = 9
    downsample_steps: int = 2
    use_dropout: bool = False
    dropout_p: float = 0.5


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 4  # structure (3) + angiography (1)
    kernel: int = 4
    strides: tuple = (2, 2, 2, 1, 1)
    widths: tuple = (64, 128, 256, 512, 1)
    padding: int = 1
    slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.strides) != len(self.widths):
            raise ParameterError("strides and widths must have one entry per layer")
        if not self.strides:
            raise ParameterError("discriminator needs at least one layer")
        if self.widths[-1] != 1:
            raise ParameterError("last discriminator layer must map to one channel")

    @property
    def conv_layers(self):
        return len(self.strides)


def image_discriminator_config() -> DiscriminatorConfig:
    """A non-patch ("regular") discriminator whose scores each see >= 256 px.

    Used for the PatchGAN ablation: two extra stride-2 layers push the
    receptive field to 286 px, i.e. every score covers a full 256 x 256 input.
    """
    return DiscriminatorConfig(strides=(2, 2, 2, 2, 2, 1, 1), widths=(64, 128, 256, 512, 512, 512, 1))


def receptive_field(cfg: DiscriminatorConfig) -> int:
    r, jump = 1, 1
    for s in cfg.strides:
        r += (cfg.kernel - 1) * jump
        jump *= s
    return r


def score_map_size(n: int, cfg: DiscriminatorConfig) -> int:
    for s in cfg.strides:
        n = (n + 2 * cfg.padding - cfg.kernel) // s + 1
    return n


def init_weights(module: nn.Module, seed: int, std: float = 0.02) -> None:
    """N(0, std) conv weights, zero biases, drawn from a private seeded stream."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in module.named_parameters():
            if name.endswith("weight"):
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * std)
            else:
                p.zero_()


def _check_finite(x, where):
    if not torch.isfinite(x).all():
        raise NumericFault(f"non-finite activation after {where}", term=where)


class ResidualBlock(nn.Module):
    def __init__(self, dim, dropout=0.0):
        super().__init__()
        layers = [
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3),
            nn.InstanceNorm2d(dim),
            nn.ReLU(),
        ]
        if dropout > 0:
            layers.append(nn.Dropout(dropout))
        layers += [
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, kernel_size=3),
            nn.InstanceNorm2d(dim),
            nn.ReLU(),
        ]
        self.body = nn.Sequential(*layers)

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """ResNet encoder / residual core / decoder; output in [0, 1]."""

    def __init__(self, cfg: GeneratorConfig = GeneratorConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        self.stem = nn.Sequential(
            nn.ReflectionPad2d(3),
            nn.Conv2d(cfg.in_channels, w, kernel_size=7),
            nn.InstanceNorm2d(w),
            nn.ReLU(),
        )
        down = []
        for _ in range(cfg.downsample_steps):
            down += [nn.Conv2d(w, 2 * w, kernel_size=3, stride=2, padding=1), nn.InstanceNorm2d(2 * w), nn.ReLU()]
            w *= 2
        self.down = nn.Sequential(*down)
        p = cfg.dropout_p if cfg.use_dropout else 0.0
        self.blocks = nn.Sequential(*[ResidualBlock(w, p) for _ in range(cfg.n_residual_blocks)])
        up = []
        for _ in range(cfg.downsample_steps):
            up += [
                nn.ConvTranspose2d(w, w // 2, kernel_size=3, stride=2, padding=1, output_padding=1),
                nn.InstanceNorm2d(w // 2),
                nn.ReLU(),
            ]
            w //= 2
        self.up = nn.Sequential(*up)
        self.head = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(w, cfg.out_channels, kernel_size=7), nn.Tanh())
        init_weights(self, seed)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.cfg.in_channels:
            raise ParameterError(f"generator expects (N, {self.cfg.in_channels}, H, W), got {tuple(x.shape)}")
        m = 2 ** self.cfg.downsample_steps
        if x.shape[2] % m or x.shape[3] % m:
            raise ParameterError(f"input size {tuple(x.shape[2:])} not divisible by {m}")
        for name in ("stem", "down", "blocks", "up", "head"):
            x = getattr(self, name)(x)
            _check_finite(x, f"generator.{name}")
        return (x + 1.0) * 0.5


class PatchDiscriminator(nn.Module):
    """Conditional PatchGAN: one probability per receptive-field patch."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig(), seed: int = 1):
        super().__init__()
        self.cfg = cfg
        layers = []
        c_in = cfg.in_channels
        last = cfg.conv_layers - 1
        for i, (s, c_out) in enumerate(zip(cfg.strides, cfg.widths)):
            layers.append(nn.Conv2d(c_in, c_out, kernel_size=cfg.kernel, stride=s, padding=cfg.padding))
            if i == last:
                layers.append(nn.Sigmoid())
            else:
                if i > 0:
                    layers.append(nn.InstanceNorm2d(c_out))
                layers.append(nn.LeakyReLU(cfg.slope))
            c_in = c_out
        self.net = nn.Sequential(*layers)
        init_weights(self, seed)

    def forward(self, condition, candidate):
        if condition.shape[2:] != candidate.shape[2:]:
            raise ParameterError(
                f"condition {tuple(condition.shape[2:])} and candidate {tuple(candidate.shape[2:])} differ in size"
            )
        x = torch.cat([condition, candidate], dim=1)
        if x.shape[1] != self.cfg.in_channels:
            raise ParameterError(f"discriminator expects {self.cfg.in_channels} stacked channels, got {x.shape[1]}")
        return self.net(x)


# ------------------------------------------------------------ features

VGG19_BLOCKS = (2, 2, 4, 4, 4)
VGG19_WIDTHS = (64, 128, 256, 512, 512)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class FeatureExtractorConfig:
    mode: str = "random"  # "random" | "pretrained"
    seed: int = 0
    tap: tuple = (3, 3)  # (pool index i, conv index j) -> j-th conv of block i
    widths: tuple = VGG19_WIDTHS
    weights_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "tap", tuple(int(t) for t in self.tap))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.mode not in ("random", "pretrained"):
            raise ParameterError(f"unknown feature extractor mode {self.mode!r}")
        i, j = self.tap
        if not 1 <= i <= len(VGG19_BLOCKS) or not 1 <= j <= VGG19_BLOCKS[i - 1]:
            raise ParameterError(f"tap {self.tap} does not exist in a VGG19 stack")
        if self.mode == "pretrained" and not self.weights_path:
            raise ParameterError("pretrained feature extractor needs weights_path")


class FeatureExtractor(nn.Module):
    """VGG19-style conv stack truncated at a tap point; never trained.

    Returns the post-ReLU activation of the tapped convolution.
    """

    def __init__(self, cfg: FeatureExtractorConfig = FeatureExtractorConfig()):
        super().__init__()
        self.cfg = cfg
        ti, tj = cfg.tap
        layers = []
        c_in = 3
        for block in range(ti):
            n_conv = VGG19_BLOCKS[block] if block < ti - 1 else tj
            for _ in range(n_conv):
                layers += [nn.Conv2d(c_in, cfg.widths[block], kernel_size=3, padding=1), nn.ReLU()]
                c_in = cfg.widths[block]
            if block < ti - 1:
                layers.append(nn.MaxPool2d(2, 2))
        self.net = nn.Sequential(*layers)
        if cfg.mode == "pretrained":
            self._load(Path(cfg.weights_path))
            self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
            self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        else:
            self._random_init(cfg.seed)
            self.mean = self.std = None
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def _random_init(self, seed):
        # He-scaled so activations keep their magnitude through the stack
        gen = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for m in self.net:
                if isinstance(m, nn.Conv2d):
                    fan_in = m.in_channels * 9
                    m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * np.sqrt(2.0 / fan_in))
                    m.bias.zero_()

    def _load(self, path):
        if not path.is_file():
            raise CheckpointError(f"feature extractor weights not found: {path}")
        try:
            state = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:  # torch raises a zoo of types for bad files
            raise CheckpointError(f"cannot read feature extractor weights {path}: {exc}") from exc
        if not isinstance(state, dict):
            raise CheckpointError(f"{path}: expected a state dict")
        # accept any state dict whose 4-d weights appear in VGG layer order
        weights = [(k, v) for k, v in state.items() if k.endswith("weight") and getattr(v, "dim", lambda: 0)() == 4]
        convs = [m for m in self.net if isinstance(m, nn.Conv2d)]
        if len(weights) < len(convs):
            raise CheckpointError(f"{path}: holds {len(weights)} conv layers, tap needs {len(convs)}")
        with torch.no_grad():
            for conv, (key, w) in zip(convs, weights):
                b = state.get(key[: -len("weight")] + "bias")
                if tuple(w.shape) != tuple(conv.weight.shape) or b is None or tuple(b.shape) != tuple(conv.bias.shape):
                    raise CheckpointError(f"{path}: layer {key} has shape {tuple(w.shape)}, expected {tuple(conv.weight.shape)}")
                conv.weight.copy_(w)
                conv.bias.copy_(b)

    def train(self, mode=True):
        # frozen: stays in eval mode whatever the caller asks
        return super().train(False)

    def forward(self, x):
        if x.shape[1] == 1:
            x = x.expand(-1, 3, -1, -1)
        if self.mean is not None:
            x = (x - self.mean) / self.std
        return self.net(x)


# ---------------------------------------------------------- array API


def image_to_tensor(img, dtype=torch.float32) -> torch.Tensor:
    """(H, W) or (H, W, C) array -> (1, C, H, W) tensor."""
    a = np.asarray(img)
    if a.ndim == 2:
        a = a[:, :, None]
    return torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1))).to(dtype).unsqueeze(0)


def tensor_to_image(t: torch.Tensor) -> np.ndarray:
    a = t.detach().cpu().double().numpy()[0].transpose(1, 2, 0)
    return a[:, :, 0] if a.shape[2] == 1 else a


def generator_forward(params, cfg: GeneratorConfig, img) -> np.ndarray:
    g = Generator(cfg)
    g.load_state_dict(params)
    g.eval()
    with torch.no_grad():
        return tensor_to_image(g(image_to_tensor(img)))


def discriminator_forward(params, cfg: DiscriminatorConfig, condition, candidate) -> np.ndarray:
    d = PatchDiscriminator(cfg)
    d.load_state_dict(params)
    d.eval()
    with torch.no_grad():
        return d(image_to_tensor(condition), image_to_tensor(candidate))[0, 0].double().numpy()


def feature_extract(fx: FeatureExtractor, img) -> np.ndarray:
    """Features at the tap point as an (H', W', C') array."""
    with torch.no_grad():
        return tensor_to_image(fx(image_to_tensor(img)))


def named_params(module: nn.Module) -> "OrderedDict[str, torch.Tensor]":
    return OrderedDict((k, v.detach().clone()) for k, v in module.state_dict().items())
