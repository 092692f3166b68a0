"""Network building blocks.

Three block kinds over the engine ops, all channel-preserving:

* ``residual``   — pre-activation pair of 3x3 conv stages plus identity
  shortcut (1x1 strided projection when stride is 2);
* ``mbconv``     — inverted residual: 1x1 expand -> 3x3 depthwise ->
  1x1 linear project, shortcut at stride 1;
* ``mmbconv``    — same topology with the expand and/or project
  convolutions widened to padded 3x3, trading parameters for spatial
  context. Spatial behavior is identical to mbconv: only the depthwise
  stage ever carries the stride.

Convolutions feeding a batch norm are bias-free. Stride-1 blocks zero
their final BN gamma at init, making every fresh block an exact
identity map (a stability property the tests pin down).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import (
    ConvSpec,
    DiffValue,
    RunningStats,
    add,
    batchnorm2d,
    conv2d,
    leaf,
    relu6,
)
from .errors import ConfigError

BLOCK_KINDS = ("residual", "mbconv", "mmbconv")
MMB_STAGE_CHOICES = ("both", "expand", "project")


@dataclass(frozen=True)
class BlockConfig:
    """Declarative description of one block (input channels == output)."""

    kind: str
    channels: int
    expansion: float = 6.0
    stride: int = 1
    mmb_stages: str = "both"  # which 1x1 convs become 3x3 (mmbconv only)

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ConfigError(f"unknown block kind {self.kind!r}")
        if self.channels < 1:
            raise ConfigError(f"channels must be positive, got {self.channels}")
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")
        if self.mmb_stages not in MMB_STAGE_CHOICES:
            raise ConfigError(f"mmb_stages must be one of {MMB_STAGE_CHOICES}")
        if self.expanded < self.channels:
            raise ConfigError(
                f"expanded width {self.expanded} below channels {self.channels}"
            )

    @property
    def expanded(self) -> int:
        return int(round(self.expansion * self.channels))

    @property
    def has_shortcut(self) -> bool:
        return self.stride == 1


def kaiming_normal(rng: np.random.Generator, spec: ConvSpec, dtype=np.float32) -> np.ndarray:
    """Fan-in normal init for conv weights."""
    fan_in = spec.kernel * spec.kernel * spec.in_channels // spec.groups
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(spec.weight_shape) * std).astype(dtype)


class Stage:
    """conv (bias-free) -> optional BN -> optional ReLU6."""

    def __init__(self, spec: ConvSpec, rng, *, bn=True, act=False, gamma_init=1.0, dtype=np.float32):
        self.spec = spec
        self.bn = bn
        self.act = act
        self.w = leaf(kaiming_normal(rng, spec, dtype))
        if spec.has_bias:
            self.b = leaf(np.zeros(spec.out_channels, dtype))
        else:
            self.b = None
        if bn:
            c = spec.out_channels
            self.gamma = leaf(np.full(c, gamma_init, dtype))
            self.beta = leaf(np.zeros(c, dtype))
            self.stats = RunningStats(c, dtype)

    def forward(self, x: DiffValue, training: bool) -> DiffValue:
        y = conv2d(x, self.w, self.b, self.spec)
        if self.bn:
            y = batchnorm2d(y, self.gamma, self.beta, self.stats, training)
        if self.act:
            y = relu6(y)
        return y

    def named_params(self, prefix: str):
        yield f"{prefix}/w", self.w
        if self.b is not None:
            yield f"{prefix}/b", self.b
        if self.bn:
            yield f"{prefix}/gamma", self.gamma
            yield f"{prefix}/beta", self.beta

    def named_stats(self, prefix: str):
        if self.bn:
            yield prefix, self.stats


def _bn_relu(c, rng, dtype):
    """Standalone BN+ReLU6 pair (pre-activation residual wiring, head)."""
    return {
        "gamma": leaf(np.ones(c, dtype)),
        "beta": leaf(np.zeros(c, dtype)),
        "stats": RunningStats(c, dtype),
    }


class MBConvBlock:
    """Inverted residual; covers both mbconv and the widened mmbconv."""

    def __init__(self, cfg: BlockConfig, rng, dtype=np.float32):
        if cfg.kind not in ("mbconv", "mmbconv"):
            raise ConfigError(f"MBConvBlock got kind {cfg.kind!r}")
        self.config = cfg
        c, ct = cfg.channels, cfg.expanded
        ek = 3 if cfg.kind == "mmbconv" and cfg.mmb_stages in ("both", "expand") else 1
        pk = 3 if cfg.kind == "mmbconv" and cfg.mmb_stages in ("both", "project") else 1
        self.expand = Stage(
            ConvSpec(c, ct, kernel=ek, padding=ek // 2), rng, act=True, dtype=dtype
        )
        self.dw = Stage(
            ConvSpec(ct, ct, kernel=3, stride=cfg.stride, padding=1, groups=ct),
            rng,
            act=True,
            dtype=dtype,
        )
        self.project = Stage(
            ConvSpec(ct, c, kernel=pk, padding=pk // 2),
            rng,
            gamma_init=0.0 if cfg.has_shortcut else 1.0,
            dtype=dtype,
        )
        self.stages = [("expand", self.expand), ("dw", self.dw), ("project", self.project)]

    def forward(self, x: DiffValue, training: bool) -> DiffValue:
        if x.value.shape[1] != self.config.channels:
            raise ConfigError(
                f"block expects {self.config.channels} channels, got {x.value.shape[1]}"
            )
        h = self.expand.forward(x, training)
        h = self.dw.forward(h, training)
        h = self.project.forward(h, training)
        if self.config.has_shortcut:
            h = add(x, h)
        return h

    def named_params(self, prefix: str):
        for name, st in self.stages:
            yield from st.named_params(f"{prefix}/{name}")

    def named_stats(self, prefix: str):
        for name, st in self.stages:
            yield from st.named_stats(f"{prefix}/{name}")


class ResidualBlock:
    """Pre-activation residual pair: BN-ReLU6-conv, twice, plus shortcut.

    With the second BN's gamma zeroed (the stride-1 init) the branch
    vanishes and the block is the identity.
    """

    def __init__(self, cfg: BlockConfig, rng, dtype=np.float32):
        if cfg.kind != "residual":
            raise ConfigError(f"ResidualBlock got kind {cfg.kind!r}")
        self.config = cfg
        c = cfg.channels
        self.pre1 = _bn_relu(c, rng, dtype)
        self.conv1 = Stage(
            ConvSpec(c, c, kernel=3, stride=cfg.stride, padding=1), rng, bn=False, dtype=dtype
        )
        self.pre2 = _bn_relu(c, rng, dtype)
        if cfg.has_shortcut:
            self.pre2["gamma"].value[:] = 0.0
        self.conv2 = Stage(ConvSpec(c, c, kernel=3, padding=1), rng, bn=False, dtype=dtype)
        if cfg.has_shortcut:
            self.shortcut = None
        else:
            self.shortcut = Stage(
                ConvSpec(c, c, kernel=1, stride=cfg.stride), rng, bn=False, dtype=dtype
            )
        self.stages = [("conv1", self.conv1), ("conv2", self.conv2)]
        if self.shortcut is not None:
            self.stages.append(("shortcut", self.shortcut))

    def forward(self, x: DiffValue, training: bool) -> DiffValue:
        if x.value.shape[1] != self.config.channels:
            raise ConfigError(
                f"block expects {self.config.channels} channels, got {x.value.shape[1]}"
            )
        h = relu6(batchnorm2d(x, self.pre1["gamma"], self.pre1["beta"], self.pre1["stats"], training))
        h = self.conv1.forward(h, training)
        h = relu6(batchnorm2d(h, self.pre2["gamma"], self.pre2["beta"], self.pre2["stats"], training))
        h = self.conv2.forward(h, training)
        base = x if self.shortcut is None else self.shortcut.forward(x, training)
        return add(base, h)

    def named_params(self, prefix: str):
        for tag, pre in (("bn1", self.pre1), ("bn2", self.pre2)):
            yield f"{prefix}/{tag}/gamma", pre["gamma"]
            yield f"{prefix}/{tag}/beta", pre["beta"]
        for name, st in self.stages:
            yield from st.named_params(f"{prefix}/{name}")

    def named_stats(self, prefix: str):
        yield f"{prefix}/bn1", self.pre1["stats"]
        yield f"{prefix}/bn2", self.pre2["stats"]


class Stem:
    """Two 3x3 stride-2 conv+BN+ReLU6 stages: (N,3,H,W) -> (N,C0,H/4,W/4)."""

    def __init__(self, out_channels: int, rng, in_channels=3, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.conv1 = Stage(
            ConvSpec(in_channels, out_channels, kernel=3, stride=2, padding=1),
            rng,
            act=True,
            dtype=dtype,
        )
        self.conv2 = Stage(
            ConvSpec(out_channels, out_channels, kernel=3, stride=2, padding=1),
            rng,
            act=True,
            dtype=dtype,
        )
        self.stages = [("conv1", self.conv1), ("conv2", self.conv2)]

    def forward(self, x: DiffValue, training: bool) -> DiffValue:
        h, w = x.value.shape[2:]
        if h % 4 or w % 4:
            raise ConfigError(f"stem needs H,W divisible by 4, got {h}x{w}")
        return self.conv2.forward(self.conv1.forward(x, training), training)

    def named_params(self, prefix: str):
        for name, st in self.stages:
            yield from st.named_params(f"{prefix}/{name}")

    def named_stats(self, prefix: str):
        for name, st in self.stages:
            yield from st.named_stats(f"{prefix}/{name}")


def build_block(cfg: BlockConfig, rng, dtype=np.float32):
    if cfg.kind == "residual":
        return ResidualBlock(cfg, rng, dtype)
    return MBConvBlock(cfg, rng, dtype)


def block_param_shapes(cfg: BlockConfig) -> dict[str, tuple]:
    """Closed-form parameter shapes implied by a config alone.

    Independent arithmetic used by the shape-audit property test: the
    shapes a constructed block actually carries must match these.
    """
    c, ct = cfg.channels, cfg.expanded
    if cfg.kind == "residual":
        shapes = {
            "bn1/gamma": (c,),
            "bn1/beta": (c,),
            "bn2/gamma": (c,),
            "bn2/beta": (c,),
            "conv1/w": (c, c, 3, 3),
            "conv2/w": (c, c, 3, 3),
        }
        if not cfg.has_shortcut:
            shapes["shortcut/w"] = (c, c, 1, 1)
        return shapes
    ek = 3 if cfg.kind == "mmbconv" and cfg.mmb_stages in ("both", "expand") else 1
    pk = 3 if cfg.kind == "mmbconv" and cfg.mmb_stages in ("both", "project") else 1
    return {
        "expand/w": (ct, c, ek, ek),
        "expand/gamma": (ct,),
        "expand/beta": (ct,),
        "dw/w": (ct, 1, 3, 3),
        "dw/gamma": (ct,),
        "dw/beta": (ct,),
        "project/w": (c, ct, pk, pk),
        "project/gamma": (c,),
        "project/beta": (c,),
    }


def block_weight_count(cfg: BlockConfig) -> int:
    """Total conv-weight scalars (BN params excluded)."""
    return sum(
        int(np.prod(shape))
        for name, shape in block_param_shapes(cfg).items()
        if name.endswith("/w")
    )
