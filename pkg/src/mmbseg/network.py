"""Multi-branch encoder-decoder segmentation network.

Topology: a stem divides the input resolution by 4, then S branches
(resolution divisors 4, 8, ..., 4*2^(S-1)) each host the same number of
blocks on the encoder and decoder sides; the bottom branch runs its
decoder-side blocks in place. Channel changes between branches go
through 1x1 conv+BN+ReLU6 adapters because blocks preserve channels;
downsampling is the first (stride-2) block of each deeper branch, so
every stage stays learnable. Decoder levels upsample x2 bilinearly and
merge the encoder skip either by concatenation + a 1x1 fusing adapter
(default) or by addition (legal when neighboring branch widths match).
The head is BN+ReLU6, a biased 1x1 conv to the class count, and a x4
bilinear upsample back to input resolution, so logits always match the
input extents.

The uniform presets give every branch identical width and depth; the
baseline preset is the conventional pyramid whose capacity sits in the
low-resolution branches. Both are sized so the pyramid-residual baseline
and the uniform widened-MBConv variant land within a few percent of
each other in total parameters, keeping comparisons capacity-fair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .blocks import BLOCK_KINDS, BlockConfig, Stage, Stem, build_block
from .engine import (
    ConvSpec,
    DiffValue,
    add,
    batchnorm2d,
    concat_channels,
    leaf,
    relu6,
    resize_bilinear,
)
from .engine.ops import RunningStats
from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class NetConfig:
    scales: int
    channel_schedule: tuple[int, ...]
    blocks_per_branch: tuple[int, ...]
    block_kind: str = "mmbconv"
    expansion: float = 6.0
    num_classes: int = 6
    stem_channels: int = 0  # 0 -> channel_schedule[0]
    skip_merge: str = "concat"
    mmb_stages: str = "both"

    def __post_init__(self):
        object.__setattr__(self, "channel_schedule", tuple(self.channel_schedule))
        object.__setattr__(self, "blocks_per_branch", tuple(self.blocks_per_branch))
        if self.scales < 2:
            raise ConfigError(f"need at least 2 scales, got {self.scales}")
        if len(self.channel_schedule) != self.scales:
            raise ConfigError(
                f"channel_schedule has {len(self.channel_schedule)} entries for {self.scales} scales"
            )
        if len(self.blocks_per_branch) != self.scales:
            raise ConfigError(
                f"blocks_per_branch has {len(self.blocks_per_branch)} entries for {self.scales} scales"
            )
        if self.block_kind not in BLOCK_KINDS:
            raise ConfigError(f"unknown block kind {self.block_kind!r}")
        if self.skip_merge not in ("concat", "add"):
            raise ConfigError(f"skip_merge must be concat or add, got {self.skip_merge!r}")
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if any(c < 1 for c in self.channel_schedule) or any(b < 1 for b in self.blocks_per_branch):
            raise ConfigError("channel and block counts must be positive")
        if self.skip_merge == "add" and len(set(self.channel_schedule)) != 1:
            raise ConfigError("add-merge requires equal channels on all branches")

    @property
    def is_uniform(self) -> bool:
        """Every branch has the same width and the same depth."""
        return len(set(self.channel_schedule)) == 1 and len(set(self.blocks_per_branch)) == 1

    @property
    def stem_width(self) -> int:
        return self.stem_channels or self.channel_schedule[0]

    @property
    def divisor(self) -> int:
        """Input extents must be divisible by this (stem /4, then S-1 halvings)."""
        return 2 ** (self.scales + 1)

    def to_dict(self) -> dict:
        return {
            "scales": self.scales,
            "channel_schedule": list(self.channel_schedule),
            "blocks_per_branch": list(self.blocks_per_branch),
            "block_kind": self.block_kind,
            "expansion": self.expansion,
            "num_classes": self.num_classes,
            "stem_channels": self.stem_channels,
            "skip_merge": self.skip_merge,
            "mmb_stages": self.mmb_stages,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown NetConfig fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "NetConfig":
        return cls.from_dict(json.loads(text))


def preset(name: str, num_classes: int = 6, **overrides) -> NetConfig:
    """Named desk-scale configurations (see README for the rationale)."""
    table = {
        "baseline": dict(
            channel_schedule=(32, 64, 128, 256),
            blocks_per_branch=(2, 2, 2, 2),
            block_kind="residual",
        ),
        "uniform": dict(
            channel_schedule=(48, 48, 48, 48),
            blocks_per_branch=(3, 3, 3, 3),
            block_kind="residual",
        ),
        "uniform-mbconv": dict(
            channel_schedule=(48, 48, 48, 48),
            blocks_per_branch=(3, 3, 3, 3),
            block_kind="mbconv",
        ),
        "uniform-mmbconv": dict(
            channel_schedule=(48, 48, 48, 48),
            blocks_per_branch=(3, 3, 3, 3),
            block_kind="mmbconv",
        ),
        "tempered": dict(
            channel_schedule=(56, 48, 40, 32),
            blocks_per_branch=(3, 3, 3, 3),
            block_kind="residual",
        ),
        "tempered-mmbconv": dict(
            channel_schedule=(56, 48, 40, 32),
            blocks_per_branch=(3, 3, 3, 3),
            block_kind="mmbconv",
        ),
    }
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(table)}")
    kw = dict(table[name])
    kw.update(scales=4, num_classes=num_classes)
    kw.update(overrides)
    return NetConfig(**kw)


class Network:
    """Built parameter set plus forward pass for a NetConfig."""

    def __init__(self, config: NetConfig, seed: int, dtype=np.float32):
        self.config = config
        self.seed = int(seed)
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        s = config.scales
        ch = config.channel_schedule

        def blk(level: int, stride: int) -> object:
            return build_block(
                BlockConfig(
                    config.block_kind,
                    ch[level],
                    expansion=config.expansion,
                    stride=stride,
                    mmb_stages=config.mmb_stages,
                ),
                rng,
                dtype,
            )

        def adapter(cin: int, cout: int) -> Stage:
            return Stage(ConvSpec(cin, cout, kernel=1), rng, act=True, dtype=dtype)

        self.stem = Stem(config.stem_width, rng, dtype=dtype)
        self.adapters: list[Stage] = []
        self.enc: list[list] = []
        prev = config.stem_width
        for i in range(s):
            self.adapters.append(adapter(prev, ch[i]))
            blocks = []
            for j in range(config.blocks_per_branch[i]):
                stride = 2 if (i > 0 and j == 0) else 1
                blocks.append(blk(i, stride))
            self.enc.append(blocks)
            prev = ch[i]

        # decoder side, bottom first (runs in place at the lowest resolution)
        self.dec: dict[int, list] = {}
        self.fusers: dict[int, Stage] = {}
        self.dec[s - 1] = [blk(s - 1, 1) for _ in range(config.blocks_per_branch[s - 1])]
        for i in range(s - 2, -1, -1):
            if config.skip_merge == "concat":
                self.fusers[i] = adapter(ch[i + 1] + ch[i], ch[i])
            self.dec[i] = [blk(i, 1) for _ in range(config.blocks_per_branch[i])]

        c0, k = ch[0], config.num_classes
        self.head_gamma = leaf(np.ones(c0, dtype))
        self.head_beta = leaf(np.zeros(c0, dtype))
        self.head_stats = RunningStats(c0, dtype)
        self.head_conv = Stage(
            ConvSpec(c0, k, kernel=1, has_bias=True), rng, bn=False, dtype=dtype
        )

    # ---- forward ----------------------------------------------------------

    def forward(self, x: DiffValue, training: bool = False) -> DiffValue:
        cfg = self.config
        if x.value.ndim != 4:
            raise DimensionError("rank", 4, x.value.ndim, "network input")
        if x.value.shape[1] != 3:
            raise DimensionError("channels", 3, x.value.shape[1], "network input")
        h, w = x.value.shape[2:]
        if h % cfg.divisor or w % cfg.divisor:
            raise DimensionError(
                "extents", f"multiple of {cfg.divisor}", f"{h}x{w}", "network input"
            )

        t = self.stem.forward(x, training)
        skips = []
        for i in range(cfg.scales):
            t = self.adapters[i].forward(t, training)
            for block in self.enc[i]:
                t = block.forward(t, training)
            skips.append(t)

        d = skips[-1]
        for block in self.dec[cfg.scales - 1]:
            d = block.forward(d, training)
        for i in range(cfg.scales - 2, -1, -1):
            skip = skips[i]
            up = resize_bilinear(d, skip.value.shape[2], skip.value.shape[3])
            if cfg.skip_merge == "concat":
                d = self.fusers[i].forward(concat_channels([up, skip]), training)
            else:
                d = add(up, skip)
            for block in self.dec[i]:
                d = block.forward(d, training)

        d = relu6(batchnorm2d(d, self.head_gamma, self.head_beta, self.head_stats, training))
        logits = self.head_conv.forward(d, training)
        return resize_bilinear(logits, h, w)

    # ---- parameter iteration ---------------------------------------------

    def named_params(self):
        yield from self.stem.named_params("stem")
        for i in range(self.config.scales):
            yield from self.adapters[i].named_params(f"enc{i}/adapt")
            for j, block in enumerate(self.enc[i]):
                yield from block.named_params(f"enc{i}/b{j}")
        for i in range(self.config.scales - 1, -1, -1):
            if i in self.fusers:
                yield from self.fusers[i].named_params(f"dec{i}/fuse")
            for j, block in enumerate(self.dec[i]):
                yield from block.named_params(f"dec{i}/b{j}")
        yield "head/bn/gamma", self.head_gamma
        yield "head/bn/beta", self.head_beta
        yield from self.head_conv.named_params("head/conv")

    def named_stats(self):
        yield from self.stem.named_stats("stem")
        for i in range(self.config.scales):
            yield from self.adapters[i].named_stats(f"enc{i}/adapt")
            for j, block in enumerate(self.enc[i]):
                yield from block.named_stats(f"enc{i}/b{j}")
        for i in range(self.config.scales - 1, -1, -1):
            if i in self.fusers:
                yield from self.fusers[i].named_stats(f"dec{i}/fuse")
            for j, block in enumerate(self.dec[i]):
                yield from block.named_stats(f"dec{i}/b{j}")
        yield "head/bn", self.head_stats

    def param_count(self) -> int:
        return sum(p.value.size for _, p in self.named_params())

    def zero_grads(self) -> None:
        for _, p in self.named_params():
            p.zero_grad()

    # ---- summaries ---------------------------------------------------------

    def describe(self) -> list[dict]:
        """Per-branch summary table; params column sums to param_count()."""
        per_prefix: dict[str, int] = {}
        for name, p in self.named_params():
            prefix = name.split("/")[0]
            per_prefix[prefix] = per_prefix.get(prefix, 0) + p.value.size
        cfg = self.config
        rows = [
            {
                "branch": "stem",
                "divisor": 4,
                "channels": cfg.stem_width,
                "blocks": 0,
                "params": per_prefix.get("stem", 0),
            }
        ]
        for i in range(cfg.scales):
            rows.append(
                {
                    "branch": f"branch{i}",
                    "divisor": 4 * 2 ** i,
                    "channels": cfg.channel_schedule[i],
                    "blocks": len(self.enc[i]) + len(self.dec[i]),
                    "params": per_prefix.get(f"enc{i}", 0) + per_prefix.get(f"dec{i}", 0),
                }
            )
        rows.append(
            {
                "branch": "head",
                "divisor": 4,
                "channels": cfg.num_classes,
                "blocks": 0,
                "params": per_prefix.get("head", 0),
            }
        )
        return rows


def build_network(cfg: NetConfig, seed: int, dtype=np.float32) -> Network:
    return Network(cfg, seed, dtype)
