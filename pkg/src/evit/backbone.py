"""Four-stage pyramid backbone built from bi-fovea blocks.

Layout: a three-conv stem halves the input once, then each of four stages
starts with a 2x2 stride-2 patch embedding and runs a string of blocks at
that resolution. A block is

    x = x + dwconv3x3(x)                    # conditional position encoding
    y = x + bfsa(layernorm(x))              # bi-fovea attention
    z = y + feedforward(layernorm(y))       # bi-fovea feedforward

and the classifier head is a 1x1 projection to ``head_channels``, GELU,
global average pooling and a fully connected layer.

``VARIANTS`` holds the four published model sizes; ``reduced_variant``
shrinks any of them (narrower channels, one block per stage) for tests and
toy training. ``build`` materializes a ``ModuleGraph`` whose parameters are
plain autodiff tensors addressed by dotted names such as
``stage3.block0.bfsa.sfa.q_weight``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .attention import (
    AttentionConfig,
    BfsaParams,
    ConnectionPattern,
    bfsa_forward,
    init_bfsa_params,
)
from .errors import ConfigError, ShapeError
from .feedforward import FfnConfig, FfnKind, FfnParams, feedforward_forward, init_ffn_params
from .init import conv_fan_out, ones, trunc_normal, zeros
from .maps import conv_bias, dwconv_bias, ln_channels
from .tensor import Tensor

# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StageConfig:
    blocks: int
    channels: int
    heads: int
    sfa_reduction: int
    dfa_reduction: int
    expansion: float


@dataclass(frozen=True)
class VariantSpec:
    name: str
    stem_channels: int
    stages: tuple[StageConfig, StageConfig, StageConfig, StageConfig]
    head_channels: int = 1280
    num_classes: int = 1000


def _make_variant(name, stem, channels, depths, heads, expansion) -> VariantSpec:
    sfa = (8, 4, 2, 1)
    dfa = (4, 2, 1, 1)
    stages = tuple(
        StageConfig(depths[i], channels[i], heads[i], sfa[i], dfa[i], expansion)
        for i in range(4)
    )
    return VariantSpec(name=name, stem_channels=stem, stages=stages)


VARIANTS: dict[str, VariantSpec] = {
    "tiny": _make_variant("tiny", 28, (56, 112, 224, 448), (2, 2, 6, 2), (1, 2, 4, 8), 3.0),
    "small": _make_variant("small", 32, (64, 128, 256, 512), (3, 3, 12, 3), (1, 2, 4, 8), 3.0),
    "base": _make_variant("base", 32, (64, 128, 256, 512), (4, 4, 27, 4), (2, 4, 8, 16), 3.5),
    "large": _make_variant("large", 36, (72, 144, 288, 576), (4, 4, 27, 4), (2, 4, 8, 16), 4.0),
}


def validate_spec(spec: VariantSpec) -> None:
    """Raise ConfigError on an internally inconsistent stage table."""
    if len(spec.stages) != 4:
        raise ConfigError(f"expected 4 stages, got {len(spec.stages)}")
    if spec.stem_channels < 1 or spec.head_channels < 1 or spec.num_classes < 1:
        raise ConfigError(
            f"stem/head/classes must be positive, got {spec.stem_channels}, "
            f"{spec.head_channels}, {spec.num_classes}"
        )
    for i, stage in enumerate(spec.stages, start=1):
        if stage.blocks < 1:
            raise ConfigError(f"stage{i} needs at least one block, got {stage.blocks}")
        # constructing the configs runs their own divisibility checks
        AttentionConfig(stage.channels, stage.heads, stage.sfa_reduction, stage.dfa_reduction)
        FfnConfig(stage.channels, stage.expansion, FfnKind.BFFN)


def stage_sides(spec: VariantSpec, input_size: int) -> list[int]:
    """Spatial side of each stage's map for a square input."""
    sides = []
    side = input_size
    for _ in range(5):  # stem + four stage embeddings, each halves
        if side % 2 != 0:
            raise ConfigError(
                f"input size {input_size} does not survive five halvings; "
                f"sizes must be divisible by 32"
            )
        side //= 2
        sides.append(side)
    return sides[1:]


def validate_input_size(spec: VariantSpec, input_size: int) -> None:
    """Check that every stage's attention reductions divide its map side."""
    if input_size < 32 or input_size % 32 != 0:
        raise ConfigError(f"input size must be a positive multiple of 32, got {input_size}")
    for i, (stage, side) in enumerate(zip(spec.stages, stage_sides(spec, input_size)), start=1):
        for label, red in (("sfa", stage.sfa_reduction), ("dfa", stage.dfa_reduction)):
            if side % red != 0:
                raise ConfigError(
                    f"stage{i} map side {side} (input {input_size}) not divisible "
                    f"by {label} reduction {red}"
                )


def reduced_variant(
    spec: VariantSpec,
    width_divisor: int = 4,
    blocks_per_stage: int | None = 1,
    num_classes: int | None = None,
) -> VariantSpec:
    """Shrink a variant for cheap tests: narrower channels, fewer blocks."""
    if spec.stem_channels % width_divisor != 0:
        raise ConfigError(
            f"stem channels {spec.stem_channels} not divisible by {width_divisor}"
        )
    stages = []
    for i, s in enumerate(spec.stages, start=1):
        if s.channels % width_divisor != 0:
            raise ConfigError(f"stage{i} channels {s.channels} not divisible by {width_divisor}")
        stages.append(
            replace(
                s,
                channels=s.channels // width_divisor,
                blocks=s.blocks if blocks_per_stage is None else blocks_per_stage,
            )
        )
    out = VariantSpec(
        name=f"{spec.name}-reduced" if width_divisor != 1 or blocks_per_stage else spec.name,
        stem_channels=spec.stem_channels // width_divisor,
        stages=tuple(stages),
        head_channels=spec.head_channels,
        num_classes=spec.num_classes if num_classes is None else num_classes,
    )
    validate_spec(out)
    return out


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------


@dataclass
class ConvParams:
    weight: Tensor
    bias: Tensor

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


@dataclass
class NormParams:
    gamma: Tensor
    beta: Tensor

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]


@dataclass
class BevBlockParams:
    cpe: ConvParams
    ln1: NormParams
    bfsa: BfsaParams
    ln2: NormParams
    ffn: FfnParams

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return (
            self.cpe.named(f"{prefix}.cpe")
            + self.ln1.named(f"{prefix}.ln1")
            + self.bfsa.named(f"{prefix}.bfsa")
            + self.ln2.named(f"{prefix}.ln2")
            + self.ffn.named(f"{prefix}.ffn")
        )


@dataclass
class StageParams:
    embed: ConvParams
    blocks: list[BevBlockParams]

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        pairs = self.embed.named(f"{prefix}.embed")
        for j, blk in enumerate(self.blocks):
            pairs += blk.named(f"{prefix}.block{j}")
        return pairs


@dataclass
class AttentionCapture:
    """Request to record attention weights at one block during a forward pass.

    ``stage`` is 1-based, ``block`` 0-based. After the pass, ``weights`` maps
    ``"sfa"``/``"dfa"`` to arrays of shape (N, heads, queries, keys).
    """

    stage: int
    block: int
    weights: dict[str, np.ndarray] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# the module graph
# ---------------------------------------------------------------------------


@dataclass
class ModuleGraph:
    spec: VariantSpec
    seed: int
    pattern: ConnectionPattern
    ffn_kind: FfnKind
    stem: tuple[ConvParams, ConvParams, ConvParams]
    stages: list[StageParams]
    head_proj: ConvParams
    head_fc_weight: Tensor
    head_fc_bias: Tensor

    def attention_config(self, stage_index: int) -> AttentionConfig:
        s = self.spec.stages[stage_index]
        return AttentionConfig(s.channels, s.heads, s.sfa_reduction, s.dfa_reduction)

    def ffn_config(self, stage_index: int) -> FfnConfig:
        s = self.spec.stages[stage_index]
        return FfnConfig(s.channels, s.expansion, self.ffn_kind)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        pairs: list[tuple[str, Tensor]] = []
        for i, conv in enumerate(self.stem, start=1):
            pairs += conv.named(f"stem.conv{i}")
        for i, stage in enumerate(self.stages, start=1):
            pairs += stage.named(f"stage{i}")
        pairs += self.head_proj.named("head.proj")
        pairs += [("head.fc.weight", self.head_fc_weight), ("head.fc.bias", self.head_fc_bias)]
        return pairs

    def parameter_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def gradients(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Backward pass returning one gradient array per parameter name."""
        return T.gradients(loss, self.named_parameters())

    def forward(
        self,
        images,
        capture: AttentionCapture | None = None,
        return_stage_maps: bool = False,
    ):
        """Run the backbone. ``images`` is (N, 3, H, W) with H = W divisible by 32.

        Returns logits (N, num_classes), or ``(logits, stage_maps)`` when
        ``return_stage_maps`` is set; stage maps are the four per-stage output
        tensors, useful for dense downstream heads.
        """
        x = images if isinstance(images, Tensor) else Tensor(images)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (N, 3, H, W) images, got {x.shape}")
        if x.shape[2] != x.shape[3]:
            raise ShapeError(f"expected square images, got {x.shape[2]}x{x.shape[3]}")
        validate_input_size(self.spec, x.shape[2])

        c1, c2, c3 = self.stem
        x = T.gelu(conv_bias(x, c1.weight, c1.bias, stride=2, padding=1))
        x = T.gelu(conv_bias(x, c2.weight, c2.bias, stride=1, padding=1))
        x = T.gelu(conv_bias(x, c3.weight, c3.bias, stride=1, padding=1))

        stage_maps = []
        for i, stage in enumerate(self.stages):
            x = conv_bias(x, stage.embed.weight, stage.embed.bias, stride=2, padding=0)
            attn_cfg = self.attention_config(i)
            ffn_cfg = self.ffn_config(i)
            for j, blk in enumerate(stage.blocks):
                want = capture is not None and capture.stage == i + 1 and capture.block == j
                x = bev_block_forward(
                    x,
                    blk,
                    attn_cfg,
                    ffn_cfg,
                    self.pattern,
                    capture.weights if want else None,
                )
            stage_maps.append(x)

        h = conv_bias(x, self.head_proj.weight, self.head_proj.bias, stride=1, padding=0)
        pooled = T.avgpool_global(T.gelu(h))
        logits = T.linear(pooled, self.head_fc_weight, self.head_fc_bias)
        if return_stage_maps:
            return logits, stage_maps
        return logits


def bev_block_forward(
    x: Tensor,
    blk: BevBlockParams,
    attn_cfg: AttentionConfig,
    ffn_cfg: FfnConfig,
    pattern: ConnectionPattern = ConnectionPattern.BIFOVEA,
    capture: dict | None = None,
) -> Tensor:
    """One block: position encoding, attention, feedforward, all residual."""
    x = T.add(dwconv_bias(x, blk.cpe.weight, blk.cpe.bias, stride=1, padding=1), x)
    normed = ln_channels(x, blk.ln1.gamma, blk.ln1.beta)
    y = T.add(bfsa_forward(normed, attn_cfg, blk.bfsa, pattern, capture), x)
    normed = ln_channels(y, blk.ln2.gamma, blk.ln2.beta)
    z = T.add(feedforward_forward(normed, ffn_cfg, blk.ffn), y)
    return z


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _init_conv(rng, out_ch, in_ch, k) -> ConvParams:
    return ConvParams(weight=conv_fan_out(rng, (out_ch, in_ch, k, k)), bias=zeros((out_ch,)))


def _init_dwconv(rng, ch, k) -> ConvParams:
    return ConvParams(
        weight=conv_fan_out(rng, (ch, 1, k, k), groups=ch), bias=zeros((ch,))
    )


def _init_norm(ch) -> NormParams:
    return NormParams(gamma=ones((ch,)), beta=zeros((ch,)))


def build(
    spec: VariantSpec | str,
    seed: int,
    pattern: ConnectionPattern = ConnectionPattern.BIFOVEA,
    ffn_kind: FfnKind = FfnKind.BFFN,
    zero_classifier: bool = True,
    input_size: int | None = None,
) -> ModuleGraph:
    """Materialize a backbone with freshly initialized parameters.

    The same ``(spec, seed, pattern, ffn_kind, zero_classifier)`` always
    produces bitwise-identical parameters. ``input_size``, when given, is
    validated against the stage table up front so bad combinations fail at
    build time rather than mid-forward. ``zero_classifier`` starts the final
    fully connected layer at zero, the usual choice for fine-tuning stability;
    gradient checking should pass ``False`` so gradients reach every layer.
    """
    if isinstance(spec, str):
        try:
            spec = VARIANTS[spec]
        except KeyError:
            raise ConfigError(
                f"unknown variant {spec!r}; choose from {sorted(VARIANTS)}"
            ) from None
    validate_spec(spec)
    if input_size is not None:
        validate_input_size(spec, input_size)

    rng = np.random.default_rng(seed)
    st = spec.stem_channels
    stem = (
        _init_conv(rng, st, 3, 3),
        _init_conv(rng, st, st, 3),
        _init_conv(rng, st, st, 3),
    )

    stages: list[StageParams] = []
    prev = st
    for s in spec.stages:
        embed = ConvParams(
            weight=conv_fan_out(rng, (s.channels, prev, 2, 2)), bias=zeros((s.channels,))
        )
        attn_cfg = AttentionConfig(s.channels, s.heads, s.sfa_reduction, s.dfa_reduction)
        ffn_cfg = FfnConfig(s.channels, s.expansion, ffn_kind)
        blocks = []
        for _ in range(s.blocks):
            blocks.append(
                BevBlockParams(
                    cpe=_init_dwconv(rng, s.channels, 3),
                    ln1=_init_norm(s.channels),
                    bfsa=init_bfsa_params(rng, attn_cfg),
                    ln2=_init_norm(s.channels),
                    ffn=init_ffn_params(rng, ffn_cfg),
                )
            )
        stages.append(StageParams(embed=embed, blocks=blocks))
        prev = s.channels

    head_proj = ConvParams(
        weight=conv_fan_out(rng, (spec.head_channels, prev, 1, 1)),
        bias=zeros((spec.head_channels,)),
    )
    if zero_classifier:
        fc_weight = zeros((spec.head_channels, spec.num_classes))
    else:
        fc_weight = trunc_normal(rng, (spec.head_channels, spec.num_classes))
    fc_bias = zeros((spec.num_classes,))

    return ModuleGraph(
        spec=spec,
        seed=seed,
        pattern=pattern,
        ffn_kind=ffn_kind,
        stem=stem,
        stages=stages,
        head_proj=head_proj,
        head_fc_weight=fc_weight,
        head_fc_bias=fc_bias,
    )
