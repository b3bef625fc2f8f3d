"""Cost accounting and inspection tools.

``cost_report`` walks a stage table and predicts, per module, the parameter
count and the multiply-accumulates of one forward image. The arithmetic
mirrors the executed graph exactly: a test can build the model, run a forward
under ``MacCounter``, and match the analytic totals integer for integer.

Conventions (stated here once, printed with every report):

* 1 MAC = 1 FLOP. Softmax, normalization and other elementwise work is not
  counted, matching how published conv-net budgets are usually quoted.
* The headline FLOPs total covers dense ops only (convolutions and weight
  matmuls). The query-key and attention-value products scale with the token
  count squared rather than with weight size; standard profilers leave them
  out of the headline, so they are tracked in a separate column and also
  reported as an inclusive total.
* Reference budgets for the published variants are reconciled against the
  headline convention at 224x224 input.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import ConnectionPattern
from .backbone import (
    AttentionCapture,
    ModuleGraph,
    VariantSpec,
    stage_sides,
    validate_input_size,
)
from .data import write_pgm
from .errors import ConfigError
from .feedforward import FfnConfig, FfnKind
from .tensor import MacCounter

# Published reference budgets for the variant family (224x224 input).
REFERENCE_PARAMS = {
    "tiny": 12_130_000,
    "small": 23_700_000,
    "base": 42_550_000,
    "large": 60_070_000,
}
REFERENCE_FLOPS = {
    "tiny": 1.91e9,
    "small": 3.39e9,
    "base": 6.35e9,
    "large": 9.44e9,
}

INTERPRETATION_NOTES = [
    "feedforward split: hidden channels halve into shallow/deep branches; the "
    "shallow depthwise output feeds the deep branch and a per-channel gate "
    "fuses the halves (other merge wirings would shift counts slightly)",
    "position encoding: fixed as a 3x3 stride-1 depthwise convolution with bias",
    "attention projections carry no bias terms; key/value pooling convs do",
    "headline FLOPs follow the dense-op convention (attention score/value "
    "products reported separately and in the inclusive total)",
]


@dataclass
class CostRow:
    name: str
    params: int
    macs: int
    attn_macs: int = 0


@dataclass
class CostReport:
    variant: str
    input_size: int
    pattern: str
    ffn: str
    num_classes: int
    rows: list[CostRow]
    notes: list[str] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs_dense(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def total_attn_macs(self) -> int:
        return sum(r.attn_macs for r in self.rows)

    @property
    def total_macs_inclusive(self) -> int:
        return self.total_macs_dense + self.total_attn_macs

    @property
    def head_macs(self) -> int:
        return sum(r.macs for r in self.rows if r.name.startswith("head."))

    @property
    def reference_params(self) -> int | None:
        return REFERENCE_PARAMS.get(self.variant)

    @property
    def reference_flops(self) -> float | None:
        return REFERENCE_FLOPS.get(self.variant) if self.input_size == 224 else None

    @property
    def param_deviation(self) -> float | None:
        ref = self.reference_params
        if ref is None:
            return None
        return (self.total_params - ref) / ref

    @property
    def flop_deviation(self) -> float | None:
        ref = self.reference_flops
        if ref is None:
            return None
        return (self.total_macs_dense - ref) / ref

    def render(self, detail: str = "table") -> str:
        """Human-readable report. ``detail``: params, flops or table."""
        width = max(len(r.name) for r in self.rows) + 2
        lines = [
            f"cost report: variant={self.variant} input={self.input_size}x"
            f"{self.input_size} pattern={self.pattern} ffn={self.ffn} "
            f"classes={self.num_classes}",
            "convention: 1 MAC = 1 FLOP; elementwise/softmax/norm work uncounted; "
            "headline excludes attention products (shown separately)",
        ]
        header = f"{'module':<{width}}"
        if detail in ("params", "table"):
            header += f"{'params':>12}"
        if detail in ("flops", "table"):
            header += f"{'macs':>16}{'attn_macs':>14}"
        lines.append(header)
        for r in self.rows:
            line = f"{r.name:<{width}}"
            if detail in ("params", "table"):
                line += f"{r.params:>12,}"
            if detail in ("flops", "table"):
                line += f"{r.macs:>16,}{r.attn_macs:>14,}"
            lines.append(line)
        lines.append("-" * len(header))

        dev = self.param_deviation
        ref = f" (reference {self.reference_params:,}, deviation {dev:+.2%})" if dev is not None else ""
        lines.append(f"params total: {self.total_params:,}{ref}")

        fdev = self.flop_deviation
        fref = (
            f" (reference {self.reference_flops:,.0f}, deviation {fdev:+.2%})"
            if fdev is not None
            else ""
        )
        lines.append(f"flops headline (dense ops): {self.total_macs_dense:,}{fref}")
        lines.append(
            f"flops incl. attention products: {self.total_macs_inclusive:,} "
            f"(attention products: {self.total_attn_macs:,})"
        )
        lines.append(
            f"flops headline without classifier head: "
            f"{self.total_macs_dense - self.head_macs:,}"
        )
        lines.append("notes:")
        lines.extend(f"  - {note}" for note in self.notes)
        return "\n".join(lines)

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["module", "params", "macs", "attn_macs"])
            for r in self.rows:
                writer.writerow([r.name, r.params, r.macs, r.attn_macs])
            writer.writerow(
                ["total", self.total_params, self.total_macs_dense, self.total_attn_macs]
            )


# ---------------------------------------------------------------------------
# analytic walk
# ---------------------------------------------------------------------------


def _conv_cost(out_ch: int, in_ch: int, k: int, out_side: int) -> tuple[int, int]:
    params = out_ch * in_ch * k * k + out_ch
    macs = out_ch * in_ch * k * k * out_side * out_side
    return params, macs


def _dwconv_cost(ch: int, k: int, out_side: int) -> tuple[int, int]:
    return ch * k * k + ch, ch * k * k * out_side * out_side


def _fovea_rows(dim: int, reduction: int, side: int) -> tuple[int, int, int]:
    """(params, dense macs, attention-product macs) for one pathway."""
    tokens = side * side
    kv_tokens = (side // reduction) ** 2
    params = 4 * dim * dim
    macs = tokens * dim * dim  # queries
    if reduction > 1:
        params += dim * reduction * reduction + dim
        macs += dim * reduction * reduction * kv_tokens
    macs += 2 * kv_tokens * dim * dim  # keys, values
    macs += tokens * dim * dim  # output projection
    attn = 2 * tokens * kv_tokens * dim  # scores + value mixing
    return params, macs, attn


def _ffn_rows(cfg: FfnConfig, side: int) -> tuple[int, int]:
    tokens = side * side
    h = cfg.hidden
    params = cfg.dim * h + h + h * cfg.dim + cfg.dim
    macs = 2 * tokens * cfg.dim * h
    if cfg.kind is FfnKind.CFFN:
        params += 9 * h + h
        macs += 9 * h * tokens
    elif cfg.kind is FfnKind.BFFN:
        hs, hd = cfg.shallow_width, cfg.deep_width
        params += 9 * hs + hs + 9 * hd + hd + h
        macs += 9 * (hs + hd) * tokens
    return params, macs


def cost_report(
    spec: VariantSpec,
    input_size: int = 224,
    pattern: ConnectionPattern = ConnectionPattern.BIFOVEA,
    ffn_kind: FfnKind = FfnKind.BFFN,
) -> CostReport:
    """Analytic per-module parameter and MAC budget for one forward image."""
    validate_input_size(spec, input_size)
    sides = stage_sides(spec, input_size)
    stem_side = input_size // 2
    rows: list[CostRow] = []

    st = spec.stem_channels
    for idx, in_ch in enumerate((3, st, st), start=1):
        p, m = _conv_cost(st, in_ch, 3, stem_side)
        rows.append(CostRow(f"stem.conv{idx}", p, m))

    prev = st
    for i, (stage, side) in enumerate(zip(spec.stages, sides), start=1):
        p, m = _conv_cost(stage.channels, prev, 2, side)
        rows.append(CostRow(f"stage{i}.embed", p, m))
        prev = stage.channels
        ffn_cfg = FfnConfig(stage.channels, stage.expansion, ffn_kind)
        for j in range(stage.blocks):
            tag = f"stage{i}.block{j}"
            p, m = _dwconv_cost(stage.channels, 3, side)
            rows.append(CostRow(f"{tag}.cpe", p, m))
            rows.append(CostRow(f"{tag}.ln1", 2 * stage.channels, 0))
            p, m, a = _fovea_rows(stage.channels, stage.sfa_reduction, side)
            rows.append(CostRow(f"{tag}.bfsa.sfa", p, m, a))
            p, m, a = _fovea_rows(stage.channels, stage.dfa_reduction, side)
            rows.append(CostRow(f"{tag}.bfsa.dfa", p, m, a))
            rows.append(CostRow(f"{tag}.ln2", 2 * stage.channels, 0))
            p, m = _ffn_rows(ffn_cfg, side)
            rows.append(CostRow(f"{tag}.ffn", p, m))

    p, m = _conv_cost(spec.head_channels, prev, 1, sides[-1])
    rows.append(CostRow("head.proj", p, m))
    rows.append(
        CostRow(
            "head.fc",
            spec.head_channels * spec.num_classes + spec.num_classes,
            spec.head_channels * spec.num_classes,
        )
    )

    return CostReport(
        variant=spec.name,
        input_size=input_size,
        pattern=pattern.value,
        ffn=ffn_kind.value,
        num_classes=spec.num_classes,
        rows=rows,
        notes=list(INTERPRETATION_NOTES),
    )


def measure_macs(graph: ModuleGraph, input_size: int) -> MacCounter:
    """Run one instrumented forward image and return the observed MAC tally."""
    counter = MacCounter()
    images = np.zeros((1, 3, input_size, input_size))
    with counter:
        graph.forward(images)
    return counter


# ---------------------------------------------------------------------------
# attention map export
# ---------------------------------------------------------------------------


def export_attention_maps(
    graph: ModuleGraph,
    image: np.ndarray,
    stage: int,
    block: int,
    out_dir: str | os.PathLike,
    fovea: str = "sfa",
) -> list[Path]:
    """Write one PGM heat map per head for the chosen block's attention.

    The per-head weights are averaged over query positions, reshaped to the
    key/value grid, nearest-neighbor upsampled to the stage grid and min-max
    normalized into [0, 1] (a constant map renders mid-gray). ``stage`` is
    1-based, ``block`` 0-based, ``fovea`` is ``"sfa"`` or ``"dfa"``.
    """
    if fovea not in ("sfa", "dfa"):
        raise ConfigError(f"fovea must be 'sfa' or 'dfa', got {fovea!r}")
    if not 1 <= stage <= len(graph.spec.stages):
        raise ConfigError(f"stage must be in 1..{len(graph.spec.stages)}, got {stage}")
    stage_cfg = graph.spec.stages[stage - 1]
    if not 0 <= block < stage_cfg.blocks:
        raise ConfigError(
            f"stage{stage} has blocks 0..{stage_cfg.blocks - 1}, got block {block}"
        )
    if image.ndim != 3 or image.shape[0] != 3 or image.shape[1] != image.shape[2]:
        raise ConfigError(f"expected one (3, S, S) image, got {image.shape}")

    capture = AttentionCapture(stage=stage, block=block)
    graph.forward(image[None], capture=capture)
    weights = capture.weights[fovea][0]  # (heads, queries, keys)
    mean_over_queries = weights.mean(axis=1)

    side = stage_sides(graph.spec, image.shape[1])[stage - 1]
    reduction = stage_cfg.sfa_reduction if fovea == "sfa" else stage_cfg.dfa_reduction
    kv_side = side // reduction
    grids = mean_over_queries.reshape(-1, kv_side, kv_side)
    grids = np.repeat(np.repeat(grids, reduction, axis=1), reduction, axis=2)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for h, grid in enumerate(grids):
        lo, hi = grid.min(), grid.max()
        if hi > lo:
            normed = (grid - lo) / (hi - lo)
        else:
            normed = np.full_like(grid, 0.5)
        path = out_dir / f"stage{stage}_block{block}_{fovea}_head{h}.pgm"
        write_pgm(path, normed)
        paths.append(path)
    return paths
