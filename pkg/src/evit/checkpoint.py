"""Single-file checkpoints: an ASCII manifest followed by raw tensor bytes.

The manifest names the build (stage table, seed, wiring) and lists every
tensor with its shape and byte offset, so a file is self-describing and can
be rebuilt without access to the variant registry. Tensor data is raw
little-endian float64 in manifest order, which makes round trips bitwise
exact. Layout:

    EVIT-CKPT-V1
    name: tiny
    seed: 42
    ...header key/value lines...
    tensors: 170
    <name> <d0,d1,...> <byte offset>   (one line per tensor)
    data: <total bytes>
    END
    <raw bytes>
"""

from __future__ import annotations

import os
from typing import Iterable

import numpy as np

from .attention import ConnectionPattern
from .backbone import ModuleGraph, StageConfig, VariantSpec, build
from .errors import ConfigError
from .feedforward import FfnKind

MAGIC = "EVIT-CKPT-V1"
_END = b"\nEND\n"


def _stage_line(s: StageConfig) -> str:
    return (
        f"blocks={s.blocks} channels={s.channels} heads={s.heads} "
        f"sfa={s.sfa_reduction} dfa={s.dfa_reduction} expansion={s.expansion!r}"
    )


def _parse_stage_line(text: str) -> StageConfig:
    fields = dict(item.split("=", 1) for item in text.split())
    return StageConfig(
        blocks=int(fields["blocks"]),
        channels=int(fields["channels"]),
        heads=int(fields["heads"]),
        sfa_reduction=int(fields["sfa"]),
        dfa_reduction=int(fields["dfa"]),
        expansion=float(fields["expansion"]),
    )


def save_checkpoint(graph: ModuleGraph, path: str | os.PathLike) -> None:
    """Write the graph's spec, seed, wiring and all parameters to one file."""
    named = graph.named_parameters()
    lines = [MAGIC]
    spec = graph.spec
    lines.append(f"name: {spec.name}")
    lines.append(f"seed: {graph.seed}")
    lines.append(f"pattern: {graph.pattern.value}")
    lines.append(f"ffn: {graph.ffn_kind.value}")
    lines.append(f"stem_channels: {spec.stem_channels}")
    lines.append(f"head_channels: {spec.head_channels}")
    lines.append(f"num_classes: {spec.num_classes}")
    for i, stage in enumerate(spec.stages, start=1):
        lines.append(f"stage{i}: {_stage_line(stage)}")
    lines.append(f"tensors: {len(named)}")

    offset = 0
    blobs = []
    for name, p in named:
        shape = ",".join(str(d) for d in p.shape)
        lines.append(f"{name} {shape} {offset}")
        blob = p.data.astype("<f8").tobytes()
        blobs.append(blob)
        offset += len(blob)
    lines.append(f"data: {offset}")

    with open(path, "wb") as fh:
        fh.write("\n".join(lines).encode("ascii"))
        fh.write(_END)
        for blob in blobs:
            fh.write(blob)


def read_manifest(path: str | os.PathLike) -> dict:
    """Parse just the header: build fields plus the tensor table."""
    with open(path, "rb") as fh:
        raw = fh.read()
    head, sep, data = raw.partition(_END)
    if not sep:
        raise ConfigError(f"{path}: missing END marker, not a checkpoint file")
    lines = head.decode("ascii").split("\n")
    if lines[0] != MAGIC:
        raise ConfigError(f"{path}: bad magic {lines[0]!r}, expected {MAGIC}")

    fields: dict[str, str] = {}
    table: list[tuple[str, tuple[int, ...], int]] = []
    i = 1
    while i < len(lines):
        key, _, value = lines[i].partition(": ")
        fields[key] = value
        i += 1
        if key == "tensors":
            break
    count = int(fields.get("tensors", "0"))
    for line in lines[i : i + count]:
        name, shape_s, offset_s = line.rsplit(" ", 2)
        shape = tuple(int(d) for d in shape_s.split(","))
        table.append((name, shape, int(offset_s)))
    i += count
    key, _, value = lines[i].partition(": ")
    if key != "data":
        raise ConfigError(f"{path}: malformed manifest, expected data size line")
    nbytes = int(value)
    if len(data) != nbytes:
        raise ConfigError(f"{path}: expected {nbytes} data bytes, found {len(data)}")

    offsets = [off for _, _, off in table]
    if offsets != sorted(offsets):
        raise ConfigError(f"{path}: tensor offsets are not monotonically increasing")
    return {"fields": fields, "table": table, "data": data}


def _spec_from_fields(fields: dict[str, str]) -> VariantSpec:
    stages = tuple(_parse_stage_line(fields[f"stage{i}"]) for i in range(1, 5))
    return VariantSpec(
        name=fields["name"],
        stem_channels=int(fields["stem_channels"]),
        stages=stages,
        head_channels=int(fields["head_channels"]),
        num_classes=int(fields["num_classes"]),
    )


def load_checkpoint(path: str | os.PathLike) -> ModuleGraph:
    """Rebuild the graph described by a checkpoint and restore its weights.

    The restored parameters are bitwise equal to what was saved, so a forward
    pass on the loaded graph reproduces the original logits exactly.
    """
    manifest = read_manifest(path)
    fields = manifest["fields"]
    spec = _spec_from_fields(fields)
    graph = build(
        spec,
        seed=int(fields["seed"]),
        pattern=ConnectionPattern(fields["pattern"]),
        ffn_kind=FfnKind(fields["ffn"]),
    )

    params = dict(graph.named_parameters())
    stored = {name for name, _, _ in manifest["table"]}
    if stored != set(params):
        missing = sorted(set(params) - stored)[:3]
        extra = sorted(stored - set(params))[:3]
        raise ConfigError(
            f"{path}: tensor names do not match the rebuilt graph "
            f"(missing {missing}, unexpected {extra})"
        )

    data = manifest["data"]
    for name, shape, offset in manifest["table"]:
        p = params[name]
        if p.shape != shape:
            raise ConfigError(f"{path}: {name} has shape {shape}, graph expects {p.shape}")
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset)
        p.data = arr.reshape(shape).astype(np.float64)
    return graph


def checkpoint_equal(path_a: str | os.PathLike, path_b: str | os.PathLike) -> bool:
    """Byte-for-byte file comparison."""
    with open(path_a, "rb") as fa, open(path_b, "rb") as fb:
        return fa.read() == fb.read()


def iter_tensor_names(path: str | os.PathLike) -> Iterable[str]:
    for name, _, _ in read_manifest(path)["table"]:
        yield name
