"""Checkpoint file: plain-text header, then length-prefixed float64 arrays.

Layout::

    DDRF-CHECKPOINT
    version = 1
    key = value            (network config)
    layer <name> = static|dynamic
    array <name> = d0,d1,...
    END
    <uint64 LE count><count float64 LE> ...   (arrays in header order)

Header order and number formatting are fixed, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .network import KernelProjector, NetConfig, NetworkParams, init_network

MAGIC = "DDRF-CHECKPOINT"
VERSION = 1

_SCALAR_KEYS = ("t", "candidates", "kernel_size", "seed", "branch_kind", "branch_widths", "fusion_widths",
                "ksize", "eq6_literal", "condition_branches", "condition_fusion", "residual")


class CheckpointError(ValueError):
    pass


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _arrays(params: NetworkParams) -> list[tuple[str, np.ndarray]]:
    out = [(name, p.values) for name, p in params.named_parameters()]
    out.append(("projector.basis", params.projector.basis))
    out.append(("projector.mean", params.projector.mean))
    return out


def to_bytes(params: NetworkParams) -> bytes:
    cfg = params.config
    lines = [MAGIC, f"version = {VERSION}"]
    for key in _SCALAR_KEYS:
        lines.append(f"{key} = {_fmt(getattr(cfg, key))}")
    for name, kind in params.layer_kinds():
        lines.append(f"layer {name} = {kind}")
    arrays = _arrays(params)
    for name, arr in arrays:
        lines.append(f"array {name} = {_fmt(arr.shape)}")
    lines.append("END")
    blob = bytearray(("\n".join(lines) + "\n").encode("utf-8"))
    for _, arr in arrays:
        flat = np.ascontiguousarray(arr, dtype="<f8").reshape(-1)
        blob += struct.pack("<Q", flat.size)
        blob += flat.tobytes()
    return bytes(blob)


def save_checkpoint(params: NetworkParams, path) -> Path:
    path = Path(path)
    path.write_bytes(to_bytes(params))
    return path


def _parse_header(data: bytes) -> tuple[dict, list, list, int]:
    end = data.find(b"\nEND\n")
    if not data.startswith(MAGIC.encode()) or end < 0:
        raise CheckpointError("not a DDRF checkpoint (missing magic line or END marker)")
    text = data[:end].decode("utf-8").split("\n")[1:]
    scalars, layers, arrays = {}, [], []
    for line in text:
        key, _, value = line.partition(" = ")
        if key.startswith("layer "):
            layers.append((key[6:], value))
        elif key.startswith("array "):
            shape = tuple(int(v) for v in value.split(",")) if value else ()
            arrays.append((key[6:], shape))
        else:
            scalars[key] = value
    return scalars, layers, arrays, end + len(b"\nEND\n")


def from_bytes(data: bytes) -> NetworkParams:
    scalars, layers, arrays, offset = _parse_header(data)
    for key in ("version",) + _SCALAR_KEYS:
        if key not in scalars:
            raise CheckpointError(f"checkpoint missing field: {key}")
    if int(scalars["version"]) != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {scalars['version']}")

    def ints(v):
        return tuple(int(x) for x in v.split(",")) if v else ()

    cfg = NetConfig(
        t=int(scalars["t"]),
        candidates=int(scalars["candidates"]),
        branch_kind=scalars["branch_kind"],
        branch_widths=ints(scalars["branch_widths"]),
        fusion_widths=ints(scalars["fusion_widths"]),
        ksize=int(scalars["ksize"]),
        kernel_size=int(scalars["kernel_size"]),
        eq6_literal=scalars["eq6_literal"] == "1",
        condition_branches=scalars["condition_branches"] == "1",
        condition_fusion=scalars["condition_fusion"] == "1",
        residual=scalars["residual"] == "1",
        seed=int(scalars["seed"]),
    )
    values = {}
    for name, shape in arrays:
        if offset + 8 > len(data):
            raise CheckpointError(f"checkpoint truncated before array {name}")
        (count,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        expected = int(np.prod(shape)) if shape else 1
        if count != expected:
            raise CheckpointError(f"array {name}: header shape {shape} but {count} stored values")
        if offset + 8 * count > len(data):
            raise CheckpointError(f"checkpoint truncated inside array {name}")
        values[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * count

    for name in ("projector.basis", "projector.mean"):
        if name not in values:
            raise CheckpointError(f"checkpoint missing field: {name}")
    projector = KernelProjector(values["projector.basis"], values["projector.mean"])
    params = init_network(cfg, projector)
    kinds = dict(layers)
    for name, kind in params.layer_kinds():
        if name not in kinds:
            raise CheckpointError(f"checkpoint missing field: layer {name}")
        if kinds[name] != kind:
            raise CheckpointError(f"layer {name}: checkpoint kind {kinds[name]} != config kind {kind}")
    for name, p in params.named_parameters():
        if name not in values:
            raise CheckpointError(f"checkpoint missing field: {name}")
        if values[name].shape != p.shape:
            raise CheckpointError(f"array {name}: stored shape {values[name].shape} != expected {p.shape}")
        p.values = values[name]
    return params


def load_checkpoint(path) -> NetworkParams:
    return from_bytes(Path(path).read_bytes())
