"""Portable checkpoint container.

Layout (UTF-8 text header, then raw payload)::

    UPREID-CHECKPOINT 1
    meta <key> <value>                 # zero or more, value runs to end of line
    tensor <name> <d1,d2,...|-> <numel>  # one per tensor, '-' for a scalar
    end
    <payload>

The payload is every tensor's elements as little-endian float32, concatenated
in header order, each tensor in C (row-major) order.
"""
from pathlib import Path

import numpy as np

MAGIC = "UPREID-CHECKPOINT 1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> Path:
    path = Path(path)
    lines = [MAGIC]
    for key, value in (meta or {}).items():
        if " " in key or "\n" in str(value):
            raise CheckpointError(f"meta entry {key!r} cannot be encoded")
        lines.append(f"meta {key} {value}")
    payloads = []
    for name, arr in tensors.items():
        if " " in name:
            raise CheckpointError(f"tensor name {name!r} contains whitespace")
        arr = np.asarray(arr)
        shape = ",".join(str(d) for d in arr.shape) or "-"
        lines.append(f"tensor {name} {shape} {arr.size}")
        payloads.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    lines.append("end")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for chunk in payloads:
            fh.write(chunk)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    marker = b"\nend\n"
    cut = raw.find(marker)
    if not raw.startswith(MAGIC.encode()) or cut < 0:
        raise CheckpointError(f"{path} is not an upreid checkpoint")
    header = raw[:cut].decode("utf-8").split("\n")[1:]
    offset = cut + len(marker)
    meta, tensors = {}, {}
    for line in header:
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            key, _, value = rest.partition(" ")
            meta[key] = value
        elif kind == "tensor":
            try:
                name, shape_s, numel_s = rest.split(" ")
                shape = () if shape_s == "-" else tuple(int(d) for d in shape_s.split(","))
                numel = int(numel_s)
            except ValueError as exc:
                raise CheckpointError(f"{path}: malformed tensor line {line!r}") from exc
            if int(np.prod(shape)) != numel:
                raise CheckpointError(f"{path}: {name} shape {shape} disagrees with count {numel}")
            end = offset + 4 * numel
            if end > len(raw):
                raise CheckpointError(f"{path}: payload truncated in {name}")
            tensors[name] = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape).astype(np.float32)
            offset = end
        else:
            raise CheckpointError(f"{path}: unknown header line {line!r}")
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing payload bytes")
    return tensors, meta
