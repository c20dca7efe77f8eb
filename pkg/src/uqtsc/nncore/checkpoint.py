"""Versioned text checkpoints: magic line, config, named parameter blocks.

Layout:

    UQTSC-CKPT-1
    config <one-line kv serialization of the model config>
    meta <key> <value>            (zero or more)
    param <name> <d0,d1,...>
    <space-separated repr() floats, one line>
    ...

repr() round-trips float64 exactly, so save/load is lossless and the file
bytes are a pure function of the parameter values.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

MAGIC = "UQTSC-CKPT-1"


class CheckpointError(Exception):
    pass


def write_checkpoint(path: str | Path, config_line: str,
                     named_params: list[tuple[str, np.ndarray]],
                     meta: dict[str, str] | None = None):
    if "\n" in config_line:
        raise CheckpointError("config must serialize to a single line")
    lines = [MAGIC, f"config {config_line}"]
    for key, val in (meta or {}).items():
        if any(c.isspace() for c in key) or "\n" in str(val):
            raise CheckpointError(f"bad meta entry {key!r}")
        lines.append(f"meta {key} {val}")
    for name, arr in named_params:
        arr = np.asarray(arr, dtype=np.float64)
        shape = ",".join(str(d) for d in arr.shape)
        lines.append(f"param {name} {shape}")
        lines.append(" ".join(repr(float(v)) for v in arr.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_checkpoint(path: str | Path) -> tuple[str, dict[str, np.ndarray], dict[str, str]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != MAGIC:
        raise CheckpointError(f"{path}: not a {MAGIC} checkpoint")
    if len(lines) < 2 or not lines[1].startswith("config "):
        raise CheckpointError(f"{path}: missing config line")
    config_line = lines[1][len("config "):]
    meta: dict[str, str] = {}
    params: dict[str, np.ndarray] = {}
    i = 2
    while i < len(lines):
        line = lines[i]
        if not line.strip():
            i += 1
            continue
        if line.startswith("meta "):
            parts = line.split(" ", 2)
            if len(parts) != 3:
                raise CheckpointError(f"{path}: malformed meta line {i + 1}")
            meta[parts[1]] = parts[2]
            i += 1
        elif line.startswith("param "):
            _, name, shape_s = line.split(" ")
            shape = tuple(int(d) for d in shape_s.split(",")) if shape_s else ()
            if i + 1 >= len(lines):
                raise CheckpointError(f"{path}: truncated after {name}")
            values = np.array([float(tok) for tok in lines[i + 1].split()],
                              dtype=np.float64)
            expected = int(np.prod(shape)) if shape else 1
            if values.size != expected:
                raise CheckpointError(
                    f"{path}: {name} has {values.size} values, shape wants {expected}")
            params[name] = values.reshape(shape)
            i += 2
        else:
            raise CheckpointError(f"{path}: unexpected line {i + 1}: {line[:40]!r}")
    return config_line, params, meta
