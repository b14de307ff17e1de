"""MSP v1 parameter checkpoints.

Layout::

    MSP v1 agent=<kind> dim=<D> seed=<seed> steps=<n> [key=value ...]
    <name> shape=<d0>x<d1>...
    <flat row-major values, 9 significant digits>
    ...

Values use the same printing as EMB v1 files, so loading and re-saving a
canonical checkpoint is byte-identical.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .embeddings import fmt_real

MSP_MAGIC = "MSP v1"


class CheckpointFormatError(ValueError):
    pass


def dumps_msp(header: dict, arrays: dict[str, np.ndarray]) -> str:
    lines = [MSP_MAGIC + "".join(f" {k}={v}" for k, v in header.items())]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        lines.append(f"{name} shape={'x'.join(str(d) for d in arr.shape)}")
        lines.append(" ".join(fmt_real(v) for v in arr.ravel()))
    return "\n".join(lines) + "\n"


def loads_msp(text: str) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    lines = text.rstrip("\n").split("\n")
    if not lines[0].startswith(MSP_MAGIC):
        raise CheckpointFormatError(f"line 1: expected '{MSP_MAGIC} ...' header")
    header = {}
    for tok in lines[0][len(MSP_MAGIC):].split():
        key, sep, value = tok.partition("=")
        if not sep:
            raise CheckpointFormatError(f"line 1: malformed header field {tok!r}")
        header[key] = value
    body = lines[1:]
    if len(body) % 2:
        raise CheckpointFormatError(f"line {len(lines)}: array name without values")
    arrays = {}
    for i in range(0, len(body), 2):
        lineno = i + 2
        parts = body[i].split()
        if len(parts) != 2 or not parts[1].startswith("shape="):
            raise CheckpointFormatError(f"line {lineno}: expected '<name> shape=<dims>'")
        try:
            shape = tuple(int(d) for d in parts[1][6:].split("x")) if parts[1][6:] else ()
            values = np.array([float(v) for v in body[i + 1].split()])
        except ValueError:
            raise CheckpointFormatError(f"line {lineno + 1}: non-numeric token") from None
        if values.size != int(np.prod(shape)):
            raise CheckpointFormatError(f"line {lineno + 1}: {values.size} values for shape {shape}")
        arrays[parts[0]] = values.reshape(shape)
    return header, arrays


def save_msp(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_text(dumps_msp(header, arrays), encoding="utf-8", newline="\n")


def load_msp(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    return loads_msp(Path(path).read_text(encoding="utf-8"))
