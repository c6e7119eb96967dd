"""JSON interchange formats for matrices and block vectors.

Matrix file (version 1)::

    {"version": 1, "kind": "matrix", "M": 3, "n_g": 2, "stage_sizes": [2, 2, 2],
     "blocks": [{"name": "diag", "index": 0, "rows": 2, "cols": 2,
                 "data": [...column-major...]}, ...]}

``name`` is one of ``diag`` (index 0..M-1), ``sub`` (index i couples stage i
to i+1), ``arrow`` (index 0..M-1) or ``corner`` (index 0).

Vector file (version 1)::

    {"version": 1, "kind": "vector", "M": 3, "n_g": 2, "stage_sizes": [2, 2, 2],
     "segments": [{"index": 0, "data": [...]}, ...], "global": [...] | null}

Floats are written with 17 significant digits, which round-trips float64.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .btam import BlockTridiagArrowMatrix, BlockVector
from .errors import FormatError

VERSION = 1


def _num(x: float) -> str:
    if not np.isfinite(x):
        raise FormatError(f"cannot serialize non-finite value {x!r}")
    return format(float(x), ".17g")


def _array(a: np.ndarray) -> str:
    return "[" + ", ".join(_num(v) for v in np.asarray(a).ravel(order="F")) + "]"


def _header(kind: str, M: int, n_g: int, sizes) -> str:
    return (
        f'"version": {VERSION}, "kind": "{kind}", "M": {M}, "n_g": {n_g}, '
        f'"stage_sizes": {json.dumps([int(s) for s in sizes])}'
    )


def matrix_to_json(m: BlockTridiagArrowMatrix) -> str:
    blocks = []

    def add(name, index, blk):
        blocks.append(
            f'  {{"name": "{name}", "index": {index}, "rows": {blk.shape[0]}, '
            f'"cols": {blk.shape[1]}, "data": {_array(blk)}}}'
        )

    for i, d in enumerate(m.diag):
        add("diag", i, d)
    for i, s in enumerate(m.sub):
        add("sub", i, s)
    if m.corner is not None:
        for i, a in enumerate(m.arrow):
            add("arrow", i, a)
        add("corner", 0, m.corner)
    head = _header("matrix", m.num_stages, m.global_size, m.stage_sizes)
    return "{" + head + ', "blocks": [\n' + ",\n".join(blocks) + "\n]}\n"


def vector_to_json(v: BlockVector) -> str:
    segs = ",\n".join(f'  {{"index": {i}, "data": {_array(s)}}}' for i, s in enumerate(v.stages))
    glob = "null" if v.glob is None else _array(v.glob)
    head = _header("vector", len(v.stages), v.global_size, v.stage_sizes)
    return "{" + head + ', "segments": [\n' + segs + '\n], "global": ' + glob + "}\n"


def _load(text: str, kind: str) -> dict:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise FormatError("top-level JSON value must be an object")
    if obj.get("version") != VERSION:
        raise FormatError(f"unsupported format version {obj.get('version')!r}")
    if obj.get("kind", kind) != kind:
        raise FormatError(f"expected a {kind} file, got kind {obj.get('kind')!r}")
    for key in ("M", "n_g", "stage_sizes"):
        if key not in obj:
            raise FormatError(f"missing field {key!r}")
    if len(obj["stage_sizes"]) != obj["M"]:
        raise FormatError("stage_sizes length does not match M")
    return obj


def _block(entry: dict) -> np.ndarray:
    try:
        rows, cols = int(entry["rows"]), int(entry["cols"])
        data = np.asarray(entry["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed block entry: {exc}") from None
    if data.size != rows * cols:
        raise FormatError(f"block {entry.get('name')}[{entry.get('index')}] has {data.size} values, expected {rows * cols}")
    return data.reshape((rows, cols), order="F")


def matrix_from_json(text: str) -> BlockTridiagArrowMatrix:
    obj = _load(text, "matrix")
    M, ng = int(obj["M"]), int(obj["n_g"])
    slots = {"diag": [None] * M, "sub": [None] * max(M - 1, 0), "arrow": [None] * M, "corner": [None]}
    for entry in obj.get("blocks", []):
        name = entry.get("name")
        if name not in slots:
            raise FormatError(f"unknown block name {name!r}")
        idx = entry.get("index")
        if not isinstance(idx, int) or not 0 <= idx < len(slots[name]):
            raise FormatError(f"block {name} has invalid index {idx!r}")
        if slots[name][idx] is not None:
            raise FormatError(f"duplicate block {name}[{idx}]")
        slots[name][idx] = _block(entry)
    for name in ("diag", "sub") + (("arrow", "corner") if ng else ()):
        missing = [i for i, b in enumerate(slots[name]) if b is None]
        if missing:
            raise FormatError(f"missing {name} blocks at indices {missing}")
    if ng:
        return BlockTridiagArrowMatrix(slots["diag"], slots["sub"], slots["arrow"], slots["corner"][0])
    return BlockTridiagArrowMatrix(slots["diag"], slots["sub"])


def vector_from_json(text: str) -> BlockVector:
    obj = _load(text, "vector")
    M, ng = int(obj["M"]), int(obj["n_g"])
    stages = [None] * M
    for entry in obj.get("segments", []):
        idx = entry.get("index")
        if not isinstance(idx, int) or not 0 <= idx < M:
            raise FormatError(f"segment has invalid index {idx!r}")
        stages[idx] = np.asarray(entry.get("data"), dtype=np.float64)
    missing = [i for i, s in enumerate(stages) if s is None]
    if missing:
        raise FormatError(f"missing segments at indices {missing}")
    for i, (s, n) in enumerate(zip(stages, obj["stage_sizes"])):
        if s.shape != (n,):
            raise FormatError(f"segment {i} has length {s.size}, expected {n}")
    glob = obj.get("global")
    if ng:
        if glob is None or len(glob) != ng:
            raise FormatError(f"global part must have length {ng}")
        glob = np.asarray(glob, dtype=np.float64)
    else:
        glob = None
    return BlockVector(stages, glob)


def save_matrix(m: BlockTridiagArrowMatrix, path) -> None:
    Path(path).write_text(matrix_to_json(m))


def load_matrix(path) -> BlockTridiagArrowMatrix:
    return matrix_from_json(Path(path).read_text())


def save_vector(v: BlockVector, path) -> None:
    Path(path).write_text(vector_to_json(v))


def load_vector(path) -> BlockVector:
    return vector_from_json(Path(path).read_text())
