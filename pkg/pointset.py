# pointset.py
from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from errors import CloudFormatError, InputError

MAGIC = b"OWPC0001"
FLAG_LABELS = 0x1
FLAG_FEATURES = 0x2
FLAG_CHANNELS = 0x4
# Reals stored as f64 instead of f32. Files without it are widened on load.
FLAG_FLOAT64 = 0x8
_KNOWN_FLAGS = FLAG_LABELS | FLAG_FEATURES | FLAG_CHANNELS | FLAG_FLOAT64

PathLike = Union[str, Path]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointProbabilityCloud:
    """
    N points joined with an N x C logit field. Labels use -1 for unknown,
    0..C-1 for known classes and C..C+n_novel-1 for novel classes.
    """

    coords: np.ndarray
    logits: np.ndarray
    labels: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None
    n_novel: int = 0

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64)
        logits = np.array(self.logits, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise CloudFormatError("dimension-mismatch", f"coords must be N x 3, got {coords.shape}")
        n = coords.shape[0]
        if n < 1:
            raise CloudFormatError("dimension-mismatch", "cloud needs at least one point")
        if logits.ndim != 2 or logits.shape[0] != n:
            raise CloudFormatError("dimension-mismatch", f"logits must be {n} x C, got {logits.shape}")
        if logits.shape[1] < 2:
            raise CloudFormatError("dimension-mismatch", f"need C >= 2 classes, got {logits.shape[1]}")
        _check_finite("coords", coords)
        _check_finite("logits", logits)

        labels = None
        if self.labels is not None:
            raw = np.asarray(self.labels)
            if raw.ndim != 1 or raw.shape[0] != n:
                raise CloudFormatError("dimension-mismatch", f"labels must have length {n}, got {raw.shape}")
            labels = raw.astype(np.int64)
            hi = logits.shape[1] + int(self.n_novel)
            bad = np.flatnonzero((labels < -1) | (labels >= hi))
            if bad.size:
                raise CloudFormatError(
                    "label-out-of-range",
                    f"label {labels[bad[0]]} outside [-1, {hi - 1}]",
                    location=f"point {bad[0]}",
                )

        features = None
        if self.features is not None:
            features = np.array(self.features, dtype=np.float64)
            if features.ndim != 2 or features.shape[0] != n:
                raise CloudFormatError(
                    "dimension-mismatch", f"features must be {n} x c, got {features.shape}"
                )

        object.__setattr__(self, "coords", _frozen(coords))
        object.__setattr__(self, "logits", _frozen(logits))
        object.__setattr__(self, "labels", None if labels is None else _frozen(labels))
        object.__setattr__(self, "features", None if features is None else _frozen(features))

    @property
    def n_points(self) -> int:
        return int(self.coords.shape[0])

    @property
    def n_classes(self) -> int:
        return int(self.logits.shape[1])

    @property
    def n_channels(self) -> int:
        return 0 if self.features is None else int(self.features.shape[1])


def _check_finite(name: str, arr: np.ndarray) -> None:
    bad = np.argwhere(~np.isfinite(arr))
    if bad.size:
        raise CloudFormatError(
            "non-finite-value", f"{name} contains NaN/Inf", location=f"point {bad[0][0]}"
        )


class LabelKind(str, Enum):
    CLOSED_SET = "closed_set"
    PSEUDO = "pseudo"
    NOVEL_ONEHOT = "novel_onehot"
    DISTILLED = "distilled"


@dataclass(frozen=True, eq=False)
class LabelSet:
    kind: LabelKind
    hard: Optional[np.ndarray] = None
    soft: Optional[np.ndarray] = None

    def __post_init__(self):
        kind = LabelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in (LabelKind.CLOSED_SET, LabelKind.PSEUDO) and self.hard is None:
            raise InputError("invalid-spec", f"{kind.value} labels need a hard label array")
        if kind is LabelKind.DISTILLED and self.soft is None:
            raise InputError("invalid-spec", "distilled labels need soft rows")
        if self.hard is not None:
            object.__setattr__(self, "hard", _frozen(np.array(self.hard, dtype=np.int64)))
        if self.soft is not None:
            soft = np.array(self.soft, dtype=np.float64)
            if soft.ndim != 2:
                raise InputError("invalid-simplex-row", f"soft labels must be 2-D, got {soft.shape}")
            if np.any(soft < 0) or np.any(np.abs(soft.sum(axis=1) - 1.0) > 1e-9):
                raise InputError("invalid-simplex-row", "soft label rows must lie on the probability simplex")
            object.__setattr__(self, "soft", _frozen(soft))


# -----------------------------
# OWPC binary
# -----------------------------


def _save_owpc(cloud: PointProbabilityCloud, path: Path, float64: bool) -> None:
    real = "<f8" if float64 else "<f4"
    flags = FLAG_FLOAT64 if float64 else 0
    if cloud.labels is not None:
        flags |= FLAG_LABELS
    if cloud.features is not None:
        flags |= FLAG_FEATURES | FLAG_CHANNELS
    parts = [MAGIC, struct.pack("<III", cloud.n_points, cloud.n_classes, flags)]
    if flags & FLAG_CHANNELS:
        parts.append(struct.pack("<I", cloud.n_channels))
    parts.append(np.ascontiguousarray(cloud.coords, dtype=real).tobytes())
    parts.append(np.ascontiguousarray(cloud.logits, dtype=real).tobytes())
    if cloud.labels is not None:
        parts.append(np.ascontiguousarray(cloud.labels, dtype="<i4").tobytes())
    if cloud.features is not None:
        parts.append(np.ascontiguousarray(cloud.features, dtype=real).tobytes())
    path.write_bytes(b"".join(parts))


def _load_owpc(path: Path, n_novel: int) -> PointProbabilityCloud:
    buf = path.read_bytes()
    if len(buf) < 20 or buf[:8] != MAGIC:
        raise CloudFormatError("malformed-header", "missing OWPC0001 magic", location="byte 0")
    n, c, flags = struct.unpack_from("<III", buf, 8)
    offset = 20
    if flags & ~_KNOWN_FLAGS:
        raise CloudFormatError("malformed-header", f"unknown flag bits {flags:#x}", location="byte 16")
    if n < 1 or c < 2:
        raise CloudFormatError("malformed-header", f"invalid N={n} C={c}", location="byte 8")
    channels = 0
    if flags & FLAG_CHANNELS:
        if len(buf) < offset + 4:
            raise CloudFormatError("dimension-mismatch", "channel count truncated", location=f"byte {offset}")
        (channels,) = struct.unpack_from("<I", buf, offset)
        offset += 4
    if flags & FLAG_FEATURES and not flags & FLAG_CHANNELS:
        raise CloudFormatError(
            "malformed-header", "features flagged without a channel count", location="byte 16"
        )
    real = np.dtype("<f8") if flags & FLAG_FLOAT64 else np.dtype("<f4")

    def block(dtype: np.dtype, count: int, what: str) -> np.ndarray:
        nonlocal offset
        size = dtype.itemsize * count
        if len(buf) < offset + size:
            raise CloudFormatError(
                "dimension-mismatch",
                f"{what} block needs {size} bytes, {len(buf) - offset} left",
                location=f"byte {offset}",
            )
        out = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
        offset += size
        return out

    coords = block(real, n * 3, "coords").reshape(n, 3)
    logits = block(real, n * c, "logits").reshape(n, c)
    labels = block(np.dtype("<i4"), n, "labels") if flags & FLAG_LABELS else None
    features = None
    if flags & FLAG_FEATURES:
        features = block(real, n * channels, "features").reshape(n, channels)
    if offset != len(buf):
        raise CloudFormatError(
            "dimension-mismatch", f"{len(buf) - offset} trailing bytes", location=f"byte {offset}"
        )
    return PointProbabilityCloud(
        coords=coords.astype(np.float64),
        logits=logits.astype(np.float64),
        labels=labels,
        features=None if features is None else features.astype(np.float64),
        n_novel=n_novel,
    )


# -----------------------------
# CSV
# -----------------------------

_LOGIT_COL = re.compile(r"^logit_(\d+)$")
_FEAT_COL = re.compile(r"^feat_(\d+)$")


def _csv_columns(cloud: PointProbabilityCloud) -> List[str]:
    cols = ["x", "y", "z"] + [f"logit_{j}" for j in range(cloud.n_classes)]
    if cloud.labels is not None:
        cols.append("label")
    cols += [f"feat_{j}" for j in range(cloud.n_channels)]
    return cols


def _save_csv(cloud: PointProbabilityCloud, path: Path) -> None:
    frame = pd.DataFrame(np.hstack([cloud.coords, cloud.logits]), columns=_csv_columns(cloud)[: 3 + cloud.n_classes])
    if cloud.labels is not None:
        frame["label"] = cloud.labels.astype(np.int64)
    for j in range(cloud.n_channels):
        frame[f"feat_{j}"] = cloud.features[:, j]
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


def _parse_header(columns: List[str]) -> tuple:
    if columns[:3] != ["x", "y", "z"]:
        raise CloudFormatError("malformed-header", "header must start with x,y,z", location="line 1")
    pos = 3
    n_classes = 0
    while pos < len(columns) and _LOGIT_COL.match(columns[pos]):
        if columns[pos] != f"logit_{n_classes}":
            raise CloudFormatError("malformed-header", f"unexpected column {columns[pos]}", location="line 1")
        n_classes += 1
        pos += 1
    if n_classes < 2:
        raise CloudFormatError("malformed-header", "need at least logit_0 and logit_1", location="line 1")
    has_labels = pos < len(columns) and columns[pos] == "label"
    pos += int(has_labels)
    channels = 0
    for col in columns[pos:]:
        if col != f"feat_{channels}":
            raise CloudFormatError("malformed-header", f"unexpected column {col}", location="line 1")
        channels += 1
    return n_classes, has_labels, channels


def _column_as(frame: pd.DataFrame, col: str, dtype) -> np.ndarray:
    values = frame[col].to_numpy()
    try:
        return np.array(values, dtype=dtype)
    except (TypeError, ValueError):
        for row, raw in enumerate(values):
            try:
                dtype(raw)
            except (TypeError, ValueError):
                kind = "label-out-of-range" if col == "label" else "non-finite-value"
                raise CloudFormatError(
                    kind, f"cannot parse {col}={raw!r}", location=f"line {row + 2}"
                ) from None
        raise


def _load_csv(path: Path, n_novel: int) -> PointProbabilityCloud:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise CloudFormatError("malformed-header", "empty file", location="line 1") from None
    except pd.errors.ParserError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise CloudFormatError(
            "dimension-mismatch", "row has the wrong number of fields", location=f"line {m.group(1)}" if m else None
        ) from None
    n_classes, has_labels, channels = _parse_header(list(frame.columns))
    if len(frame) == 0:
        raise CloudFormatError("dimension-mismatch", "no data rows", location="line 2")
    empty = np.argwhere(frame.to_numpy() == "")
    if empty.size:
        raise CloudFormatError("dimension-mismatch", "missing field", location=f"line {empty[0][0] + 2}")

    coords = np.column_stack([_column_as(frame, c, float) for c in ("x", "y", "z")])
    logits = np.column_stack([_column_as(frame, f"logit_{j}", float) for j in range(n_classes)])
    for name, arr in (("coords", coords), ("logits", logits)):
        bad = np.argwhere(~np.isfinite(arr))
        if bad.size:
            raise CloudFormatError(
                "non-finite-value", f"{name} contains NaN/Inf", location=f"line {bad[0][0] + 2}"
            )
    labels = _column_as(frame, "label", int) if has_labels else None
    if labels is not None:
        hi = n_classes + n_novel
        bad = np.flatnonzero((labels < -1) | (labels >= hi))
        if bad.size:
            raise CloudFormatError(
                "label-out-of-range", f"label {labels[bad[0]]} outside [-1, {hi - 1}]", location=f"line {bad[0] + 2}"
            )
    features = None
    if channels:
        features = np.column_stack([_column_as(frame, f"feat_{j}", float) for j in range(channels)])
    return PointProbabilityCloud(coords, logits, labels=labels, features=features, n_novel=n_novel)


# -----------------------------
# Public API
# -----------------------------


def load_cloud(path: PathLike, format: str = "owpc", n_novel: int = 0) -> PointProbabilityCloud:
    path = Path(path)
    if not path.exists():
        raise CloudFormatError("io-failure", f"{path} does not exist")
    fmt = format.strip().lower()
    if fmt == "owpc":
        return _load_owpc(path, n_novel)
    if fmt == "csv":
        return _load_csv(path, n_novel)
    raise ValueError(f"Unsupported cloud format '{format}'. Supported: owpc, csv.")


def save_cloud(
    cloud: PointProbabilityCloud, path: PathLike, format: str = "owpc", float64: bool = True
) -> None:
    """
    float64=False writes the compact f32 layout; values then only round-trip
    exactly when they are already representable in single precision.
    """
    path = Path(path)
    fmt = format.strip().lower()
    try:
        if fmt == "owpc":
            _save_owpc(cloud, path, float64)
        elif fmt == "csv":
            _save_csv(cloud, path)
        else:
            raise ValueError(f"Unsupported cloud format '{format}'. Supported: owpc, csv.")
    except OSError as exc:
        raise CloudFormatError("io-failure", str(exc)) from exc
