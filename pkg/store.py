# store.py
from __future__ import annotations

import warnings
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from errors import InputError
from uncertainty import Polarity, ScoreField, ScoreMethod

PathLike = Union[str, Path]

# -----------------------------
# One-value-per-line files
# -----------------------------


def _write_column(path: Path, values: np.ndarray, fmt: str, header: Optional[str] = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(values).reshape(-1), fmt=fmt, header=header or "", comments="# ", encoding="utf-8")
    return path


def _read_column(path: Path, dtype: type, kind: str) -> np.ndarray:
    """`#` lines and blank lines are skipped; an empty file gives an empty array."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            # integer columns must not accept "2.5"
            warnings.simplefilter("error", DeprecationWarning)
            values = np.loadtxt(path, dtype=dtype, comments="#", delimiter=",", ndmin=1, encoding="utf-8")
        if values.ndim == 1:
            return values
    except (ValueError, DeprecationWarning):
        pass
    return _scan_column(path, dtype, kind)


def _scan_column(path: Path, dtype: type, kind: str) -> np.ndarray:
    # slow path, only reached for files loadtxt rejects: finds the offending line
    values = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                values.append(dtype(line))
            except ValueError:
                raise InputError(kind, f"{path}: expected one {dtype.__name__} per line, got {line!r}", location=f"line {lineno}") from None
    return np.asarray(values, dtype=dtype)


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return ", ".join(format_value(v) for v in value)
    return str(value)


# -----------------------------
# Store
# -----------------------------


class Store:
    def __init__(self, output_dir: PathLike):
        """All stage artifacts live under output_dir; created on first write."""
        self.root = Path(output_dir)

    def path(self, name: PathLike) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.root / p

    def write_scores(self, name: str, scores: ScoreField) -> Path:
        header = f"method={scores.method.value} polarity={scores.polarity.value}"
        return _write_column(self.path(name), scores.scores, "%.17g", header=header)

    def load_scores(self, name: PathLike) -> ScoreField:
        path = self.path(name)
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip()
        meta = dict(tok.split("=", 1) for tok in header.lstrip("#").split() if "=" in tok)
        if "method" not in meta or "polarity" not in meta:
            raise InputError("malformed-header", f"{path}: missing method/polarity header", location="line 1")
        values = _read_column(path, float, "non-finite-value")
        return ScoreField(values, Polarity(meta["polarity"]), ScoreMethod(meta["method"]))

    def write_indices(self, name: str, indices: np.ndarray) -> Path:
        return _write_column(self.path(name), np.sort(np.asarray(indices, dtype=np.int64)), "%d")

    def load_indices(self, name: PathLike) -> np.ndarray:
        return np.sort(_read_column(self.path(name), int, "malformed-header"))

    def write_labels(self, name: str, labels: np.ndarray) -> Path:
        return _write_column(self.path(name), np.asarray(labels, dtype=np.int64), "%d")

    def load_labels(self, name: PathLike) -> np.ndarray:
        return _read_column(self.path(name), int, "malformed-header")

    def write_object_labels(self, name: str, members: np.ndarray, object_ids: np.ndarray) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = np.column_stack([np.asarray(members, dtype=np.int64), np.asarray(object_ids, dtype=np.int64)])
        np.savetxt(path, rows, fmt="%d", delimiter=" ", encoding="utf-8")
        return path

    def load_object_labels(self, name: PathLike) -> Tuple[np.ndarray, np.ndarray]:
        path = self.path(name)
        try:
            frame = pd.read_csv(path, sep=" ", header=None, names=["point", "object"], dtype=np.int64)
        except pd.errors.EmptyDataError:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty.copy()
        return frame["point"].to_numpy(), frame["object"].to_numpy()

    def write_mask(self, name: str, mask: np.ndarray) -> Path:
        return _write_column(self.path(name), np.asarray(mask, dtype=bool).astype(np.int64), "%d")

    def load_mask(self, name: PathLike) -> np.ndarray:
        values = _read_column(self.path(name), int, "malformed-header")
        if np.any((values != 0) & (values != 1)):
            raise InputError("label-out-of-range", f"{self.path(name)}: mask values must be 0 or 1")
        return values.astype(bool)

    def write_soft_labels(self, name: str, rows: np.ndarray) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(rows, columns=[f"p_{j}" for j in range(rows.shape[1])])
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        return path

    def load_soft_labels(self, name: PathLike) -> np.ndarray:
        return pd.read_csv(self.path(name), float_precision="round_trip").to_numpy(dtype=np.float64)

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        return path

    def write_report(self, name: str, report: Dict[str, object]) -> Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(f"{k} = {format_value(v)}\n" for k, v in report.items()), encoding="utf-8", newline="\n")
        return path

    def load_report(self, name: PathLike) -> Dict[str, str]:
        out: Dict[str, str] = {}
        with open(self.path(name), "r", encoding="utf-8") as f:
            for line in f:
                if " = " in line:
                    key, value = line.rstrip("\n").split(" = ", 1)
                    out[key] = value
        return out
