# config_utils.py
from __future__ import annotations

import copy
import os
import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import yaml
from dotenv import load_dotenv

from errors import ConfigError

_ENV_PATTERN = re.compile(r"^\$\{([A-Z0-9_]+)\}$")
_SECTION_PATTERN = re.compile(r"^\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]$")
_INLINE_COMMENT = re.compile(r"(?:^|\s)#.*$")
CLUSTER_SECTION = "cluster"
CLUSTER_KEYS = ("center", "radius", "point_count", "class_id")
YAML_SUFFIXES = (".yml", ".yaml")
load_dotenv()

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "run": {
        "cloud": "",
        "cloud_format": "owpc",
        "ground_truth": "",
        "scores": "",
        "region": "",
        "objects": "",
        "distill": True,
        "eval": True,
    },
    "score": {"method": "msp"},
    "predict": {"lambda": 0.5},
    "hua": {
        "m": 20,
        "p": 0.02,
        "lambda": 1.0,
        "k": 16,
        "max_iterations": 64,
        "sim_d_mode": "inverted",
        "rng_seed": 7,
    },
    "gbd": {
        "enabled": True,
        "k": 16,
        "epsilon": 3.0,
        "min_object_points": 10,
        "mad_factor": 3.0,
        "max_iter": 500,
        "tol": 1e-8,
        "restarts": 4,
        "min_variance": 1e-6,
        "fallback_percentile": 90.0,
        "rng_seed": 11,
        "plot": False,
        "symmetrize": "min",
    },
    "loss": {"alpha": 0.001},
    "distill": {"temperature": 2.0, "n_novel": 1, "novel_labels": ""},
    "eval": {"old_classes": [], "novel_classes": [], "write_curves": True},
    "synth": {
        "rng_seed": 2024,
        "n_classes": 13,
        "known_peak": 6.0,
        "unknown_flatness": 3.0,
        "noise_sigma": 0.5,
        "known_clusters": [
            {"center": [5.0, 0.0, 0.0], "radius": 1.0, "point_count": 400, "class_id": 0},
            {"center": [0.0, 8.0, 0.0], "radius": 1.0, "point_count": 400, "class_id": 1},
        ],
        "unknown_clusters": [
            {"center": [0.0, 0.0, 0.0], "radius": 1.0, "point_count": 200, "class_id": -1},
        ],
    },
}

# HUA hyperparameters per dataset regime
PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "s3dis": {"hua": {"m": 20, "p": 0.02, "lambda": 1.0}},
    "scannet": {"hua": {"m": 200, "p": 0.15, "lambda": 2.0}},
}


def expand_env_vars(obj: Any) -> Any:
    """
    Recursively replace values like "${VAR_NAME}" with os.environ["VAR_NAME"] if present.
    Leaves value unchanged if env var is missing.
    """
    if isinstance(obj, dict):
        return {k: expand_env_vars(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [expand_env_vars(v) for v in obj]
    if isinstance(obj, str):
        m = _ENV_PATTERN.match(obj.strip())
        if m:
            return os.getenv(m.group(1), obj)
        return obj
    return obj


def _coerce(dotted: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{dotted} expects true/false, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{dotted} expects an integer, got {value!r}")
        try:
            out = int(value)
        except ValueError:
            raise ConfigError(f"{dotted} expects an integer, got {value!r}") from None
        if isinstance(value, float) and out != value:
            raise ConfigError(f"{dotted} expects an integer, got {value!r}")
        return out
    if isinstance(default, float):
        if isinstance(value, bool):
            raise ConfigError(f"{dotted} expects a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{dotted} expects a number, got {value!r}") from None
    if isinstance(default, str):
        return "" if value is None else str(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{dotted} expects a list, got {value!r}")
        return value
    return value


def _merge(base: Dict[str, Any], layer: Dict[str, Any], origin: str) -> None:
    if not isinstance(layer, dict):
        raise ConfigError(f"{origin}: top level must be a mapping of sections")
    for section, values in layer.items():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config key '{section}' in {origin}")
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"section '{section}' in {origin} must be a mapping")
        for key, value in values.items():
            dotted = f"{section}.{key}"
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown config key '{dotted}' in {origin}")
            base[section][key] = _coerce(dotted, value, DEFAULTS[section][key])


def parse_overrides(overrides: Iterable[str]) -> Dict[str, Dict[str, Any]]:
    """`section.key=value` strings -> nested dict, values parsed as YAML scalars."""
    out: Dict[str, Dict[str, Any]] = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form section.key=value")
        dotted, raw = item.split("=", 1)
        dotted = dotted.strip()
        if "." not in dotted:
            raise ConfigError(f"override key '{dotted}' must be section.key")
        section, key = dotted.split(".", 1)
        try:
            value = yaml.safe_load(raw) if raw.strip() else ""
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value for '{dotted}': {exc}") from None
        out.setdefault(section, {})[key] = value
    return out


def parse_sections(text: str, origin: str) -> Dict[str, Any]:
    """
    `[section]` headers, `key = value` lines and `#` comments -> nested dict.
    Values are parsed as YAML scalars. Each `[cluster]` section is one synth
    cluster; class_id -1 goes to synth.unknown_clusters, the rest to
    synth.known_clusters.
    """
    out: Dict[str, Any] = {}
    clusters: List[Dict[str, Any]] = []
    current: Optional[Dict[str, Any]] = None
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = _INLINE_COMMENT.sub("", line).strip()
        if not line:
            continue
        header = _SECTION_PATTERN.match(line)
        if header:
            section = header.group(1)
            if section == CLUSTER_SECTION:
                current = {}
                clusters.append(current)
            else:
                current = out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{origin} line {lineno}: expected 'key = value' or '[section]', got {line!r}")
        if current is None:
            raise ConfigError(f"{origin} line {lineno}: key outside of a [section]")
        key, raw = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{origin} line {lineno}: missing key before '='")
        if section == CLUSTER_SECTION and key not in CLUSTER_KEYS:
            raise ConfigError(f"unknown config key '{section}.{key}' in {origin} line {lineno}")
        try:
            current[key] = yaml.safe_load(raw) if raw else ""
        except yaml.YAMLError as exc:
            raise ConfigError(f"{origin} line {lineno}: cannot parse value for '{section}.{key}': {exc}") from None

    if clusters:
        synth = out.setdefault("synth", {})
        synth["known_clusters"] = [c for c in clusters if c.get("class_id") != -1]
        synth["unknown_clusters"] = [c for c in clusters if c.get("class_id") == -1]
    return out


def _read_config_file(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    if Path(path).suffix.lower() in YAML_SUFFIXES:
        try:
            return yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_sections(text, path)


def load_config(
    path: Optional[str] = None,
    overrides: Iterable[str] = (),
    preset: Optional[str] = None,
) -> Dict[str, Any]:
    """
    DEFAULTS <- config file <- preset <- overrides. Every key must already exist
    in DEFAULTS. Files ending in .yml/.yaml are YAML; anything else is read
    with parse_sections.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if path:
        _merge(cfg, expand_env_vars(_read_config_file(path)), path)
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}' (expected one of {sorted(PRESETS)})")
        _merge(cfg, PRESETS[preset], f"preset {preset}")
    _merge(cfg, expand_env_vars(parse_overrides(overrides)), "overrides")
    return cfg


def flatten(cfg: Dict[str, Any]) -> List[tuple]:
    """Sorted (dotted_key, value) pairs for the run report."""
    rows = []
    for section in sorted(cfg):
        for key in sorted(cfg[section]):
            rows.append((f"{section}.{key}", cfg[section][key]))
    return rows
