"""
Configuration: YAML defaults shipped next to this module, optionally overlaid by a user file.
"""

from __future__ import annotations

import copy
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent / "config.yaml"
CACHE_ENV = "UPHT_CACHE_DIR"
CONFIG_ENV = "UPHT_CONFIG"
VERSION = "0.1.0"


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: Optional[Path] = None) -> Dict[str, Any]:
    """Packaged defaults, overlaid by `path` (or $UPHT_CONFIG when path is None)."""
    with open(DEFAULT_CONFIG_PATH) as f:
        config = yaml.safe_load(f) or {}
    if path is None and os.environ.get(CONFIG_ENV):
        path = Path(os.environ[CONFIG_ENV])
    if path is not None:
        with open(path) as f:
            config = _deep_merge(config, yaml.safe_load(f) or {})
    return config


def cache_dir() -> Path:
    """Directory for cached reference tables ($UPHT_CACHE_DIR or ~/.cache/upht)."""
    d = os.environ.get(CACHE_ENV)
    return Path(d) if d else Path.home() / ".cache" / "upht"
