"""
`hieraseg` model checkpoints.

A checkpoint is a directory holding one HTF file per parameter under
`tensors/` plus `manifest.json`:

    {
      "format": 1,
      "hierarchy_digest": "<sha256 of the canonical hierarchy document>",
      "model": {...network config...},
      "parameters": {"encoder.0.weight": "tensors/0000.htf", ...},
      "extra": {...}
    }
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import numpy as np

from hieraseg.exceptions import StorageError, ValidationError
from hieraseg.hierarchy import Hierarchy
from hieraseg.numeric.htf import read_htf, write_htf
from hieraseg.numeric.nn import Module

from .segnet import NetConfig, ToySegNet

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
MANIFEST = "manifest.json"


def save_checkpoint(
    model: Module,
    directory: Union[str, os.PathLike],
    hierarchy: Hierarchy,
    model_config: Mapping[str, Any],
    extra: Optional[Mapping[str, Any]] = None,
) -> Path:
    directory = Path(directory)
    try:
        (directory / "tensors").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"Cannot create checkpoint directory {directory}: {exc}") from exc

    files = {}
    for index, (name, param) in enumerate(model.named_parameters()):
        relative = f"tensors/{index:04d}.htf"
        write_htf(directory / relative, param.data)
        files[name] = relative

    manifest = {
        "format": CHECKPOINT_FORMAT,
        "hierarchy_digest": hierarchy.digest(),
        "model": dict(model_config),
        "parameters": files,
        "extra": dict(extra or {}),
    }
    _write_json(directory / MANIFEST, manifest)
    logger.info("Saved checkpoint with %d tensors to %s", len(files), directory)
    return directory


def read_manifest(directory: Union[str, os.PathLike]) -> dict[str, Any]:
    path = Path(directory) / MANIFEST
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise StorageError(f"Cannot read checkpoint manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise StorageError(f"Corrupt checkpoint manifest {path}: {exc}") from exc
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise StorageError(f"Unsupported checkpoint format {manifest.get('format')!r} in {path}")
    return manifest


def load_state(
    directory: Union[str, os.PathLike],
    hierarchy: Optional[Hierarchy] = None,
) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """
    Read every tensor of a checkpoint. When `hierarchy` is given its digest
    must match the one recorded at save time.
    """
    directory = Path(directory)
    manifest = read_manifest(directory)
    if hierarchy is not None and manifest["hierarchy_digest"] != hierarchy.digest():
        raise ValidationError(
            f"Checkpoint {directory} was trained on a different hierarchy "
            f"({manifest['hierarchy_digest'][:12]} != {hierarchy.digest()[:12]})"
        )
    state = {name: read_htf(directory / relative) for name, relative in manifest["parameters"].items()}
    return state, manifest


def load_segnet(directory: Union[str, os.PathLike], hierarchy: Hierarchy) -> ToySegNet:
    state, manifest = load_state(directory, hierarchy)
    net = ToySegNet(NetConfig.from_dict(manifest["model"]))
    net.load_state_dict(state)
    net.check_hierarchy(hierarchy)
    logger.debug("Loaded %s network from %s", net.config.head, directory)
    return net


def _write_json(path: Path, data: Mapping[str, Any]) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise StorageError(f"Cannot write {path}: {exc}") from exc
