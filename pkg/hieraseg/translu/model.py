"""
`hieraseg` dual-branch transfer model.

Branch 2 is a frozen hierarchical network trained on the source task.
Branch 1 is a trainable network for the target (cross-domain) hierarchy.
At every encoder stage k, with knowledge sharing on:

    f1 <- BIU_k(f1, f2_k)
    f1 <- W1_k * f1 + W2_k * f2_k          (W1 = 1, W2 = 0 at start)

With semantic alignment on, Branch 2's softmax masks for the mapped nodes
multiply the matching channels of Branch 1's per-level head inputs before
its bidirectional fusion.
"""

from __future__ import annotations

import hashlib
import logging
import os
from collections import OrderedDict
from dataclasses import asdict
from typing import Any, Mapping, Sequence, Union

import numpy as np

from hieraseg import settings
from hieraseg.exceptions import ShapeError, ValidationError
from hieraseg.hierarchy import Hierarchy
from hieraseg.models.checkpoint import load_state
from hieraseg.models.segnet import NetConfig, ToySegNet
from hieraseg.numeric import ops
from hieraseg.numeric.nn import Module, Parameter, Scalar
from hieraseg.numeric.rng import derive_rng
from hieraseg.numeric.tensor import Tensor

from .cdsa import MappingEntry, cdsa_fuse, cdsa_masks
from .interaction import BranchInteractionUnit

logger = logging.getLogger(__name__)

VARIANTS = ("scratch", "pretrained", "cdks", "cdks+cdsa")


class Branch2Cache:
    """
    Frozen Branch 2 outputs per image, keyed by a digest of the image bytes.
    Every image is run on its own so results do not depend on batching.
    """

    def __init__(self, branch2: ToySegNet, capacity: int = 256):
        self.branch2 = branch2
        self.capacity = capacity
        self._entries: OrderedDict[bytes, tuple[list[np.ndarray], list[np.ndarray]]] = OrderedDict()
        self.hits = 0
        self.misses = 0

    def _run(self, image: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        batch = image[None]
        stages = self.branch2.encode(batch)
        logits = self.branch2.head(self.branch2.decode(stages, Tensor(batch)))
        return [s.data for s in stages], [l.data for l in logits]

    def get(self, image: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        key = hashlib.blake2b(np.ascontiguousarray(image).tobytes(), digest_size=16).digest()
        if key in self._entries:
            self.hits += 1
            self._entries.move_to_end(key)
            return self._entries[key]
        self.misses += 1
        entry = self._run(image)
        if self.capacity:
            self._entries[key] = entry
            if len(self._entries) > self.capacity:
                self._entries.popitem(last=False)
        return entry

    def __call__(self, images: np.ndarray) -> tuple[list[Tensor], list[Tensor]]:
        entries = [self.get(image) for image in images]
        stages = [Tensor(np.concatenate([e[0][k] for e in entries])) for k in range(len(entries[0][0]))]
        logits = [Tensor(np.concatenate([e[1][l] for e in entries])) for l in range(len(entries[0][1]))]
        return stages, logits

    def clear(self) -> None:
        self._entries.clear()


class TransLuModel(Module):
    """
    :param branch2: Hierarchical network of the source task; frozen here.
    :param branch1: Network for the target hierarchy (bhccm head).
    :param mapping: Resolved cross-domain mapping, used when `cdsa` is on.
    :param cdks: Insert interaction units and weighted stage fusion.
    :param cdsa: Apply Branch 2 masks to Branch 1 head inputs.
    :param residual_cdsa: Multiply by (1 + mask) instead of mask.
    """

    def __init__(
        self,
        branch2: ToySegNet,
        branch1: ToySegNet,
        mapping: Sequence[MappingEntry] = (),
        cdks: bool = True,
        cdsa: bool = False,
        residual_cdsa: bool = False,
        seed: int = settings.DEFAULT_SEED,
        cache_capacity: int = 256,
    ):
        if not branch2.is_hierarchical or not branch1.is_hierarchical:
            raise ValidationError("Both branches need a bhccm head")
        if branch1.config.widths != branch2.config.widths or branch1.config.in_channels != branch2.config.in_channels:
            raise ValidationError(
                f"Branch encoders differ: {branch1.config.widths} vs {branch2.config.widths}"
            )
        if cdsa and not mapping:
            raise ValidationError("Semantic alignment needs a cross-domain mapping")
        self.branch2 = branch2.freeze()
        self.branch1 = branch1
        self.mapping = tuple(mapping)
        self.cdks = cdks
        self.cdsa = cdsa
        self.residual_cdsa = residual_cdsa
        self.units: list[BranchInteractionUnit] = []
        self.stage_weights: list[tuple[Scalar, Scalar]] = []
        if cdks:
            rng = derive_rng(seed, "translu/units")
            for width in branch1.config.widths:
                self.units.append(BranchInteractionUnit(width, width, rng))
                self.stage_weights.append((Scalar(1.0), Scalar(0.0)))
        self._cache = Branch2Cache(self.branch2, cache_capacity)

    def branch2_outputs(self, images) -> tuple[list[Tensor], list[Tensor]]:
        images = np.asarray(images.data if isinstance(images, Tensor) else images, dtype=np.float64)
        self.branch1.check_input(images)
        return self._cache(images)

    def branch2_logits(self, images) -> list[np.ndarray]:
        return [l.data for l in self.branch2_outputs(images)[1]]

    def forward(self, images) -> list[Tensor]:
        """Branch 1 per-level logits."""
        img = self.branch1.check_input(images)
        need_branch2 = self.cdks or self.cdsa
        stages2, logits2 = self.branch2_outputs(img) if need_branch2 else ([], [])

        stages = []
        x = img
        for k in range(self.branch1.num_stages):
            x = self.branch1.encode_stage(k, x)
            if self.cdks:
                f2 = stages2[k]
                if f2.shape != x.shape:
                    raise ShapeError(f"stage {k + 1} fusion", x.shape, f2.shape)
                x = self.units[k](x, f2)
                w1, w2 = self.stage_weights[k]
                x = ops.add(w1(x), w2(f2))
            stages.append(x)

        dec = self.branch1.decode(stages, img)
        z_in = self.branch1.head.project(dec)
        if self.cdsa:
            masks = cdsa_masks(logits2, self.mapping)
            z_in = cdsa_fuse(z_in, masks, self.mapping, residual=self.residual_cdsa)
        return self.branch1.head.fuse(z_in)

    def interaction_parameters(self) -> list[Parameter]:
        params = [p for unit in self.units for p in unit.parameters()]
        params += [w.value for pair in self.stage_weights for w in pair]
        return params


def build_translu(
    variant: str,
    branch2: ToySegNet,
    branch1: ToySegNet,
    mapping: Sequence[MappingEntry] = (),
    residual_cdsa: bool = False,
    seed: int = settings.DEFAULT_SEED,
) -> TransLuModel:
    """
    `scratch` keeps Branch 1's random initialization; every other variant
    copies Branch 2's encoder and decoder into Branch 1 first. `cdks` adds
    the interaction units and `cdks+cdsa` also the semantic alignment.
    """
    if variant not in VARIANTS:
        raise ValidationError(f"Unknown transfer variant {variant!r}; expected one of {VARIANTS}")
    if variant != "scratch":
        branch1.load_encoder_decoder(branch2)
    model = TransLuModel(
        branch2,
        branch1,
        mapping=mapping,
        cdks=variant in ("cdks", "cdks+cdsa"),
        cdsa=variant == "cdks+cdsa",
        residual_cdsa=residual_cdsa,
        seed=seed,
    )
    logger.debug("Built %s transfer model with %d trainable parameters", variant, len(model.trainable_parameters()))
    return model


def translu_config(model: TransLuModel) -> dict:
    """Checkpoint `model` entry of a transfer model."""
    return {
        "kind": "translu",
        "branch1": model.branch1.config.to_dict(),
        "branch2": model.branch2.config.to_dict(),
        "cdks": model.cdks,
        "cdsa": model.cdsa,
        "residual_cdsa": model.residual_cdsa,
        "mapping": [asdict(entry) for entry in model.mapping],
    }


def translu_from_config(data: Mapping[str, Any]) -> TransLuModel:
    """An untrained transfer model with the architecture recorded by `translu_config`."""
    if data.get("kind") != "translu":
        raise ValidationError(f"Not a transfer model config: kind {data.get('kind')!r}")
    return TransLuModel(
        ToySegNet(NetConfig.from_dict(data["branch2"]), label="branch2"),
        ToySegNet(NetConfig.from_dict(data["branch1"]), label="branch1"),
        mapping=[MappingEntry(**entry) for entry in data["mapping"]],
        cdks=data["cdks"],
        cdsa=data["cdsa"],
        residual_cdsa=data["residual_cdsa"],
    )


def load_translu(directory: Union[str, os.PathLike], hierarchy: Hierarchy) -> TransLuModel:
    """A transfer model saved with `save_checkpoint(model, ..., translu_config(model))`."""
    state, manifest = load_state(directory, hierarchy)
    model = translu_from_config(manifest["model"])
    model.load_state_dict(state)
    model.branch1.check_hierarchy(hierarchy)
    return model
