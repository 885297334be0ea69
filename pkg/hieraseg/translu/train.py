"""
`hieraseg` transfer training.
"""

from __future__ import annotations

import logging
from typing import Optional, Sequence

from hieraseg.datagen import Dataset
from hieraseg.exceptions import ValidationError
from hieraseg.hierarchy import Hierarchy
from hieraseg.numeric.nn import Parameter
from hieraseg.training import TrainConfig, TrainResult, train_model

from .model import TransLuModel

logger = logging.getLogger(__name__)


def check_branch2_frozen(model: TransLuModel, params: Sequence[Parameter]) -> None:
    """Refuse any optimizer setup that could update Branch 2."""
    frozen = {id(p) for p in model.branch2.parameters()}
    if any(not p.frozen or p.requires_grad for p in model.branch2.parameters()):
        raise ValidationError("Branch 2 has trainable parameters; it must stay frozen during transfer")
    leaked = [p for p in params if id(p) in frozen]
    if leaked:
        raise ValidationError(f"{len(leaked)} Branch 2 parameters were handed to the optimizer")


def transfer_train(
    model: TransLuModel,
    train: Dataset,
    hierarchy: Hierarchy,
    cfg: TrainConfig,
    val: Optional[Dataset] = None,
    label: str = "transfer",
) -> TrainResult:
    """Train Branch 1 (and the interaction units) on the target task."""
    model.branch1.check_hierarchy(hierarchy)
    params = model.trainable_parameters()
    check_branch2_frozen(model, params)
    logger.info(
        "Transfer training %d parameters (%d frozen in Branch 2)",
        sum(p.size for p in params),
        model.branch2.num_parameters(),
    )
    return train_model(model, params, train, hierarchy, cfg, val=val, label=label)
