from .cdsa import MAPPING_KEYS, MappingEntry, cdsa_fuse, cdsa_masks, load_mapping, resolve_mapping
from .interaction import DEFAULT_KV_TOKENS, BranchInteractionUnit, biu_forward, from_tokens, to_tokens
from .model import VARIANTS, Branch2Cache, TransLuModel, build_translu, load_translu, translu_config, translu_from_config
from .train import check_branch2_frozen, transfer_train

__all__ = [
    "MAPPING_KEYS",
    "MappingEntry",
    "cdsa_fuse",
    "cdsa_masks",
    "load_mapping",
    "resolve_mapping",
    "DEFAULT_KV_TOKENS",
    "BranchInteractionUnit",
    "biu_forward",
    "from_tokens",
    "to_tokens",
    "VARIANTS",
    "Branch2Cache",
    "TransLuModel",
    "build_translu",
    "load_translu",
    "translu_config",
    "translu_from_config",
    "check_branch2_frozen",
    "transfer_train",
]
