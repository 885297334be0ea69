from .base import BaseCommand, RunConfig
from . import ablate, decode, derive_labels, eval, gen_data, train, transfer, validate_hierarchy

COMMANDS = {
    module.Command.name: module.Command
    for module in (validate_hierarchy, gen_data, derive_labels, train, transfer, decode, eval, ablate)
}

__all__ = ["BaseCommand", "RunConfig", "COMMANDS"]
