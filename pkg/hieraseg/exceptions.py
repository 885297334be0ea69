"""
Error types raised by hieraseg.

Each error carries the process exit code the command line reports for it.
"""

from typing import Optional


class HieraSegError(Exception):
    exit_code = 1
    category = "error"


class ValidationError(HieraSegError, ValueError):
    """Invalid input: structure, ranges, level counts, configuration."""

    exit_code = 2
    category = "validation"


class HierarchyError(ValidationError):
    """
    Structural error in a hierarchy document.

    :param class_name: Offending class, when the error concerns one class.
    :param level: Level name the class lives at (or should live at).
    :param offset: Byte offset for JSON parse errors.
    """

    def __init__(
        self,
        message: str,
        *,
        class_name: Optional[str] = None,
        level: Optional[str] = None,
        offset: Optional[int] = None,
    ):
        super().__init__(message)
        self.class_name = class_name
        self.level = level
        self.offset = offset


class ShapeError(ValidationError):
    """Incompatible tensor shapes for an op."""

    def __init__(self, op: str, *shapes):
        shapes_str = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shapes_str}")
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)


class NumericalError(HieraSegError, ArithmeticError):
    exit_code = 3
    category = "numerical"


class StorageError(HieraSegError, OSError):
    exit_code = 4
    category = "io"
