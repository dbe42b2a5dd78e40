"""The ten sanitizer operations and the violation record."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from .metadata import NOTHING, Identity, MetaTransform


class AccessKind(Enum):
    READ = "Read"
    WRITE = "Write"


READ = AccessKind.READ
WRITE = AccessKind.WRITE


@dataclass(frozen=True, slots=True)
class Copy:
    src: str
    dst: str
    transform: MetaTransform = NOTHING


@dataclass(frozen=True, slots=True)
class Clear:
    reg: str


@dataclass(frozen=True, slots=True)
class BitFieldCopy:
    dst: str
    src: str
    src_off: int
    size: int
    dst_off: int
    clear: bool


@dataclass(frozen=True, slots=True)
class Combine:
    a: str
    b: str
    dst: str


@dataclass(frozen=True, slots=True)
class Access:
    kind: AccessKind
    addr: int
    via: str
    reg: str
    size: int


@dataclass(frozen=True, slots=True)
class CreateStackPointer:
    pc: int
    sp_off: int
    base: int
    dst: str


@dataclass(frozen=True, slots=True)
class CreateGlobalPointer:
    pc: int
    offset: int
    dst: str


@dataclass(frozen=True, slots=True)
class StackChange:
    offset: int
    new_base: int


@dataclass(frozen=True, slots=True)
class FunctionCall:
    sp: int
    target_pc: int
    arg0: int
    # BR: the callee replaces the caller's frame instead of stacking on it
    tail: bool = False


@dataclass(frozen=True, slots=True)
class Return:
    reg: str
    value: int


SanitizerOp = Union[Copy, Clear, BitFieldCopy, Combine, Access, CreateStackPointer,
                    CreateGlobalPointer, StackChange, FunctionCall, Return]

OP_KINDS = (Copy, Clear, BitFieldCopy, Combine, Access, CreateStackPointer,
            CreateGlobalPointer, StackChange, FunctionCall, Return)


class ViolationKind(Enum):
    OUT_OF_BOUNDS = "OutOfBounds"
    UNTRACKED_POINTER = "UntrackedPointerIntoTracked"


@dataclass(frozen=True)
class FrameSummary:
    entry_pc: int
    frame_addr: int
    frame_size: int
    function: Optional[str] = None


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    pc: int
    access_addr: int
    access_size: int
    via_identity: Optional[Identity] = None
    stack_trace: tuple = field(default=())
    suppressed: bool = False

    def describe(self) -> str:
        via = "untracked pointer" if self.via_identity is None else (
            f"identity [{self.via_identity.base:#x}, {self.via_identity.end:#x})")
        return (f"{self.kind.value} at pc {self.pc:#x}: {self.access_size}-byte access "
                f"at {self.access_addr:#x} via {via}")


class SanitizerError(Exception):
    """A malformed operation or impossible state; not a memory-safety finding."""
