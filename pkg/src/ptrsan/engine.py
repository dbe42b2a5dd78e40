"""Sanitizer state: register metadata, word-indexed memory metadata, shadow stack."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional

from .annotations import AnnotationDb, FunctionInfo
from .metadata import (
    MAX_FRAGMENTS, POINTER_BITS, GlobalOrigin, HeapOrigin, Identity, AnnotatedOrigin,
    PendingGlobalOrigin, PendingStackOrigin, StackOrigin, ValueMetadata, _concat, _insert,
    _slice, apply_cap, filler, meta_combine, meta_insert_bits, meta_pointer, meta_reduce,
    meta_transform, widen,
)
from .ops import (
    READ, WRITE, Access, AccessKind, BitFieldCopy, Clear, Combine, Copy, CreateGlobalPointer,
    CreateStackPointer, FrameSummary, FunctionCall, Return, SanitizerError, StackChange,
    Violation, ViolationKind,
)

WORD = 8
PAGE = 4096
ACCESS_SIZES = frozenset({1, 2, 4, 8, 16})
# the largest ADD immediate; compilers reach further with a second addition
DELAY_TRIGGER = 4095
# relaxed reads may run this many bytes past the end of an object
RELAXED_OVERREAD = 7

GENERAL_REGS = tuple(f"x{i}" for i in range(31))
VECTOR_REGS = tuple(f"q{i}" for i in range(32))
ZERO_REG = "xzr"

FILL64 = filler(64)
FILL128 = filler(128)


def register_width(name: str) -> int:
    if name[0] == "q":
        return 128
    return 64


@dataclass
class ShadowFrame:
    frame_addr: int
    frame_size: int
    entry_pc: int
    is_malloc_like: bool = False
    malloc_request: Optional[int] = None
    function_id: Optional[str] = None
    suppressed: bool = False
    delayed_sp: bool = False
    relaxed_reads: bool = False
    call_pc: Optional[int] = None
    info: Optional[FunctionInfo] = None

    @property
    def end(self) -> int:
        return self.frame_addr + self.frame_size

    def summary(self) -> FrameSummary:
        return FrameSummary(self.entry_pc, self.frame_addr, self.frame_size, self.function_id)


class SanitizerState:
    """The (regs, memory, stack) triple and the operations on it."""

    def __init__(self, annotations: Optional[AnnotationDb] = None,
                 max_fragments: int = MAX_FRAGMENTS):
        self.annotations = annotations if annotations is not None else AnnotationDb()
        self.max_fragments = max_fragments
        self.regs: dict = {r: FILL64 for r in GENERAL_REGS}
        self.regs["sp"] = FILL64
        self.regs.update((q, FILL128) for q in VECTOR_REGS)
        self.memory: dict = {}
        self.stack: list = []
        self.delayed_functions: set = set()
        # entry pc -> name, used in traces for functions without annotations
        self.symbol_names: dict = {}
        self._dispatch = {
            Copy: self._copy,
            Clear: self._clear,
            BitFieldCopy: self._bitfield_copy,
            Combine: self._combine,
            Access: self._access,
            CreateStackPointer: self._create_stack_pointer,
            CreateGlobalPointer: self._create_global_pointer,
            StackChange: self._stack_change,
            FunctionCall: self._function_call,
            Return: self._return,
        }

    # -- registers -----------------------------------------------------------

    def reg(self, name: str) -> ValueMetadata:
        if name == ZERO_REG:
            return FILL64
        try:
            return self.regs[name]
        except KeyError:
            raise SanitizerError(f"unknown register {name!r}") from None

    def _set(self, name: str, m: ValueMetadata):
        if name == ZERO_REG:
            return
        if name == "sp":
            raise SanitizerError("sp metadata is derived from the shadow stack")
        old = self.regs.get(name)
        if old is None:
            raise SanitizerError(f"unknown register {name!r}")
        if old.width != m.width:
            raise SanitizerError(f"{m.width}-bit metadata written to {name}")
        self.regs[name] = m

    def seed_register(self, name: str, m: ValueMetadata):
        self._set(name, m)

    def reg_is_pointer(self, name: str) -> bool:
        return meta_reduce(self.reg(name)) is not None

    def reg_is_global_page(self, name: str) -> bool:
        ident = meta_reduce(self.reg(name))
        return ident is not None and isinstance(ident.origin, PendingGlobalOrigin)

    def size_arg_register(self, target_pc: int) -> str:
        info = self.annotations.function_at(target_pc)
        if info is not None and info.malloc_like is not None:
            return info.malloc_like.size_arg
        return "x0"

    # -- memory --------------------------------------------------------------

    def read_memory_meta(self, addr: int, size: int) -> ValueMetadata:
        if size not in ACCESS_SIZES:
            raise SanitizerError(f"unsupported access size {size}")
        mem = self.memory
        off = addr & 7
        if off == 0 and size == WORD:
            return mem.get(addr, FILL64)
        end = addr + size
        parts = []
        w = addr - off
        while w < end:
            a = (addr if addr > w else w) - w
            b = (end if end < w + WORD else w + WORD) - w
            m = mem.get(w)
            parts.append(filler((b - a) * 8) if m is None else _slice(m, a * 8, b * 8))
            w += WORD
        return apply_cap(_concat(*parts), self.max_fragments)

    def _store_word(self, w: int, m: ValueMetadata):
        m = apply_cap(m, self.max_fragments)
        if m.is_filler:
            self.memory.pop(w, None)
        else:
            self.memory[w] = m

    def write_memory_meta(self, addr: int, m: ValueMetadata):
        size = m.width // 8
        if size not in ACCESS_SIZES or m.width % 8:
            raise SanitizerError(f"unsupported store width {m.width}")
        off = addr & 7
        if off == 0 and size == WORD:
            self._store_word(addr, m)
            return
        end = addr + size
        w = addr - off
        while w < end:
            a = addr if addr > w else w
            b = end if end < w + WORD else w + WORD
            old = self.memory.get(w, FILL64)
            new = _insert(old, m, (a - addr) * 8, (b - a) * 8, (a - w) * 8, False)
            self._store_word(w, new)
            w += WORD

    def _discard(self, lo: int, hi: int):
        """Forget metadata for bytes ``[lo, hi)``."""
        mem = self.memory
        if hi <= lo or not mem:
            return
        first = lo - (lo & 7)
        last = (hi - 1) - ((hi - 1) & 7)
        if (last - first) // WORD + 1 > len(mem):
            words = sorted(w for w in mem if first <= w <= last)
        else:
            words = [w for w in range(first, last + WORD, WORD) if w in mem]
        for w in words:
            a = lo if lo > w else w
            b = hi if hi < w + WORD else w + WORD
            if a == w and b == w + WORD:
                del mem[w]
            else:
                self._store_word(w, _insert(mem[w], FILL64, 0, (b - a) * 8, (a - w) * 8, False))

    def tracks_words(self, addr: int, size: int) -> bool:
        w = addr - (addr & 7)
        end = addr + size
        while w < end:
            if w in self.memory:
                return True
            w += WORD
        return False

    # -- shadow stack --------------------------------------------------------

    @property
    def top(self) -> ShadowFrame:
        if not self.stack:
            raise SanitizerError("shadow stack is empty")
        return self.stack[-1]

    def _sp_identity(self) -> Optional[Identity]:
        if not self.stack:
            return None
        top = self.stack[-1]
        lo = top.frame_addr
        hi = top.end
        if len(self.stack) > 1:
            hi = max(hi, self.stack[-2].end)
        return Identity(lo, max(hi - lo, 1), StackOrigin(top.entry_pc, 0))

    def _refresh_sp(self):
        ident = self._sp_identity()
        self.regs["sp"] = FILL64 if ident is None else meta_pointer(ident)

    def _new_frame(self, addr: int, entry_pc: int, call_pc: Optional[int],
                   arg0: int = 0) -> ShadowFrame:
        info = self.annotations.function_at(entry_pc)
        frame = ShadowFrame(frame_addr=addr, frame_size=0, entry_pc=entry_pc,
                            call_pc=call_pc, info=info,
                            delayed_sp=entry_pc in self.delayed_functions,
                            function_id=self.symbol_names.get(entry_pc))
        if info is not None:
            frame.function_id = info.label or frame.function_id
            frame.suppressed = info.suppress
            frame.delayed_sp = frame.delayed_sp or info.delayed_sp
            frame.relaxed_reads = info.relaxed_reads
            if info.malloc_like is not None:
                frame.is_malloc_like = True
                frame.malloc_request = arg0
        return frame

    def _frame_identity(self, frame: ShadowFrame, off: int) -> Identity:
        if 0 <= off < frame.frame_size:
            var = frame.info.lookup_var(off) if frame.info is not None else None
            if var is not None:
                return Identity(frame.frame_addr + var.sp_off, var.size,
                                StackOrigin(frame.entry_pc, var.sp_off))
            return Identity(frame.frame_addr, frame.frame_size, StackOrigin(frame.entry_pc, 0))
        return self._sp_identity()

    def stack_trace(self) -> tuple:
        return tuple(f.summary() for f in reversed(self.stack))

    # -- checks --------------------------------------------------------------

    def check_access(self, identity: Optional[Identity], addr: int, size: int,
                     mode: AccessKind, frame: Optional[ShadowFrame] = None,
                     pc: int = 0) -> Optional[Violation]:
        if size not in ACCESS_SIZES:
            raise SanitizerError(f"unsupported access size {size}")
        if identity is not None:
            base, end = identity.base, identity.base + identity.length
            if addr >= base and addr + size <= end:
                return None
            if (mode is READ and frame is not None and frame.relaxed_reads
                    and addr % size == 0 and base <= addr < end
                    and addr + size <= end + RELAXED_OVERREAD):
                return None
            kind = ViolationKind.OUT_OF_BOUNDS
        else:
            if not self.tracks_words(addr, size) and not self.annotations.overlaps_global(addr, size):
                return None
            kind = ViolationKind.UNTRACKED_POINTER
        return Violation(kind, pc, addr, size, identity, self.stack_trace(),
                         any(f.suppressed for f in self.stack))

    def _resolve(self, ident: Identity, addr: int) -> Optional[Identity]:
        origin = ident.origin
        if isinstance(origin, PendingGlobalOrigin):
            g = self.annotations.lookup_global(addr)
            if g is None:
                # nothing at the address: fall back to a global starting at the page base
                g = self.annotations.lookup_global(origin.page)
                if g is None or g.addr != origin.page:
                    return None
            return Identity(g.addr, g.size, GlobalOrigin(g.addr, g.name))
        for f in reversed(self.stack):
            if f.entry_pc == origin.frame_pc and f.end == origin.frame_end:
                return self._frame_identity(f, addr - f.frame_addr)
        return ident

    # -- operations ----------------------------------------------------------

    def apply(self, op, pc: int = 0) -> Optional[Violation]:
        try:
            handler = self._dispatch[type(op)]
        except KeyError:
            raise SanitizerError(f"not a sanitizer operation: {op!r}") from None
        return handler(op, pc)

    def _copy(self, op: Copy, pc):
        self._set(op.dst, meta_transform(self.reg(op.src), op.transform, self.max_fragments))

    def _clear(self, op: Clear, pc):
        if op.reg == ZERO_REG:
            return
        self._set(op.reg, filler(register_width(op.reg)))

    def _bitfield_copy(self, op: BitFieldCopy, pc):
        self._set(op.dst, meta_insert_bits(self.reg(op.dst), self.reg(op.src), op.src_off,
                                           op.size, op.dst_off, op.clear, self.max_fragments))

    def _combine(self, op: Combine, pc):
        self._set(op.dst, meta_combine(self.reg(op.a), self.reg(op.b), self.max_fragments))

    def _access(self, op: Access, pc):
        if op.size not in ACCESS_SIZES:
            raise SanitizerError(f"unsupported access size {op.size}")
        bits = op.size * 8
        if bits > register_width(op.reg):
            raise SanitizerError(f"{op.size}-byte access through {op.reg}")
        ident = meta_reduce(self.reg(op.via))
        if ident is not None and ident.pending:
            ident = self._resolve(ident, op.addr)
            if op.via != "sp":
                self._set(op.via, FILL64 if ident is None else meta_pointer(ident))
        reg_meta = self.reg(op.reg)
        frame = self.stack[-1] if self.stack else None
        violation = self.check_access(ident, op.addr, op.size, op.kind, frame, pc)
        if op.kind is READ:
            if op.reg != ZERO_REG:
                self._set(op.reg, apply_cap(widen(self.read_memory_meta(op.addr, op.size),
                                                   reg_meta.width), self.max_fragments))
        else:
            value = reg_meta if bits == reg_meta.width else _slice(reg_meta, 0, bits)
            self.write_memory_meta(op.addr, value)
        return violation

    def _create_stack_pointer(self, op: CreateStackPointer, pc):
        frame = self.top
        if op.sp_off == DELAY_TRIGGER:
            frame.delayed_sp = True
            self.delayed_functions.add(frame.entry_pc)
        if frame.delayed_sp:
            span = self._sp_identity()
            ident = Identity(span.base, span.length,
                             PendingStackOrigin(frame.entry_pc, frame.end, op.sp_off))
        else:
            ident = self._frame_identity(frame, op.base + op.sp_off - frame.frame_addr)
        self._set(op.dst, meta_pointer(ident))

    def _create_global_pointer(self, op: CreateGlobalPointer, pc):
        page = op.offset - (op.offset % PAGE)
        if op.offset != page:
            g = self.annotations.lookup_global(op.offset)
            if g is not None:
                self._set(op.dst, meta_pointer(Identity(g.addr, g.size, GlobalOrigin(g.addr, g.name))))
                return
        self._set(op.dst, meta_pointer(Identity(page, PAGE, PendingGlobalOrigin(page))))

    def _stack_change(self, op: StackChange, pc):
        new = op.new_base
        stack = self.stack
        if not stack:
            raise SanitizerError("stack change with an empty shadow stack")
        top = stack[-1]
        if new < top.frame_addr:
            top.frame_size += top.frame_addr - new
            top.frame_addr = new
        elif new > top.frame_addr:
            # unwinding past whole frames (longjmp-like) drops them
            while len(stack) > 1 and new > stack[-1].end:
                gone = stack.pop()
                self._discard(gone.frame_addr, gone.end)
            top = stack[-1]
            if new <= top.end:
                self._discard(top.frame_addr, new)
                top.frame_size = top.end - new
                top.frame_addr = new
            else:
                self._discard(top.frame_addr, top.end)
                top.frame_addr = new
                top.frame_size = 0
        self._refresh_sp()

    def _function_call(self, op: FunctionCall, pc):
        stack = self.stack
        if op.tail and len(stack) > 1:
            gone = stack.pop()
            self._discard(gone.frame_addr, gone.end)
        elif stack and op.sp < stack[-1].frame_addr:
            top = stack[-1]
            top.frame_size += top.frame_addr - op.sp
            top.frame_addr = op.sp
        stack.append(self._new_frame(op.sp, op.target_pc, pc, op.arg0))
        self._refresh_sp()

    def _return(self, op: Return, pc):
        if not self.stack:
            raise SanitizerError("return with an empty shadow stack")
        frame = self.stack.pop()
        self._discard(frame.frame_addr, frame.end)
        if frame.is_malloc_like:
            if frame.malloc_request:
                ident = Identity(op.value, frame.malloc_request, HeapOrigin(frame.call_pc or 0))
                self._set(op.reg, meta_pointer(ident))
            else:
                self._set(op.reg, filler(register_width(op.reg)))
        self._refresh_sp()

    # -- snapshots -----------------------------------------------------------

    def clone(self) -> "SanitizerState":
        other = copy.copy(self)
        other.regs = dict(self.regs)
        other.memory = dict(self.memory)
        other.stack = [copy.copy(f) for f in self.stack]
        other.delayed_functions = set(self.delayed_functions)
        other._dispatch = {k: getattr(other, v.__name__) for k, v in self._dispatch.items()}
        return other

    def summary(self) -> dict:
        return {
            "stack_depth": len(self.stack),
            "tracked_words": len(self.memory),
            "pointer_registers": sorted(r for r in self.regs if r != "sp" and self.reg_is_pointer(r)),
        }


def engine_init(annotations: Optional[AnnotationDb] = None, initial_sp: int = 0,
                entry_pc: int = 0, max_fragments: int = MAX_FRAGMENTS,
                root_size: int = 0) -> SanitizerState:
    """A fresh state with one root frame for the entry function at ``initial_sp``."""
    state = SanitizerState(annotations, max_fragments)
    state.stack.append(state._new_frame(initial_sp, entry_pc, None))
    if root_size:
        state.stack[0].frame_size = root_size
    state._refresh_sp()
    for slot in state.annotations.pointer_slots:
        name = slot.name or f"slot@{slot.addr:#x}"
        ident = Identity(slot.base, slot.length, AnnotatedOrigin(name))
        state.write_memory_meta(slot.addr, meta_pointer(ident))
    return state


def apply(state: SanitizerState, op, pc: int = 0) -> Optional[Violation]:
    return state.apply(op, pc)
