"""Naive bit-granular reference model and a random operation-sequence generator.

Every register holds one label per bit and memory holds one 8-label tuple per
byte.  A label is ``None`` or ``(identity, pointer_bit_index)``.  There are no
fragments, no fragment cap and no fast paths; this module exists only to check
:mod:`ptrsan.engine` and :mod:`ptrsan.metadata` differentially.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

from .annotations import AnnotationDb, FrameVar, FunctionInfo, GlobalVar, MallocLike, PointerSlot
from .metadata import (
    AnnotatedOrigin, GlobalOrigin, filler, HeapOrigin, Identity, MetaTransform, PendingGlobalOrigin,
    PendingStackOrigin, StackOrigin, TransformKind, ValueMetadata,
)
from .ops import (
    OP_KINDS, READ, WRITE, Access, BitFieldCopy, Clear, Combine, Copy, CreateGlobalPointer,
    CreateStackPointer, FrameSummary, FunctionCall, Return, SanitizerError, StackChange,
    Violation, ViolationKind,
)

BYTE_FILL = (None,) * 8
_ENGINE_FILL = {n: filler(n) for n in (64, 128)}


_FILL = {n: (None,) * n for n in (8, 16, 32, 64, 128)}


def fill(n: int) -> tuple:
    t = _FILL.get(n)
    return t if t is not None else (None,) * n


@lru_cache(maxsize=8192)
def pointer_bits(ident: Identity) -> tuple:
    return tuple((ident, i) for i in range(64))


def to_bits(m: ValueMetadata) -> tuple:
    out: list = []
    for f in m.fragments:
        if f.identity is None:
            out.extend([None] * (f.end - f.start))
        else:
            ident = f.identity
            out.extend((ident, i) for i in range(f.start, f.end))
    return tuple(out)


def bits_reduce(bits: tuple) -> Optional[Identity]:
    if len(bits) < 64 or bits[0] is None or bits[0][1] != 0:
        return None
    ident = bits[0][0]
    if bits[:64] != pointer_bits(ident):
        return None
    for b in bits[64:]:
        if b is not None:
            return None
    return ident


def count_runs(bits: tuple) -> int:
    """Number of fragments in the canonical form of ``bits``."""
    runs = 0
    prev = 0  # sentinel distinct from None and from any label
    for b in bits:
        if b is None:
            if prev is not None:
                runs += 1
        elif (prev is None or prev == 0 or prev[1] + 1 != b[1]
              or (prev[0] is not b[0] and prev[0] != b[0])):
            runs += 1
        prev = b
    return runs


def bits_runs(bits: tuple) -> tuple:
    """Canonical run list ``(identity | None, start, end)``; filler runs start at 0."""
    out: list = []
    i = 0
    n = len(bits)
    while i < n:
        b = bits[i]
        j = i + 1
        if b is None:
            while j < n and bits[j] is None:
                j += 1
            out.append((None, 0, j - i))
        else:
            ident, k = b
            while j < n:
                c = bits[j]
                if c is None or c[1] != k + (j - i) or (c[0] is not ident and c[0] != ident):
                    break
                j += 1
            out.append((ident, k, k + j - i))
        i = j
    return tuple(out)


def fragment_runs(m: ValueMetadata) -> tuple:
    return tuple((f.identity, f.start, f.end) for f in m.fragments)


def bits_transform(bits: tuple, t: MetaTransform) -> tuple:
    w = len(bits)
    n = t.amount
    k = t.kind
    if k is TransformKind.NOTHING:
        return bits
    if k is TransformKind.SHIFT_LEFT:
        return fill(w) if n >= w else fill(n) + bits[:w - n]
    if k is TransformKind.SHIFT_RIGHT:
        return fill(w) if n >= w else bits[n:] + fill(n)
    n %= w
    if k is TransformKind.ROTATE_LEFT:
        return bits[w - n:] + bits[:w - n]
    return bits[n:] + bits[:n]


def bits_insert(dst: tuple, src: tuple, src_off: int, size: int, dst_off: int,
                clear: bool) -> tuple:
    out = list(fill(len(dst)) if clear else dst)
    out[dst_off:dst_off + size] = src[src_off:src_off + size]
    return tuple(out)


def bits_combine(a: tuple, b: tuple) -> tuple:
    ra, rb = bits_reduce(a), bits_reduce(b)
    if ra is not None and rb is None:
        return a
    if rb is not None and ra is None:
        return b
    if ra is not None:
        return fill(len(a))
    return tuple(x if y is None else (y if x is None else None) for x, y in zip(a, b))


def bits_cap(bits: tuple, max_fragments: int) -> tuple:
    return fill(len(bits)) if count_runs(bits) > max_fragments else bits


# ---------------------------------------------------------------------------
# Reference state machine
# ---------------------------------------------------------------------------

class NaiveFrame:
    __slots__ = ("addr", "size", "entry_pc", "info", "malloc", "request", "call_pc",
                 "suppressed", "delayed", "relaxed", "name")

    def __init__(self, addr, entry_pc, info, call_pc, arg0, delayed_fns):
        self.addr = addr
        self.size = 0
        self.entry_pc = entry_pc
        self.info = info
        self.call_pc = call_pc
        self.malloc = info is not None and info.malloc_like is not None
        self.request = arg0 if self.malloc else None
        self.suppressed = info is not None and info.suppress
        self.delayed = entry_pc in delayed_fns or (info is not None and info.delayed_sp)
        self.relaxed = info is not None and info.relaxed_reads
        self.name = info.label if info is not None else None

    def copy(self) -> "NaiveFrame":
        other = object.__new__(NaiveFrame)
        for s in NaiveFrame.__slots__:
            setattr(other, s, getattr(self, s))
        return other


def _linear_function(db: AnnotationDb, pc: int) -> Optional[FunctionInfo]:
    for f in db.functions:
        if f.key == pc:
            return f
    return None


def _linear_var(info: Optional[FunctionInfo], off: int) -> Optional[FrameVar]:
    if info is None:
        return None
    for v in info.frame_vars:
        if v.sp_off <= off < v.sp_off + v.size:
            return v
    return None


def _linear_global(db: AnnotationDb, addr: int) -> Optional[GlobalVar]:
    for g in db.globals:
        if g.addr <= addr < g.addr + g.size:
            return g
    return None


_STACK_OPS = (CreateStackPointer, StackChange, FunctionCall, Return)


class NaiveState:
    """Bit-per-bit model of the sanitizer contract."""

    def __init__(self, annotations: Optional[AnnotationDb] = None, initial_sp: int = 0,
                 entry_pc: int = 0, root_size: int = 0):
        self.db = annotations if annotations is not None else AnnotationDb()
        self.regs: dict = {f"x{i}": fill(64) for i in range(31)}
        self.regs.update((f"q{i}", fill(128)) for i in range(32))
        self.mem: dict = {}
        self.delayed_fns: set = set()
        root = NaiveFrame(initial_sp, entry_pc, _linear_function(self.db, entry_pc), None, 0,
                          self.delayed_fns)
        root.size = root_size
        self.stack: list = [root]
        self._journal = None
        self._sp_bits()
        for slot in self.db.pointer_slots:
            ident = Identity(slot.base, slot.length,
                             AnnotatedOrigin(slot.name or f"slot@{slot.addr:#x}"))
            bits = pointer_bits(ident)
            for i in range(8):
                self._set_byte(slot.addr + i, bits[8 * i:8 * i + 8])

    # -- journaled mutation --------------------------------------------------

    def checkpoint(self, op=None):
        """Start journaling; ``op`` lets stack-neutral operations skip the frame copy."""
        if op is None or type(op) in _STACK_OPS:
            self._journal = ({}, {}, [f.copy() for f in self.stack], set(self.delayed_fns))
        else:
            self._journal = ({}, {}, list(self.stack), self.delayed_fns)

    def rollback(self):
        regs, mem, stack, delayed = self._journal
        self.regs.update(regs)
        for b, old in mem.items():
            if old is None:
                self.mem.pop(b, None)
            else:
                self.mem[b] = old
        self.stack = stack
        self.delayed_fns = delayed
        self._journal = None

    def commit(self):
        journal = self._journal
        self._journal = None
        return journal

    def _set_reg(self, name, bits):
        if name == "xzr":
            return
        if name not in self.regs:
            raise SanitizerError(f"unknown register {name!r}")
        if len(bits) != len(self.regs[name]):
            raise SanitizerError(f"width mismatch writing {name}")
        if self._journal is not None and name not in self._journal[0]:
            self._journal[0][name] = self.regs[name]
        self.regs[name] = bits

    def _set_byte(self, b, labels):
        if self._journal is not None and b not in self._journal[1]:
            self._journal[1][b] = self.mem.get(b)
        if labels == BYTE_FILL:
            self.mem.pop(b, None)
        else:
            self.mem[b] = labels

    def copy(self) -> "NaiveState":
        other = object.__new__(NaiveState)
        other.db = self.db
        other.regs = dict(self.regs)
        other.mem = dict(self.mem)
        other.delayed_fns = set(self.delayed_fns)
        other.stack = [f.copy() for f in self.stack]
        other._journal = None
        return other

    def get(self, name) -> tuple:
        if name == "xzr":
            return fill(64)
        try:
            return self.regs[name]
        except KeyError:
            raise SanitizerError(f"unknown register {name!r}") from None

    # -- stack helpers --------------------------------------------------------

    def _span(self) -> Optional[Identity]:
        if not self.stack:
            return None
        top = self.stack[-1]
        hi = top.addr + top.size
        if len(self.stack) > 1:
            below = self.stack[-2]
            hi = max(hi, below.addr + below.size)
        return Identity(top.addr, max(hi - top.addr, 1), StackOrigin(top.entry_pc, 0))

    def _sp_bits(self):
        span = self._span()
        if self._journal is not None and "sp" not in self._journal[0]:
            self._journal[0]["sp"] = self.regs.get("sp")
        self.regs["sp"] = fill(64) if span is None else pointer_bits(span)

    def _var_identity(self, frame: NaiveFrame, off: int) -> Identity:
        if 0 <= off < frame.size:
            var = _linear_var(frame.info, off)
            if var is not None:
                return Identity(frame.addr + var.sp_off, var.size,
                                StackOrigin(frame.entry_pc, var.sp_off))
            return Identity(frame.addr, frame.size, StackOrigin(frame.entry_pc, 0))
        return self._span()

    def _forget(self, lo, hi):
        if hi - lo > len(self.mem):
            doomed = [b for b in self.mem if lo <= b < hi]
        else:
            doomed = [b for b in range(lo, hi) if b in self.mem]
        for b in doomed:
            self._set_byte(b, BYTE_FILL)

    def _trace(self):
        return tuple(FrameSummary(f.entry_pc, f.addr, f.size, f.name) for f in reversed(self.stack))

    def _word_tracked(self, addr, size) -> bool:
        w = addr - addr % 8
        while w < addr + size:
            for b in range(w, w + 8):
                if b in self.mem:
                    return True
            w += 8
        return False

    def word_bits(self, w: int) -> tuple:
        out = ()
        for b in range(w, w + 8):
            out += self.mem.get(b, BYTE_FILL)
        return out

    def words(self) -> set:
        return {b - b % 8 for b in self.mem}

    # -- the ten operations ---------------------------------------------------

    def apply(self, op, pc: int = 0) -> Optional[Violation]:
        t = type(op)
        if t is Copy:
            self._set_reg(op.dst, bits_transform(self.get(op.src), op.transform))
        elif t is Clear:
            self._set_reg(op.reg, fill(len(self.get(op.reg))))
        elif t is BitFieldCopy:
            self._set_reg(op.dst, bits_insert(self.get(op.dst), self.get(op.src), op.src_off,
                                              op.size, op.dst_off, op.clear))
        elif t is Combine:
            self._set_reg(op.dst, bits_combine(self.get(op.a), self.get(op.b)))
        elif t is Access:
            return self._access(op, pc)
        elif t is CreateStackPointer:
            top = self.stack[-1]
            if op.sp_off == 4095:
                top.delayed = True
                self.delayed_fns.add(top.entry_pc)
            if top.delayed:
                span = self._span()
                ident = Identity(span.base, span.length,
                                 PendingStackOrigin(top.entry_pc, top.addr + top.size, op.sp_off))
            else:
                ident = self._var_identity(top, op.base + op.sp_off - top.addr)
            self._set_reg(op.dst, pointer_bits(ident))
        elif t is CreateGlobalPointer:
            page = op.offset - op.offset % 4096
            g = _linear_global(self.db, op.offset) if op.offset != page else None
            if g is not None:
                ident = Identity(g.addr, g.size, GlobalOrigin(g.addr, g.name))
            else:
                ident = Identity(page, 4096, PendingGlobalOrigin(page))
            self._set_reg(op.dst, pointer_bits(ident))
        elif t is StackChange:
            self._stack_change(op.new_base)
        elif t is FunctionCall:
            if op.tail and len(self.stack) > 1:
                gone = self.stack.pop()
                self._forget(gone.addr, gone.addr + gone.size)
            elif self.stack and op.sp < self.stack[-1].addr:
                top = self.stack[-1]
                top.size += top.addr - op.sp
                top.addr = op.sp
            info = _linear_function(self.db, op.target_pc)
            self.stack.append(NaiveFrame(op.sp, op.target_pc, info, pc, op.arg0, self.delayed_fns))
            self._sp_bits()
        elif t is Return:
            if not self.stack:
                raise SanitizerError("return with an empty shadow stack")
            f = self.stack.pop()
            self._forget(f.addr, f.addr + f.size)
            if f.malloc:
                if f.request:
                    ident = Identity(op.value, f.request, HeapOrigin(f.call_pc or 0))
                    self._set_reg(op.reg, pointer_bits(ident))
                else:
                    self._set_reg(op.reg, fill(len(self.get(op.reg))))
            self._sp_bits()
        else:
            raise SanitizerError(f"not a sanitizer operation: {op!r}")
        return None

    def _stack_change(self, new):
        if not self.stack:
            raise SanitizerError("stack change with an empty shadow stack")
        top = self.stack[-1]
        if new < top.addr:
            top.size += top.addr - new
            top.addr = new
        elif new > top.addr:
            while len(self.stack) > 1 and new > self.stack[-1].addr + self.stack[-1].size:
                gone = self.stack.pop()
                self._forget(gone.addr, gone.addr + gone.size)
            top = self.stack[-1]
            end = top.addr + top.size
            if new <= end:
                self._forget(top.addr, new)
                top.size = end - new
                top.addr = new
            else:
                self._forget(top.addr, end)
                top.addr = new
                top.size = 0
        self._sp_bits()

    def _access(self, op: Access, pc) -> Optional[Violation]:
        size = op.size
        if size not in (1, 2, 4, 8, 16):
            raise SanitizerError(f"unsupported access size {size}")
        if size * 8 > len(self.get(op.reg)):
            raise SanitizerError("access wider than its register")
        ident = bits_reduce(self.get(op.via))
        if ident is not None and isinstance(ident.origin, (PendingGlobalOrigin, PendingStackOrigin)):
            o = ident.origin
            if isinstance(o, PendingGlobalOrigin):
                g = _linear_global(self.db, op.addr)
                if g is None:
                    g = _linear_global(self.db, o.page)
                    if g is not None and g.addr != o.page:
                        g = None
                ident = None if g is None else Identity(g.addr, g.size, GlobalOrigin(g.addr, g.name))
            else:
                for f in reversed(self.stack):
                    if f.entry_pc == o.frame_pc and f.addr + f.size == o.frame_end:
                        ident = self._var_identity(f, op.addr - f.addr)
                        break
            if op.via != "sp":
                self._set_reg(op.via, fill(64) if ident is None else pointer_bits(ident))

        addr = op.addr
        kind = None
        if ident is not None:
            lo, hi = ident.base, ident.base + ident.length
            ok = lo <= addr and addr + size <= hi
            top = self.stack[-1] if self.stack else None
            if (not ok and op.kind is READ and top is not None and top.relaxed
                    and addr % size == 0 and lo <= addr < hi and addr + size <= hi + 7):
                ok = True
            if not ok:
                kind = ViolationKind.OUT_OF_BOUNDS
        else:
            in_global = any(g.addr < addr + size and addr < g.addr + g.size for g in self.db.globals)
            if in_global or self._word_tracked(addr, size):
                kind = ViolationKind.UNTRACKED_POINTER
        violation = None
        if kind is not None:
            violation = Violation(kind, pc, addr, size, ident, self._trace(),
                                  any(f.suppressed for f in self.stack))

        if op.kind is READ:
            bits = ()
            for i in range(size):
                bits += self.mem.get(addr + i, BYTE_FILL)
            width = len(self.get(op.reg))
            self._set_reg(op.reg, bits + fill(width - len(bits)))
        else:
            bits = self.get(op.reg)
            for i in range(size):
                self._set_byte(addr + i, bits[8 * i:8 * i + 8])
        return violation


def oracle_apply(state: NaiveState, op, pc: int = 0) -> Optional[Violation]:
    return state.apply(op, pc)


# ---------------------------------------------------------------------------
# Random operation sequences
# ---------------------------------------------------------------------------

DIFF_INITIAL_SP = 0x10000
DIFF_ENTRY_PC = 0x1000
DIFF_ROOT_SIZE = 0x40
UNTRACKED_AREA = 0x5000
HEAP_AREA = 0x8000


@lru_cache(maxsize=1)
def differential_annotations() -> AnnotationDb:
    """The fixed layout random sequences are generated against."""
    return AnnotationDb(
        globals=[GlobalVar("g_a", 0x2000, 24), GlobalVar("g_b", 0x2020, 8),
                 GlobalVar("g_c", 0x2030, 13)],
        functions=[
            FunctionInfo(0x1000, "f_vars", frame_vars=(FrameVar(0, 8, "a"), FrameVar(8, 16, "b"),
                                                       FrameVar(32, 5, "c"))),
            FunctionInfo(0x1100, "f_delayed", frame_vars=(FrameVar(16, 24, "d"),), delayed_sp=True),
            FunctionInfo(0x1200, "f_relaxed", frame_vars=(FrameVar(8, 12, "s"),), relaxed_reads=True),
            FunctionInfo(0x1300, "f_malloc", malloc_like=MallocLike("x0"), suppress=True),
            FunctionInfo(0x1400, "f_quiet", suppress=True),
        ],
        pointer_slots=[PointerSlot(0x2000, 0x2020, 8), PointerSlot(0x2044, 0x2030, 13),
                       PointerSlot(UNTRACKED_AREA + 8, HEAP_AREA, 32, "heap0")],
    )


@dataclass(frozen=True)
class GenConstraints:
    max_fragments: int = 6
    x_regs: tuple = ("x0", "x1", "x2", "x3", "x4", "x5")
    q_regs: tuple = ("q0", "q1")
    function_pcs: tuple = (0x1000, 0x1100, 0x1200, 0x1300, 0x1400, 0x1500)
    max_depth: int = 5
    attempts: int = 8


@dataclass
class GeneratedSequence:
    ops: list
    pcs: list
    oracle: NaiveState
    violations: list = field(default_factory=list)
    kind_counts: dict = field(default_factory=dict)


def new_differential_oracle(db: Optional[AnnotationDb] = None) -> NaiveState:
    if db is not None:
        return NaiveState(db, DIFF_INITIAL_SP, DIFF_ENTRY_PC, DIFF_ROOT_SIZE)
    return _fresh_template().copy()


@lru_cache(maxsize=1)
def _fresh_template() -> NaiveState:
    return NaiveState(differential_annotations(), DIFF_INITIAL_SP, DIFF_ENTRY_PC, DIFF_ROOT_SIZE)


@lru_cache(maxsize=1)
def _engine_template():
    from .engine import engine_init
    return engine_init(differential_annotations(), DIFF_INITIAL_SP, DIFF_ENTRY_PC,
                       root_size=DIFF_ROOT_SIZE)


def new_differential_engine(max_fragments: int = 6):
    """An engine state laid out exactly like :func:`new_differential_oracle`."""
    eng = _engine_template().clone()
    eng.max_fragments = max_fragments
    return eng


class _Generator:
    def __init__(self, seed: int, constraints: GenConstraints):
        self.rng = random.Random(seed)
        self.c = constraints
        self.heap_next = HEAP_AREA + 0x100

    def _shift(self, width):
        rng = self.rng
        kind = rng.choice((TransformKind.NOTHING, TransformKind.NOTHING, TransformKind.SHIFT_LEFT,
                           TransformKind.SHIFT_RIGHT, TransformKind.ROTATE_LEFT,
                           TransformKind.ROTATE_RIGHT))
        if kind is TransformKind.NOTHING:
            return MetaTransform()
        n = rng.choice((8, 16, 24, 32, 48, width)) if rng.random() < 0.7 else rng.randint(0, width)
        return MetaTransform(kind, n)

    def _address(self, st: NaiveState, via: str, size: int) -> int:
        rng = self.rng
        ident = bits_reduce(st.get(via))
        r = rng.random()
        if r < 0.15 and st.mem:
            # land on or next to bytes that already carry labels (memcpy-style moves)
            b = rng.choice(list(st.mem))
            return max(0, b + rng.randint(-7, 7))
        if ident is not None and not ident.pending and r < 0.4:
            # straddle the object's end, aligned, to exercise the relaxed over-read rule
            end = ident.base + ident.length
            addr = end - size + rng.randint(-1, 8)
            return max(0, addr - addr % size)
        if ident is not None and r < 0.75:
            if ident.pending and rng.random() < 0.7:
                # dereference near an annotated object so pending pointers resolve
                g = rng.choice(st.db.globals)
                if isinstance(ident.origin, PendingStackOrigin):
                    top = st.stack[-1]
                    return top.addr + rng.randint(0, top.size + 8)
                return g.addr + rng.randint(-4, g.size + 4)
            return max(0, ident.base + rng.randint(-9, ident.length + 9))
        regions = [(g.addr, g.size) for g in st.db.globals]
        regions.append((UNTRACKED_AREA, 32))
        regions.append((HEAP_AREA, 64))
        top = st.stack[-1]
        regions.append((top.addr, top.size + 16))
        base, size = rng.choice(regions)
        return max(0, base + rng.randint(-8, size + 8))

    def propose(self, st: NaiveState):
        rng = self.rng
        c = self.c
        kinds = (Copy, Clear, BitFieldCopy, Combine, Access, Access, Access,
                 CreateStackPointer, CreateGlobalPointer, StackChange, FunctionCall, Return)
        kind = rng.choice(kinds)
        wide = rng.random() < 0.25
        regs = c.q_regs if wide else c.x_regs
        pick = rng.choice
        if kind is Copy:
            src = pick(regs + (("sp",) if not wide else ()))
            return Copy(src, pick(regs), self._shift(128 if wide else 64))
        if kind is Clear:
            return Clear(pick(regs))
        if kind is BitFieldCopy:
            dst = pick(c.x_regs + c.q_regs)
            src = pick(c.x_regs + c.q_regs)
            dw = 128 if dst[0] == "q" else 64
            sw = 128 if src[0] == "q" else 64
            size = rng.choice((8, 16, 32, 64, rng.randint(1, min(dw, sw))))
            size = min(size, dw, sw)
            src_off = rng.choice((0, rng.randint(0, sw - size)))
            dst_off = rng.choice((0, 64, rng.randint(0, dw - size)))
            if dst_off + size > dw:
                dst_off = dw - size
            return BitFieldCopy(dst, src, src_off, size, dst_off, rng.random() < 0.4)
        if kind is Combine:
            return Combine(pick(regs), pick(regs), pick(regs))
        if kind is Access:
            via = pick(c.x_regs + ("sp", "sp"))
            if rng.random() < 0.2:
                reg, size = pick(c.q_regs), rng.choice((16, 8, 4))
            else:
                reg, size = pick(c.x_regs), rng.choice((1, 2, 4, 8, 8, 8))
            addr = self._address(st, via, size)
            if rng.random() < 0.5:
                addr -= addr % size
            return Access(rng.choice((READ, WRITE)), addr, via, reg, size)
        top = st.stack[-1]
        if kind is CreateStackPointer:
            off = 4095 if rng.random() < 0.03 else rng.randint(0, top.size + 16)
            return CreateStackPointer(rng.randint(0, 0xfff) * 4, off, top.addr, pick(c.x_regs))
        if kind is CreateGlobalPointer:
            return CreateGlobalPointer(rng.randint(0, 0xfff) * 4,
                                       rng.choice((0x2000, 0x2010, 0x2020, 0x2038, 0x2100, UNTRACKED_AREA)), pick(c.x_regs))
        if kind is StackChange:
            r = rng.random()
            if r < 0.5:
                new = top.addr - rng.choice((8, 16, 32, 48))
            elif r < 0.9:
                new = top.addr + rng.randint(0, max(top.size, 0) // 8) * 8
            else:
                new = top.addr + top.size + rng.choice((0, 16))
            return StackChange(new - top.addr, new)
        if kind is FunctionCall:
            if len(st.stack) >= c.max_depth:
                return None
            return FunctionCall(top.addr, pick(c.function_pcs), rng.choice((0, 8, 13, 16, 32)),
                                rng.random() < 0.15)
        if len(st.stack) < 2:
            return None
        value = self.heap_next
        self.heap_next += 0x40
        return Return(pick(c.x_regs), value)

    def acceptable(self, st: NaiveState, journal) -> bool:
        limit = self.c.max_fragments
        regs, mem, _, _ = journal
        for name in regs:
            if name != "sp" and count_runs(st.regs[name]) > limit:
                return False
        for w in {b - b % 8 for b in mem}:
            if count_runs(st.word_bits(w)) > limit:
                return False
        return True


def generate(seed: int, length: int, constraints: Optional[GenConstraints] = None,
             annotations: Optional[AnnotationDb] = None) -> GeneratedSequence:
    """A reproducible sequence whose every stored value stays under the fragment cap."""
    c = constraints or GenConstraints()
    gen = _Generator(seed, c)
    st = new_differential_oracle(annotations)
    seq = GeneratedSequence([], [], st)
    counts = {k.__name__: 0 for k in OP_KINDS}
    while len(seq.ops) < length:
        for _ in range(c.attempts):
            op = gen.propose(st)
            if op is None:
                continue
            pc = gen.rng.randint(0x400, 0x800) * 4
            st.checkpoint(op)
            v = st.apply(op, pc)
            journal = st.commit()
            if gen.acceptable(st, journal):
                break
            st._journal = journal
            st.rollback()
        else:
            continue
        if v is not None:
            seq.violations.append((len(seq.ops), v))
        seq.ops.append(op)
        seq.pcs.append(pc)
        counts[type(op).__name__] += 1
    seq.kind_counts = counts
    return seq


def gen_sequence(seed: int, length: int, constraints: Optional[GenConstraints] = None) -> list:
    """``length`` operations paired with their program counters."""
    seq = generate(seed, length, constraints)
    return list(zip(seq.ops, seq.pcs))


def replay(ops_with_pcs, db: Optional[AnnotationDb] = None) -> tuple:
    """Run a sequence on a fresh reference state; returns (state, violations)."""
    st = new_differential_oracle(db)
    violations = []
    for i, (op, pc) in enumerate(ops_with_pcs):
        v = st.apply(op, pc)
        if v is not None:
            violations.append((i, v))
    return st, violations


# ---------------------------------------------------------------------------
# Comparison against the fragment engine
# ---------------------------------------------------------------------------

def compare_states(engine_state, naive: NaiveState, full_bits: bool = True) -> list:
    """Human-readable divergences between an engine state and the reference."""
    out = []
    for name, bits in naive.regs.items():
        m = engine_state.regs[name]
        if bits is _FILL[m.width] and m is _ENGINE_FILL[m.width]:
            continue
        if full_bits:
            if fragment_runs(m) != bits_runs(bits):
                out.append(f"register {name}: engine {m!r} vs oracle runs={count_runs(bits)}")
        elif _reduce_bits_of(m) != bits_reduce(bits):
            out.append(f"register {name}: reduce differs")
    words = naive.words() | set(engine_state.memory)
    for w in words:
        m = engine_state.memory.get(w)
        bits = naive.word_bits(w)
        mine = ((None, 0, 64),) if m is None else fragment_runs(m)
        theirs = bits_runs(bits)
        if full_bits and mine != theirs:
            out.append(f"word {w:#x}: engine {m!r} differs")
        elif _runs_reduce(mine) != _runs_reduce(theirs):
            out.append(f"word {w:#x}: reduce differs")
    if [f.summary() for f in engine_state.stack] != [
            FrameSummary(f.entry_pc, f.addr, f.size, f.name) for f in naive.stack]:
        out.append("shadow stacks differ")
    return out


def _runs_reduce(runs):
    head = runs[0]
    if head[0] is None or head[1] != 0 or head[2] != 64:
        return None
    if len(runs) == 1 or (len(runs) == 2 and runs[1][0] is None):
        return head[0]
    return None


def _reduce_bits_of(m):
    from .metadata import meta_reduce
    return meta_reduce(m)


def differential_check(seed: int, length: int, constraints: Optional[GenConstraints] = None,
                       full_bits: bool = True) -> list:
    """Generate one sequence, replay it on the engine, and list every divergence."""
    c = constraints or GenConstraints()
    seq = generate(seed, length, c)
    eng = new_differential_engine(c.max_fragments)
    found = []
    for i, (op, pc) in enumerate(zip(seq.ops, seq.pcs)):
        v = eng.apply(op, pc)
        if v is not None:
            found.append((i, v))
    problems = []
    if found != seq.violations:
        problems.append(f"seed {seed}: violations differ: engine {found} vs oracle {seq.violations}")
    problems.extend(f"seed {seed}: {p}" for p in compare_states(eng, seq.oracle, full_bits))
    return problems
