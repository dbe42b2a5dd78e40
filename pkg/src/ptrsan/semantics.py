"""AArch64 instruction records to sanitizer operations.

``translate`` looks only at the record (mnemonic, operands, register values
before execution) and two engine queries: whether a register currently holds
a pointer, and which register carries the allocation size for a callee.

32-bit ``w`` registers alias the low half of the matching ``x`` register.
A 32-bit write zero-extends, so results are followed by a truncating
``BitFieldCopy`` that clears bits 32..63.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Protocol, Union

from .metadata import NOTHING, MetaTransform
from .ops import (
    READ, WRITE, Access, BitFieldCopy, Clear, Combine, Copy, CreateGlobalPointer,
    CreateStackPointer, FunctionCall, Return, StackChange,
)

MASK64 = (1 << 64) - 1
PAGE_MASK = ~0xFFF & MASK64


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Reg:
    name: str


@dataclass(frozen=True)
class Imm:
    value: int
    shift: int = 0  # "#imm, lsl #shift"

    @property
    def shifted(self) -> int:
        return self.value << self.shift


@dataclass(frozen=True)
class MemRef:
    base: str
    index: Optional[str] = None
    imm_off: int = 0
    mode: str = "offset"  # "offset", "pre" or "post"
    index_shift: int = 0


@dataclass(frozen=True)
class Label:
    name: str
    addr: Optional[int] = None


@dataclass(frozen=True)
class Shift:
    """Shifted-register modifier, as in ``add x0, x1, x2, lsl #3``."""
    kind: str
    amount: int


@dataclass(frozen=True)
class Cond:
    code: str


Operand = Union[Reg, Imm, MemRef, Label, Shift, Cond]


@dataclass(frozen=True)
class InstructionRecord:
    pc: int
    mnemonic: str
    operands: tuple = ()
    pre_regs: Mapping = field(default_factory=dict)

    def __str__(self):
        return f"{self.pc:#x}: {self.mnemonic} {', '.join(map(format_operand, self.operands))}"


def format_operand(op) -> str:
    if isinstance(op, Reg):
        return op.name
    if isinstance(op, Imm):
        return f"#{op.value:#x}" + (f", lsl #{op.shift}" if op.shift else "")
    if isinstance(op, Label):
        return op.name
    if isinstance(op, Shift):
        return f"{op.kind} #{op.amount}"
    if isinstance(op, Cond):
        return op.code
    inner = op.base
    if op.index is not None:
        inner += f", {op.index}" + (f", lsl #{op.index_shift}" if op.index_shift else "")
    elif op.imm_off and op.mode != "post":
        inner += f", #{op.imm_off}"
    if op.mode == "pre":
        return f"[{inner}]!"
    if op.mode == "post":
        return f"[{inner}], #{op.imm_off}"
    return f"[{inner}]"


class EngineView(Protocol):
    def reg_is_pointer(self, name: str) -> bool: ...

    def reg_is_global_page(self, name: str) -> bool: ...

    def size_arg_register(self, target_pc: int) -> str: ...


class UnknownInstruction(Exception):
    """The mnemonic is outside the mapped set (``excluded`` marks deliberate omissions)."""

    def __init__(self, mnemonic: str, pc: int = 0, excluded: bool = False):
        why = "deliberately unmapped" if excluded else "unknown"
        super().__init__(f"{why} instruction {mnemonic!r} at {pc:#x}")
        self.mnemonic = mnemonic
        self.pc = pc
        self.excluded = excluded


class MalformedInstruction(ValueError):
    pass


class Category(Enum):
    COPY_OR_CLEAR = "copy-or-clear"
    GLOBAL_POINTER = "global-pointer"
    ADD_SUB = "add-sub"
    COMBINE_OR_COPY = "combine-or-copy"
    MULTIPLY_ADD = "multiply-add"
    AND = "and"
    SHIFT = "shift"
    CLEAR = "clear"
    ACCESS = "access"
    CONDITIONAL = "conditional"
    SIGNED_BITFIELD = "signed-bitfield"
    BITFIELD = "bitfield"
    CALL = "call"
    RETURN = "return"
    IGNORED = "ignored"


# ---------------------------------------------------------------------------
# Register helpers
# ---------------------------------------------------------------------------

_REG_RE = re.compile(r"^(x|w|q)(\d+)$")


def canonical(name: str) -> tuple:
    """``(metadata register, width)`` for an architectural register name."""
    n = name.lower()
    if n in ("sp", "wsp"):
        return "sp", 64 if n == "sp" else 32
    if n in ("xzr", "wzr"):
        return "xzr", 64 if n == "xzr" else 32
    m = _REG_RE.match(n)
    if m:
        kind, num = m.group(1), int(m.group(2))
        if kind == "q" and num < 32:
            return f"q{num}", 128
        if num < 31:
            return f"x{num}", 64 if kind == "x" else 32
    raise MalformedInstruction(f"unknown register {name!r}")


def is_register(name: str) -> bool:
    try:
        canonical(name)
    except MalformedInstruction:
        return False
    return True


def reg_value(ins: InstructionRecord, name: str) -> int:
    reg, width = canonical(name)
    if reg == "xzr":
        return 0
    v = ins.pre_regs.get(reg, 0)
    return v & ((1 << width) - 1)


def operand_value(ins: InstructionRecord, op, shift: Optional[Shift] = None) -> int:
    if isinstance(op, Imm):
        return op.shifted
    if isinstance(op, Reg):
        v = reg_value(ins, op.name)
        if shift is not None:
            v = apply_shift(v, shift.kind, shift.amount, canonical(op.name)[1])
        return v
    if isinstance(op, Label):
        if op.addr is None:
            raise MalformedInstruction(f"unresolved label {op.name!r}")
        return op.addr
    raise MalformedInstruction(f"operand {op!r} has no value")


def apply_shift(v: int, kind: str, n: int, width: int) -> int:
    mask = (1 << width) - 1
    v &= mask
    if kind == "lsl":
        return (v << n) & mask
    if kind == "lsr":
        return v >> n
    if kind == "asr":
        if v >> (width - 1):
            v -= 1 << width
        return (v >> n) & mask
    if kind == "ror":
        n %= width
        return ((v >> n) | (v << (width - n))) & mask
    raise MalformedInstruction(f"unknown shift {kind!r}")


_CONDITIONS = {
    "eq": lambda n, z, c, v: z,
    "ne": lambda n, z, c, v: not z,
    "cs": lambda n, z, c, v: c,
    "hs": lambda n, z, c, v: c,
    "cc": lambda n, z, c, v: not c,
    "lo": lambda n, z, c, v: not c,
    "mi": lambda n, z, c, v: n,
    "pl": lambda n, z, c, v: not n,
    "vs": lambda n, z, c, v: v,
    "vc": lambda n, z, c, v: not v,
    "hi": lambda n, z, c, v: c and not z,
    "ls": lambda n, z, c, v: not c or z,
    "ge": lambda n, z, c, v: n == v,
    "lt": lambda n, z, c, v: n != v,
    "gt": lambda n, z, c, v: not z and n == v,
    "le": lambda n, z, c, v: z or n != v,
    "al": lambda n, z, c, v: True,
    "nv": lambda n, z, c, v: True,
}

CONDITION_CODES = frozenset(_CONDITIONS)


def condition_holds(code: str, nzcv: int) -> bool:
    """Evaluate a condition code against flags packed as N<<3 | Z<<2 | C<<1 | V."""
    try:
        fn = _CONDITIONS[code.lower()]
    except KeyError:
        raise MalformedInstruction(f"unknown condition {code!r}") from None
    return bool(fn(bool(nzcv & 8), bool(nzcv & 4), bool(nzcv & 2), bool(nzcv & 1)))


# ---------------------------------------------------------------------------
# Operand shape checks
# ---------------------------------------------------------------------------

def _expect(ins, *kinds):
    ops = ins.operands
    if len(ops) != len(kinds):
        raise MalformedInstruction(f"{ins.mnemonic} takes {len(kinds)} operands, got {len(ops)}")
    for i, (op, kind) in enumerate(zip(ops, kinds)):
        if not isinstance(op, kind):
            raise MalformedInstruction(f"{ins.mnemonic}: operand {i + 1} has the wrong form")
    return ops


def _split_shift(ins, fixed: int):
    """Operands with an optional trailing shifted-register modifier."""
    ops = ins.operands
    if len(ops) == fixed + 1 and isinstance(ops[-1], Shift):
        return ops[:-1], ops[-1]
    if len(ops) != fixed:
        raise MalformedInstruction(f"{ins.mnemonic} takes {fixed} operands, got {len(ops)}")
    return ops, None


def _dst(op) -> tuple:
    if not isinstance(op, Reg):
        raise MalformedInstruction("destination must be a register")
    return canonical(op.name)


def _src(op) -> tuple:
    if not isinstance(op, Reg):
        raise MalformedInstruction("expected a register operand")
    return canonical(op.name)


def _narrow(dst: str, width: int) -> list:
    if width == 32 and dst not in ("xzr", "sp"):
        return [BitFieldCopy(dst, dst, 0, 32, 0, True)]
    return []


def _sp_change(ins, new: int) -> StackChange:
    old = reg_value(ins, "sp")
    return StackChange(new - old, new)


def _sign(v: int, width: int = 64) -> int:
    return v - (1 << width) if v >> (width - 1) else v


# ---------------------------------------------------------------------------
# Category handlers
# ---------------------------------------------------------------------------

def _mov(ins, view):
    d, s = _expect(ins, Reg, (Reg, Imm))
    dst, dw = _dst(d)
    if dst == "sp":
        return [_sp_change(ins, operand_value(ins, s))]
    if isinstance(s, Imm):
        return [Clear(dst)]
    src, _ = _src(s)
    if src == "sp":
        # "mov xD, sp" is "add xD, sp, #0"
        return [CreateStackPointer(ins.pc, 0, reg_value(ins, "sp"), dst)]
    return [Copy(src, dst)] + _narrow(dst, dw)


def _unary_copy(ins, view):
    # mvn/negs/ngs/ngcs take "dst, src{, shift}"; cinv/cneg/cinc take "dst, src, cond"
    ops = ins.operands
    if len(ops) == 3 and isinstance(ops[2], Cond):
        ops = ops[:2]
    elif len(ops) == 3 and isinstance(ops[2], Shift):
        ops = ops[:2]
    if len(ops) != 2:
        raise MalformedInstruction(f"{ins.mnemonic} takes 2 operands")
    dst, dw = _dst(ops[0])
    if isinstance(ops[1], Imm):
        return [Clear(dst)]
    src, _ = _src(ops[1])
    return [Copy(src, dst)] + _narrow(dst, dw)


def _mov_wide(ins, view):
    ops = ins.operands
    if len(ops) not in (2, 3) or not isinstance(ops[1], Imm):
        raise MalformedInstruction(f"{ins.mnemonic} takes a register and an immediate")
    dst, _ = _dst(ops[0])
    return [Clear(dst)]


def _movk(ins, view):
    ops = ins.operands
    if len(ops) == 3 and isinstance(ops[2], Shift):
        shift = ops[2].amount
    elif len(ops) == 2:
        shift = ops[1].shift if isinstance(ops[1], Imm) else 0
    else:
        raise MalformedInstruction("movk takes a register, an immediate and an optional shift")
    if not isinstance(ops[1], Imm):
        raise MalformedInstruction("movk source must be an immediate")
    dst, dw = _dst(ops[0])
    if shift % 16 or shift + 16 > dw:
        raise MalformedInstruction(f"movk shift {shift} invalid for a {dw}-bit register")
    return [BitFieldCopy(dst, "xzr", 0, 16, shift, False)] + _narrow(dst, dw)


def _adrp(ins, view):
    d, target = _expect(ins, Reg, (Label, Imm))
    dst, _ = _dst(d)
    page = operand_value(ins, target) & PAGE_MASK
    return [CreateGlobalPointer(ins.pc, page, dst)]


def _shifted_combine(a: str, b: str, dst: str, shift: Optional[Shift]) -> list:
    if shift is None or shift.amount == 0:
        return [Combine(a, b, dst)]
    t = _transform_for(shift.kind, shift.amount)
    if dst != a:
        # dst is free to hold the shifted operand
        return [Copy(b, dst, t), Combine(a, dst, dst)]
    # no scratch register: combine with the unshifted operand
    return [Combine(a, b, dst)]


def _add_sub(ins, view):
    (d, a, b), shift = _split_shift(ins, 3)
    dst, dw = _dst(d)
    src, _ = _src(a)
    is_add = ins.mnemonic.startswith("add")
    if isinstance(b, Imm):
        amount = b.shifted
    elif isinstance(b, Reg):
        amount = operand_value(ins, b, shift)
    else:
        raise MalformedInstruction(f"{ins.mnemonic}: bad second operand")
    if dst == "sp":
        base = reg_value(ins, a.name)
        new = (base + amount if is_add else base - amount) & MASK64
        return [_sp_change(ins, new)]
    if src == "sp" and is_add:
        return [CreateStackPointer(ins.pc, amount, reg_value(ins, "sp"), dst)] + _narrow(dst, dw)
    if isinstance(b, Reg):
        other, _ = _src(b)
        return _shifted_combine(src, other, dst, shift) + _narrow(dst, dw)
    if is_add and dw == 64 and view.reg_is_global_page(src):
        # the ADRP page plus its low 12 bits names the actual global
        target = (reg_value(ins, src) + amount) & MASK64
        return [CreateGlobalPointer(ins.pc, target, dst)]
    return [Copy(src, dst)] + _narrow(dst, dw)


def _combine_or_copy(ins, view):
    (d, a, b), shift = _split_shift(ins, 3)
    dst, dw = _dst(d)
    src, _ = _src(a)
    if isinstance(b, Reg):
        return _shifted_combine(src, _src(b)[0], dst, shift) + _narrow(dst, dw)
    if not isinstance(b, Imm):
        raise MalformedInstruction(f"{ins.mnemonic}: bad second operand")
    return [Copy(src, dst)] + _narrow(dst, dw)


def _multiply_add(ins, view):
    d, _, _, acc = _expect(ins, Reg, Reg, Reg, Reg)
    dst, dw = _dst(d)
    return [Copy(_src(acc)[0], dst)] + _narrow(dst, dw)


def _and(ins, view):
    (d, a, b), _ = _split_shift(ins, 3)
    dst, dw = _dst(d)
    if isinstance(b, Reg):
        return [Clear(dst)]
    return [Copy(_src(a)[0], dst)] + _narrow(dst, dw)


def _transform_for(kind: str, n: int) -> MetaTransform:
    if kind in ("lsl", "shl"):
        return MetaTransform.shift_left(n)
    if kind in ("lsr", "asr"):
        return MetaTransform.shift_right(n)
    if kind == "ror":
        return MetaTransform.rotate_right(n)
    raise MalformedInstruction(f"unknown shift {kind!r}")


def _shift(ins, view):
    d, s, amt = _expect(ins, Reg, Reg, (Imm, Reg))
    dst, dw = _dst(d)
    src, _ = _src(s)
    kind = ins.mnemonic.rstrip("v")
    n = operand_value(ins, amt)
    n = n % dw if isinstance(amt, Reg) else n
    if n >= dw:
        raise MalformedInstruction(f"shift amount {n} out of range")
    if dw == 64 or dw == 128:
        return [Copy(src, dst, _transform_for(kind, n) if n else NOTHING)]
    if kind in ("lsl", "shl"):
        return [BitFieldCopy(dst, src, 0, 32 - n, n, True)]
    if kind in ("lsr", "asr"):
        return [BitFieldCopy(dst, src, n, 32 - n, 0, True)]
    if n == 0:
        return [BitFieldCopy(dst, src, 0, 32, 0, True)]
    if dst == src:
        return [Clear(dst)]
    return [BitFieldCopy(dst, src, n, 32 - n, 0, True), BitFieldCopy(dst, src, 0, n, 32 - n, False)]


def _clear(ins, view):
    ops = ins.operands
    if not ops:
        raise MalformedInstruction(f"{ins.mnemonic} needs operands")
    if ins.mnemonic == "ccmn":
        return []  # writes only the flags
    dst, _ = _dst(ops[0])
    return [Clear(dst)]


def _conditional(ins, view):
    d, a, b, c = _expect(ins, Reg, Reg, Reg, Cond)
    dst, dw = _dst(d)
    taken = condition_holds(c.code, ins.pre_regs.get("nzcv", 0))
    src, _ = _src(a if taken else b)
    return [Copy(src, dst)] + _narrow(dst, dw)


def _signed_bitfield(ins, view):
    if not ins.operands:
        raise MalformedInstruction(f"{ins.mnemonic} needs operands")
    dst, _ = _dst(ins.operands[0])
    return [Clear(dst)]


def _bitfield(ins, view):
    m = ins.mnemonic
    if m in ("uxtb", "uxth", "uxtw"):
        d, s = _expect(ins, Reg, Reg)
        dst, dw = _dst(d)
        size = {"uxtb": 8, "uxth": 16, "uxtw": 32}[m]
        return [BitFieldCopy(dst, _src(s)[0], 0, size, 0, True)]
    d, s, x, y = _expect(ins, Reg, Reg, Imm, Imm)
    dst, dw = _dst(d)
    src, _ = _src(s)
    a, b = x.value, y.value
    clear = m.startswith("u")
    if m in ("bfm", "ubfm"):
        immr, imms = a, b
        if imms >= immr:
            src_off, size, dst_off = immr, imms - immr + 1, 0
        else:
            src_off, size, dst_off = 0, imms + 1, dw - immr
    elif m in ("bfi", "ubfiz"):
        src_off, size, dst_off = 0, b, a
    else:  # bfxil, ubfx
        src_off, size, dst_off = a, b, 0
    if size < 1 or src_off + size > dw or dst_off + size > dw:
        raise MalformedInstruction(f"{m}: bit-field out of range")
    return [BitFieldCopy(dst, src, src_off, size, dst_off, clear)] + (
        [] if clear else _narrow(dst, dw))


def _call(ins, view):
    (target,) = _expect(ins, (Label, Reg, Imm))
    if isinstance(target, Reg):
        pc = reg_value(ins, target.name)
    else:
        pc = operand_value(ins, target)
    size_reg = view.size_arg_register(pc)
    call = FunctionCall(reg_value(ins, "sp"), pc, reg_value(ins, size_reg), ins.mnemonic == "br")
    if ins.mnemonic == "br":
        return [call]
    return [Clear("x30"), call]


def _return(ins, view):
    if len(ins.operands) > 1:
        raise MalformedInstruction("ret takes at most one register")
    return [Return("x0", reg_value(ins, "x0"))]


def _ignored(ins, view):
    return []


# loads and stores: mnemonic -> access size in bytes (None = register width)
_LOADS = {
    "ldr": None, "ldrb": 1, "ldrh": 2, "ldrsb": 1, "ldrsh": 2, "ldrsw": 4,
    "ldtr": None, "ldtrb": 1, "ldtrh": 2, "ldtrsb": 1, "ldtrsh": 2, "ldtrsw": 4,
    "ldur": None, "ldurb": 1, "ldurh": 2, "ldursb": 1, "ldursh": 2, "ldursw": 4,
    "ldxr": None, "ldxrb": 1, "ldxrh": 2,
    "ldaxr": None, "ldaxrb": 1, "ldaxrh": 2,
}
_STORES = {
    "str": None, "strb": 1, "strh": 2,
    "sttr": None, "sttrb": 1, "sttrh": 2,
    "stlr": None, "stlrb": 1, "stlrh": 2,
    "stur": None, "sturb": 1, "sturh": 2,
}
_EXCLUSIVE_STORES = {
    "stxr": None, "stxrb": 1, "stxrh": 2,
    "stlxr": None, "stlxrb": 1, "stlxrh": 2,
}
_PAIRS = {
    "ldp": (READ, None), "ldpsw": (READ, 4), "ldnp": (READ, None), "ldxp": (READ, None),
    "ldaxp": (READ, None), "stp": (WRITE, None), "stnp": (WRITE, None),
    "stxp": (WRITE, None), "stlxp": (WRITE, None),
}


def _address(ins, mem: MemRef, view) -> tuple:
    """(access address, via register, writeback target or None)."""
    base, _ = canonical(mem.base)
    bval = reg_value(ins, mem.base)
    via = base
    if mem.index is not None:
        if mem.mode != "offset":
            raise MalformedInstruction("register offsets cannot write back")
        index, _ = canonical(mem.index)
        addr = (bval + (reg_value(ins, mem.index) << mem.index_shift)) & MASK64
        if not view.reg_is_pointer(base) and view.reg_is_pointer(index):
            via = index
        return addr, via, None
    if mem.mode == "offset":
        return (bval + mem.imm_off) & MASK64, via, None
    new = (bval + mem.imm_off) & MASK64
    addr = new if mem.mode == "pre" else bval
    return addr, via, new


def _writeback(ins, mem: MemRef, new, before: bool) -> list:
    if new is None or (mem.mode == "pre") != before:
        return []
    base, _ = canonical(mem.base)
    if base == "sp":
        return [_sp_change(ins, new)]
    return [Copy(base, base)]


def _data_reg(op, size):
    reg, width = _src(op)
    if reg == "sp":
        raise MalformedInstruction("sp cannot be a transfer register")
    if size is None:
        size = width // 8
    return reg, size


def _access(ins, view):
    m = ins.mnemonic
    ops = ins.operands
    status = None
    if m in _PAIRS:
        kind, fixed = _PAIRS[m]
        if m in ("stxp", "stlxp"):
            status, ops = ops[0], ops[1:]
        if len(ops) != 3 or not isinstance(ops[2], MemRef):
            raise MalformedInstruction(f"{m} takes two registers and a memory operand")
        regs = [_data_reg(ops[0], fixed), _data_reg(ops[1], fixed)]
        mem = ops[2]
    else:
        if m in _LOADS:
            kind, fixed = READ, _LOADS[m]
        elif m in _STORES:
            kind, fixed = WRITE, _STORES[m]
        else:
            kind, fixed = WRITE, _EXCLUSIVE_STORES[m]
            if not ops:
                raise MalformedInstruction(f"{m} needs a status register")
            status, ops = ops[0], ops[1:]
        if len(ops) != 2 or not isinstance(ops[1], MemRef):
            raise MalformedInstruction(f"{m} takes a register and a memory operand")
        regs = [_data_reg(ops[0], fixed)]
        mem = ops[1]
    if regs[0][1] not in (1, 2, 4, 8, 16):
        raise MalformedInstruction(f"{m}: unsupported transfer size")
    addr, via, new = _address(ins, mem, view)
    out = _writeback(ins, mem, new, before=True)
    off = 0
    for reg, size in regs:
        out.append(Access(kind, (addr + off) & MASK64, via, reg, size))
        off += size
    out.extend(_writeback(ins, mem, new, before=False))
    if status is not None:
        out.append(Clear(_dst(status)[0]))
    return out


# ---------------------------------------------------------------------------
# The table
# ---------------------------------------------------------------------------

def _table() -> dict:
    t = {}

    def put(cat, handler, names):
        for n in names.split():
            t[n] = (cat, handler)

    put(Category.COPY_OR_CLEAR, _mov, "mov")
    put(Category.COPY_OR_CLEAR, _unary_copy, "mvn negs ngs ngcs cinv cneg cinc")
    put(Category.COPY_OR_CLEAR, _mov_wide, "movz movn")
    put(Category.COPY_OR_CLEAR, _movk, "movk")
    put(Category.GLOBAL_POINTER, _adrp, "adrp")
    put(Category.ADD_SUB, _add_sub, "add adds sub subs")
    put(Category.COMBINE_OR_COPY, _combine_or_copy,
        "adc adcs sbc sbcs bic bics orr orn eor eon")
    put(Category.MULTIPLY_ADD, _multiply_add, "madd smaddl")
    put(Category.AND, _and, "and ands")
    put(Category.SHIFT, _shift, "lsl lsr asr ror shl lslv lsrv asrv rorv")
    put(Category.CLEAR, _clear, "neg not mrs cset csetm ccmn mul mneg msub smull umull smulh "
                                "umulh umaddl umsubl smsubl sdiv udiv")
    put(Category.ACCESS, _access, " ".join([*_LOADS, *_STORES, *_EXCLUSIVE_STORES, *_PAIRS]))
    put(Category.CONDITIONAL, _conditional, "csel csinc csinv csneg")
    put(Category.SIGNED_BITFIELD, _signed_bitfield, "sbfiz sbfm sbfx sxtb sxth sxtw")
    put(Category.BITFIELD, _bitfield, "bfm bfi bfxil uxtb uxth uxtw ubfm ubfiz ubfx")
    put(Category.CALL, _call, "bl blr br")
    put(Category.RETURN, _return, "ret")
    put(Category.IGNORED, _ignored,
        # branches and compares
        "b cbz cbnz tbz tbnz cmp cmn tst ccmp "
        # floating point
        "fmov fadd fsub fmul fdiv fmadd fmsub fnmul fabs fneg fsqrt fcmp fcmpe fccmp fcsel "
        "fcvt fcvtzs fcvtzu fcvtas fcvtau fcvtms fcvtmu fcvtns fcvtnu scvtf ucvtf fmax fmin "
        "frintz frinta frintm frintn frintp "
        # crypto / checksums
        "aese aesd aesmc aesimc sha1c sha1h sha1m sha1p sha1su0 sha1su1 sha256h sha256h2 "
        "sha256su0 sha256su1 crc32b crc32h crc32w crc32x crc32cb crc32ch crc32cw crc32cx "
        # system
        "svc hvc smc wfi wfe sev sevl yield nop hint msr dmb dsb isb clrex brk hlt prfm")
    return t


TABLE = _table()

# considered and left out on purpose: not used when copying pointers around
EXCLUDED = frozenset(
    "ld1 ld2 ld3 ld4 st1 st2 st3 st4 ld1r ld2r ld3r ld4r dup smov extr sri rev rev16 rev32 adr"
    .split())

SUPPORTED_MNEMONICS = frozenset(TABLE)


def classify(mnemonic: str) -> Category:
    m = mnemonic.lower()
    if m.startswith("b.") and m[2:] in CONDITION_CODES:
        return Category.IGNORED
    try:
        return TABLE[m][0]
    except KeyError:
        raise UnknownInstruction(mnemonic, excluded=m in EXCLUDED) from None


def translate(ins: InstructionRecord, view: EngineView) -> list:
    """Sanitizer operations for one instruction, in execution order."""
    m = ins.mnemonic.lower()
    if m.startswith("b.") and m[2:] in CONDITION_CODES:
        return []
    entry = TABLE.get(m)
    if entry is None:
        raise UnknownInstruction(ins.mnemonic, ins.pc, m in EXCLUDED)
    if m != ins.mnemonic:
        ins = InstructionRecord(ins.pc, m, ins.operands, ins.pre_regs)
    return entry[1](ins, view)
