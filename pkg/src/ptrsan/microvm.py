"""A small AArch64-subset interpreter that drives the sanitizer.

Programs are line-based micro-assembly::

    .entry entry_point
    .global target_buffer, 0x2000, 10
    entry_point:
        adrp x2, target_buffer      ; comments run to end of line
        ...

Every executed instruction is turned into an :class:`InstructionRecord`,
translated into sanitizer operations, applied to the engine, and only then
executed concretely.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

from .annotations import AnnotationDb, FunctionInfo, MallocLike
from .engine import SanitizerState, engine_init
from .metadata import AnnotatedOrigin, Identity, meta_pointer
from .ops import Clear, Return, SanitizerError, Violation
from .semantics import (
    CONDITION_CODES, EXCLUDED, MASK64, SUPPORTED_MNEMONICS, Cond, Imm, InstructionRecord, Label,
    MalformedInstruction, MemRef, Reg, Shift, UnknownInstruction, apply_shift, canonical,
    condition_holds, is_register, translate,
)

CODE_BASE = 0x10000
INPUT_BASE = 0x400000
HEAP_BASE = 0x800000
STACK_TOP = 0x1000000
MALLOC_PC = 0xF000
FREE_PC = 0xF008
HALT = 0xDEAD0000
DEFAULT_MAX_STEPS = 1_000_000

BUILTINS = {"malloc": MALLOC_PC, "free": FREE_PC}
BUILTIN_ANNOTATIONS = (
    FunctionInfo("malloc", "malloc", malloc_like=MallocLike("x0"), suppress=True),
    FunctionInfo("free", "free", suppress=True),
)

# executed concretely but never mapped to sanitizer operations
UNMAPPED_EXECUTABLE = frozenset({"rev", "rev16", "rev32", "adr"})
PSEUDO = frozenset({"sys_fail", "malloc", "free"})
_NOOPS = frozenset({"nop", "hint", "dmb", "dsb", "isb", "yield", "clrex", "prfm"})
_NOT_EMULATED = frozenset(m for m in SUPPORTED_MNEMONICS if m[0] == "f" and m != "free") | {
    "scvtf", "ucvtf", "svc", "hvc", "smc", "wfi", "wfe", "sev", "sevl", "msr", "brk", "hlt",
    "aese", "aesd", "aesmc", "aesimc", "sha1c", "sha1h", "sha1m", "sha1p", "sha1su0", "sha1su1",
    "sha256h", "sha256h2", "sha256su0", "sha256su1", "crc32b", "crc32h", "crc32w", "crc32x",
    "crc32cb", "crc32ch", "crc32cw", "crc32cx", "shl", "not"}
_COND_MNEMONICS = frozenset({"csel", "csinc", "csinv", "csneg", "cset", "csetm", "cinv", "cneg",
                             "cinc", "ccmp", "ccmn"})


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


class VmError(RuntimeError):
    """The program did something the interpreter cannot model."""


class StepLimitExceeded(VmError):
    pass


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Statement:
    mnemonic: str
    operands: tuple
    line: int
    text: str


@dataclass
class Program:
    statements: list
    labels: dict
    entry: Optional[str]
    globals: list = field(default_factory=list)  # (name, addr, size)
    data: list = field(default_factory=list)  # (addr, bytes)

    def pc_of(self, index: int) -> int:
        return CODE_BASE + 4 * index

    @property
    def entry_pc(self) -> int:
        # without an .entry directive execution starts at the first instruction
        return self.pc_of(0) if self.entry is None else self.symbols[self.entry]

    @property
    def symbols(self) -> dict:
        syms = dict(BUILTINS)
        syms.update((n, self.pc_of(i)) for n, i in self.labels.items())
        syms.update((n, a) for n, a, _ in self.globals)
        return syms


_LABEL_RE = re.compile(r"^([A-Za-z_.$][\w.$]*):")
_IDENT_RE = re.compile(r"^[A-Za-z_.$][\w.$]*$")
_SHIFT_RE = re.compile(r"^(lsl|lsr|asr|ror)\s+#?(\S+)$", re.I)


def _int(text: str, line: int) -> int:
    t = text.strip().lower()
    neg = t.startswith("-")
    if neg:
        t = t[1:]
    try:
        v = int(t, 16) if t.startswith("0x") else int(t, 10)
    except ValueError:
        raise ParseError(f"bad number {text!r}", line) from None
    return -v if neg else v


def _split_commas(text: str, line: int) -> list:
    parts, depth, cur = [], 0, []
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth < 0:
                raise ParseError("unbalanced ']'", line)
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if depth:
        raise ParseError("unbalanced '['", line)
    parts.append("".join(cur).strip())
    if any(not p for p in parts):
        raise ParseError("empty operand", line)
    return parts


def _reg_token(tok: str, line: int) -> str:
    if not is_register(tok):
        raise ParseError(f"expected a register, got {tok!r}", line)
    return tok.lower()


def _imm(tok: str, line: int, symbols_needed: set):
    body = tok[1:].strip()
    if body.lower().startswith(":lo12:"):
        name = body[6:].strip()
        symbols_needed.add(name)
        return ("lo12", name)
    return Imm(_int(body, line))


def _memref(tok: str, post: Optional[str], line: int) -> MemRef:
    pre = tok.endswith("!")
    inner = tok[:-1] if pre else tok
    if not (inner.startswith("[") and inner.endswith("]")):
        raise ParseError(f"malformed memory operand {tok!r}", line)
    parts = [p.strip() for p in inner[1:-1].split(",")]
    if not parts[0]:
        raise ParseError("memory operand needs a base register", line)
    base = _reg_token(parts[0], line)
    if canonical(base)[1] != 64:
        raise ParseError("memory base must be a 64-bit register", line)
    index, off, shift = None, 0, 0
    for p in parts[1:]:
        if p.startswith("#"):
            off = _int(p[1:], line)
        elif _SHIFT_RE.match(p):
            m = _SHIFT_RE.match(p)
            if m.group(1).lower() != "lsl":
                raise ParseError("only lsl is supported for index registers", line)
            shift = _int(m.group(2), line)
        elif is_register(p):
            index = p.lower()
        else:
            raise ParseError(f"malformed memory operand {tok!r}", line)
    if index is not None and (pre or post is not None):
        raise ParseError("register offsets cannot write back", line)
    if post is not None:
        if off or pre:
            raise ParseError("post-index takes a bare base register", line)
        return MemRef(base, None, _int(post[1:], line), "post")
    return MemRef(base, index, off, "pre" if pre else "offset", shift)


def _operands(mnemonic: str, text: str, line: int, symbols_needed: set) -> tuple:
    if not text.strip():
        return ()
    toks = _split_commas(text, line)
    out = []
    i = 0
    while i < len(toks):
        tok = toks[i]
        low = tok.lower()
        if tok.startswith("["):
            post = None
            if tok.endswith("]") and i + 1 < len(toks) and toks[i + 1].startswith("#"):
                post = toks[i + 1]
                i += 1
            out.append(_memref(tok, post, line))
        elif tok.startswith("#"):
            out.append(_imm(tok, line, symbols_needed))
        elif _SHIFT_RE.match(tok):
            m = _SHIFT_RE.match(tok)
            kind, amount = m.group(1).lower(), _int(m.group(2), line)
            if out and isinstance(out[-1], Imm) and kind == "lsl":
                out[-1] = Imm(out[-1].value, amount)
            else:
                out.append(Shift(kind, amount))
        elif is_register(tok):
            out.append(Reg(low))
        elif mnemonic in _COND_MNEMONICS and low in CONDITION_CODES:
            out.append(Cond(low))
        elif _IDENT_RE.match(tok):
            symbols_needed.add(tok)
            out.append(Label(tok))
        else:
            raise ParseError(f"malformed operand {tok!r}", line)
        i += 1
    return tuple(out)


def parse_program(text: str) -> Program:
    """Parse micro-assembly; errors carry 1-based line numbers."""
    statements: list = []
    labels: dict = {}
    entry = None
    globals_: list = []
    data: list = []
    label_lines: dict = {}
    needed: list = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        while True:
            m = _LABEL_RE.match(line)
            if not m:
                break
            name = m.group(1)
            if name in labels or name in BUILTINS:
                raise ParseError(f"duplicate label {name!r}", lineno)
            labels[name] = len(statements)
            label_lines[name] = lineno
            line = line[m.end():].strip()
        if not line:
            continue
        if line.startswith("."):
            head, _, rest = line.partition(" ")
            head = head.lower()
            args = [a.strip() for a in rest.split(",")] if rest.strip() else []
            if head == ".entry":
                if len(args) != 1 or not _IDENT_RE.match(args[0]):
                    raise ParseError(".entry takes one label", lineno)
                entry = args[0]
            elif head == ".global":
                if len(args) != 3 or not _IDENT_RE.match(args[0]):
                    raise ParseError(".global takes a name, an address and a size", lineno)
                size = _int(args[2], lineno)
                if size < 1:
                    raise ParseError("global size must be positive", lineno)
                globals_.append((args[0], _int(args[1], lineno), size))
            elif head == ".bytes":
                if not args:
                    raise ParseError(".bytes takes an address and hex data", lineno)
                addr = _int(args[0], lineno)
                hexdata = "".join(a.replace(" ", "").removeprefix("0x") for a in args[1:])
                try:
                    data.append((addr, bytes.fromhex(hexdata)))
                except ValueError:
                    raise ParseError("malformed hex data", lineno) from None
            else:
                raise ParseError(f"unknown directive {head!r}", lineno)
            continue
        mnemonic, _, rest = line.partition(" ")
        mnemonic = mnemonic.lower()
        known = (mnemonic in SUPPORTED_MNEMONICS or mnemonic in UNMAPPED_EXECUTABLE
                 or mnemonic in PSEUDO
                 or (mnemonic.startswith("b.") and mnemonic[2:] in CONDITION_CODES))
        if not known or mnemonic in _NOT_EMULATED:
            raise ParseError(f"unknown mnemonic {mnemonic!r}", lineno)
        syms: set = set()
        ops = _operands(mnemonic, rest, lineno, syms)
        if mnemonic in ("malloc", "free"):
            if ops:
                raise ParseError(f"{mnemonic} takes no operands", lineno)
            mnemonic, ops = "bl", (Label(mnemonic),)
            syms.add(ops[0].name)
        elif mnemonic == "sys_fail" and ops:
            raise ParseError("sys_fail takes no operands", lineno)
        needed.append((len(statements), syms))
        statements.append(Statement(mnemonic, ops, lineno, raw.strip()))
    prog = Program(statements, labels, entry, globals_, data)
    if not statements:
        raise ParseError("program has no instructions")
    if entry is not None and entry not in labels:
        raise ParseError(f"entry label {entry!r} is not defined")
    names = [n for n, _, _ in globals_]
    if len(set(names)) != len(names) or set(names) & set(labels):
        raise ParseError("global names must be unique and distinct from labels")
    symbols = prog.symbols
    for idx, syms in needed:
        missing = [s for s in syms if s not in symbols]
        st = statements[idx]
        if missing:
            raise ParseError(f"undefined symbol {missing[0]!r}", st.line)
        statements[idx] = Statement(st.mnemonic, _resolve(st.operands, symbols), st.line, st.text)
    for st in statements:
        _check_shape(st)
    return prog


def _resolve(ops: tuple, symbols: dict) -> tuple:
    out = []
    for op in ops:
        if isinstance(op, Label):
            op = Label(op.name, symbols[op.name])
        elif isinstance(op, tuple) and op[0] == "lo12":
            op = Imm(symbols[op[1]] & 0xFFF)
        out.append(op)
    return tuple(out)


class _ShapeView:
    def reg_is_pointer(self, name):
        return False

    def reg_is_global_page(self, name):
        return False

    def size_arg_register(self, target_pc):
        return "x0"


_SHAPES = {
    "cbz": (Reg, Label), "cbnz": (Reg, Label), "tbz": (Reg, Imm, Label), "tbnz": (Reg, Imm, Label),
    "b": (Label,), "rev": (Reg, Reg), "rev16": (Reg, Reg), "rev32": (Reg, Reg),
    "adr": (Reg, Label), "cmp": (Reg, (Reg, Imm)), "cmn": (Reg, (Reg, Imm)), "tst": (Reg, (Reg, Imm)),
    "ccmp": (Reg, (Reg, Imm), Imm, Cond), "ccmn": (Reg, (Reg, Imm), Imm, Cond),
    "sys_fail": (), "cset": (Reg, Cond), "csetm": (Reg, Cond), "neg": (Reg, Reg),
    "mrs": (Reg, Label),
}


def _check_shape(st: Statement):
    m = st.mnemonic
    ops = st.operands
    shape = _SHAPES.get(m)
    if m.startswith("b."):
        shape = (Label,)
    if m in ("cmp", "cmn", "tst") and len(ops) == 3 and isinstance(ops[2], Shift):
        ops = ops[:2]
    if shape is not None:
        if len(ops) != len(shape) or not all(isinstance(o, k) for o, k in zip(ops, shape)):
            raise ParseError(f"malformed operands for {m}", st.line)
        return
    if m in _NOOPS or m == "ret" and not ops:
        return
    # everything else is validated by its sanitizer mapping
    regs = {f"x{i}": 0 for i in range(31)}
    regs["sp"] = STACK_TOP
    try:
        translate(InstructionRecord(0, m, ops, regs), _ShapeView())
    except MalformedInstruction as e:
        raise ParseError(str(e), st.line) from None
    except (KeyError, IndexError, TypeError, ValueError) as e:
        raise ParseError(f"malformed operands for {m}: {e}", st.line) from None


# ---------------------------------------------------------------------------
# Concrete machine
# ---------------------------------------------------------------------------

class Machine:
    """Register file, flags and a sparse byte-addressed memory."""

    def __init__(self):
        self.regs: dict = {f"x{i}": 0 for i in range(31)}
        self.regs.update((f"q{i}", 0) for i in range(32))
        self.regs["sp"] = STACK_TOP
        self.regs["nzcv"] = 0
        self.pc = 0
        self.mem: dict = {}
        self.halted = False

    def get(self, name: str) -> int:
        reg, width = canonical(name)
        if reg == "xzr":
            return 0
        v = self.regs[reg]
        return v & 0xFFFFFFFF if width == 32 else v

    def set(self, name: str, value: int):
        reg, width = canonical(name)
        if reg == "xzr":
            return
        self.regs[reg] = value & ((1 << width) - 1)

    def load(self, addr: int, size: int) -> int:
        mem = self.mem
        v = 0
        for i in range(size):
            v |= mem.get((addr + i) & MASK64, 0) << (8 * i)
        return v

    def store(self, addr: int, size: int, value: int):
        mem = self.mem
        for i in range(size):
            mem[(addr + i) & MASK64] = (value >> (8 * i)) & 0xFF

    def write_bytes(self, addr: int, data: bytes):
        for i, b in enumerate(data):
            self.mem[addr + i] = b

    def summary(self) -> dict:
        nonzero = {k: f"{v:#x}" for k, v in self.regs.items() if v and k != "nzcv"}
        return {"pc": f"{self.pc:#x}", "nzcv": self.regs["nzcv"], "registers": nonzero}


def _flags_add(a: int, b: int, carry: int, width: int) -> tuple:
    mask = (1 << width) - 1
    total = a + b + carry
    res = total & mask
    n = res >> (width - 1)
    z = res == 0
    c = total > mask
    sa, sb, sr = a >> (width - 1), b >> (width - 1), n
    v = sa == sb and sr != sa
    return res, (n << 3) | (int(z) << 2) | (int(c) << 1) | int(v)


def _sext(v: int, bits: int) -> int:
    return v - (1 << bits) if v >> (bits - 1) & 1 else v


def _bitfield_concrete(m: str, dst_old: int, src: int, a: int, b: int, width: int) -> int:
    mask = (1 << width) - 1
    if m in ("bfm", "ubfm", "sbfm"):
        immr, imms = a, b
        if imms >= immr:
            src_off, size, dst_off = immr, imms - immr + 1, 0
        else:
            src_off, size, dst_off = 0, imms + 1, width - immr
    elif m in ("bfi", "ubfiz", "sbfiz"):
        src_off, size, dst_off = 0, b, a
    else:
        src_off, size, dst_off = a, b, 0
    field_ = (src >> src_off) & ((1 << size) - 1)
    if m.startswith("b"):
        keep = dst_old & ~(((1 << size) - 1) << dst_off) & mask
        return keep | (field_ << dst_off)
    if m.startswith("s"):
        return (_sext(field_, size) << dst_off) & mask
    return (field_ << dst_off) & mask


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

@dataclass
class StepRecord:
    index: int
    record: InstructionRecord
    ops: list
    violations: list


@dataclass
class RunReport:
    outcome: str  # "clean", "violation" or "crash"
    steps: int
    violations: list
    unknown: list = field(default_factory=list)
    machine: dict = field(default_factory=dict)
    sanitizer: dict = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        if self.outcome == "crash":
            return 1
        if any(not v.suppressed for v in self.violations):
            return 2
        return 0

    @property
    def first_violation(self) -> Optional[Violation]:
        for v in self.violations:
            if not v.suppressed:
                return v
        return None

    def to_dict(self) -> dict:
        from .cli import violation_to_record
        return {
            "outcome": self.outcome,
            "steps": self.steps,
            "violations": [violation_to_record(v) for v in self.violations],
            "unknown": [{"pc": f"{pc:#x}", "mnemonic": m} for pc, m in self.unknown],
            "machine": self.machine,
            "sanitizer": self.sanitizer,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


class Run:
    """One execution of a program under the sanitizer."""

    def __init__(self, prog: Program, annotations: Optional[AnnotationDb] = None,
                 input_bytes: bytes = b"", max_steps: int = DEFAULT_MAX_STEPS,
                 max_fragments: int = 6, strict_unknown: bool = True, abort: bool = True,
                 observer: Optional[Callable[[StepRecord], None]] = None):
        if max_steps <= 0:
            raise ValueError("max_steps must be positive")
        self.prog = prog
        self.max_steps = max_steps
        self.strict_unknown = strict_unknown
        self.abort = abort
        self.observer = observer
        db = annotations if annotations is not None else AnnotationDb()
        self.db = db.bind_symbols(prog.symbols, BUILTIN_ANNOTATIONS)
        self.m = Machine()
        self.san: SanitizerState = engine_init(self.db, STACK_TOP, prog.entry_pc, max_fragments)
        for name, index in prog.labels.items():
            self.san.symbol_names.setdefault(prog.pc_of(index), name)
        root = self.san.stack[0]
        root.function_id = root.function_id or self.san.symbol_names.get(root.entry_pc)
        self.heap_next = HEAP_BASE
        self.violations: list = []
        self.unknown: list = []
        self.steps = 0
        self._setup(input_bytes)

    def _setup(self, data: bytes):
        m = self.m
        for _, addr, size in self.prog.globals:
            m.write_bytes(addr, bytes(size))
        for addr, blob in self.prog.data:
            m.write_bytes(addr, blob)
        m.write_bytes(INPUT_BASE, data)
        m.regs["x0"] = len(data)
        m.regs["x1"] = INPUT_BASE
        m.regs["x30"] = HALT
        m.pc = self.prog.entry_pc
        if data:
            ident = Identity(INPUT_BASE, len(data), AnnotatedOrigin("input"))
            self.san.seed_register("x1", meta_pointer(ident))

    # -- main loop ------------------------------------------------------------

    def execute(self) -> RunReport:
        prog = self.prog
        stmts = prog.statements
        m = self.m
        outcome = "clean"
        while not m.halted:
            if self.steps >= self.max_steps:
                raise StepLimitExceeded(f"step limit of {self.max_steps} exceeded")
            idx, rem = divmod(m.pc - CODE_BASE, 4)
            if rem or not 0 <= idx < len(stmts):
                raise VmError(f"pc {m.pc:#x} is outside the program")
            st = stmts[idx]
            self.steps += 1
            if st.mnemonic == "sys_fail":
                outcome = "crash"
                break
            record = InstructionRecord(m.pc, st.mnemonic, st.operands, m.regs)
            stop = self._sanitize(record)
            if stop:
                outcome = "violation"
                break
            self._exec(st, record)
        if outcome == "clean" and any(not v.suppressed for v in self.violations):
            outcome = "violation"
        return RunReport(outcome, self.steps, list(self.violations), list(self.unknown),
                         m.summary(), self.san.summary())

    def _sanitize(self, record: InstructionRecord) -> bool:
        if record.mnemonic in UNMAPPED_EXECUTABLE:
            err = UnknownInstruction(record.mnemonic, record.pc, excluded=True)
            if self.strict_unknown:
                raise err
            self.unknown.append((record.pc, record.mnemonic))
            ops = []
        else:
            try:
                ops = translate(record, self.san)
            except UnknownInstruction:
                if self.strict_unknown:
                    raise
                self.unknown.append((record.pc, record.mnemonic))
                ops = []
        found = []
        stop = False
        for op in ops:
            v = self.san.apply(op, record.pc)
            if v is not None:
                found.append(v)
                self.violations.append(v)
                if self.abort and not v.suppressed:
                    stop = True
                    break
        if self.observer is not None:
            snap = InstructionRecord(record.pc, record.mnemonic, record.operands,
                                     dict(record.pre_regs))
            self.observer(StepRecord(self.steps - 1, snap, ops, found))
        return stop

    # -- concrete semantics ---------------------------------------------------

    def _val(self, op, shift: Optional[Shift] = None, width: int = 64) -> int:
        if isinstance(op, Imm):
            return op.shifted & ((1 << width) - 1)
        if isinstance(op, Label):
            return op.addr
        v = self.m.get(op.name)
        if shift is not None:
            v = apply_shift(v, shift.kind, shift.amount, canonical(op.name)[1])
        return v

    def _builtin(self, target: int):
        m = self.m
        if target == MALLOC_PC:
            size = m.regs["x0"]
            ptr = self.heap_next
            self.heap_next += max(16, (size + 15) & ~15)
            m.regs["x0"] = ptr
        # the callee returns immediately
        v = self.san.apply(Return("x0", m.regs["x0"]), target)
        if v is not None:
            self.violations.append(v)

    def _exec(self, st: Statement, rec: InstructionRecord):
        m = self.m
        mn = st.mnemonic
        ops = st.operands
        next_pc = m.pc + 4
        regs = m.regs

        def width_of(op):
            return canonical(op.name)[1]

        def cond(c) -> bool:
            return condition_holds(c.code, regs["nzcv"])

        if mn in ("b",) or mn.startswith("b."):
            if mn == "b" or cond(Cond(mn[2:])):
                next_pc = ops[0].addr
        elif mn in ("cbz", "cbnz"):
            if (self._val(ops[0]) == 0) == (mn == "cbz"):
                next_pc = ops[1].addr
        elif mn in ("tbz", "tbnz"):
            bit = (self._val(ops[0]) >> ops[1].value) & 1
            if (bit == 0) == (mn == "tbz"):
                next_pc = ops[2].addr
        elif mn in ("bl", "blr", "br"):
            target = ops[0].addr if isinstance(ops[0], Label) else self._val(ops[0])
            if mn != "br":
                regs["x30"] = next_pc
            if target in (MALLOC_PC, FREE_PC):
                self._builtin(target)
                if mn == "br":
                    next_pc = regs["x30"]
            else:
                next_pc = target
        elif mn == "ret":
            target = self._val(ops[0]) if ops else regs["x30"]
            if target == HALT:
                m.halted = True
            next_pc = target
        elif mn in _NOOPS:
            pass
        else:
            self._data_op(mn, ops, width_of, cond)
        m.pc = next_pc

    def _data_op(self, mn, ops, width_of, cond):
        m = self.m
        regs = m.regs
        val = self._val
        if mn in ("mov", "movz", "movn", "movk", "mvn"):
            d, s = ops[0], ops[1]
            w = width_of(d)
            mask = (1 << w) - 1
            if mn == "mov":
                m.set(d.name, val(s, width=w))
            elif mn == "movz":
                m.set(d.name, val(s, width=w))
            elif mn == "movn":
                m.set(d.name, ~val(s, width=w) & mask)
            elif mn == "movk":
                shift = ops[2].amount if len(ops) == 3 else s.shift
                old = m.get(d.name) & ~(0xFFFF << shift) & mask
                m.set(d.name, old | ((s.value & 0xFFFF) << shift))
            else:
                sh = ops[2] if len(ops) == 3 else None
                m.set(d.name, ~val(s, sh) & mask)
        elif mn in ("add", "adds", "sub", "subs", "cmp", "cmn", "adc", "adcs", "sbc", "sbcs"):
            if mn in ("cmp", "cmn"):
                d, a, b = Reg("xzr"), ops[0], ops[1]
                rest = ops[2:]
            else:
                d, a, b = ops[0], ops[1], ops[2]
                rest = ops[3:]
            w = width_of(a)
            mask = (1 << w) - 1
            sh = rest[0] if rest and isinstance(rest[0], Shift) else None
            bv = val(b, sh, w) & mask
            av = val(a) & mask
            carry = (regs["nzcv"] >> 1) & 1
            if mn in ("add", "adds", "cmn"):
                res, flags = _flags_add(av, bv, 0, w)
            elif mn in ("adc", "adcs"):
                res, flags = _flags_add(av, bv, carry, w)
            elif mn in ("sbc", "sbcs"):
                res, flags = _flags_add(av, ~bv & mask, carry, w)
            else:
                res, flags = _flags_add(av, ~bv & mask, 1, w)
            if mn in ("adds", "subs", "cmp", "cmn", "adcs", "sbcs"):
                regs["nzcv"] = flags
            if mn not in ("cmp", "cmn"):
                m.set(d.name, res)
        elif mn in ("and", "ands", "tst", "orr", "orn", "eor", "eon", "bic", "bics"):
            if mn == "tst":
                d, a, b, rest = Reg("xzr"), ops[0], ops[1], ops[2:]
            else:
                d, a, b, rest = ops[0], ops[1], ops[2], ops[3:]
            w = width_of(a)
            mask = (1 << w) - 1
            sh = rest[0] if rest else None
            av, bv = val(a) & mask, val(b, sh, w) & mask
            if mn in ("and", "ands", "tst"):
                res = av & bv
            elif mn == "orr":
                res = av | bv
            elif mn == "orn":
                res = av | (~bv & mask)
            elif mn == "eor":
                res = av ^ bv
            elif mn == "eon":
                res = av ^ (~bv & mask)
            else:
                res = av & (~bv & mask)
            if mn in ("ands", "tst", "bics"):
                regs["nzcv"] = ((res >> (w - 1)) << 3) | (int(res == 0) << 2)
            if mn != "tst":
                m.set(d.name, res)
        elif mn in ("madd", "msub", "mul", "mneg", "smaddl", "umaddl", "smsubl", "umsubl",
                    "smull", "umull", "smulh", "umulh", "sdiv", "udiv"):
            d = ops[0]
            w = width_of(d)
            mask = (1 << w) - 1
            a, b = val(ops[1]), val(ops[2])
            if mn in ("smaddl", "smsubl", "smull", "smulh", "sdiv"):
                sw = width_of(ops[1])
                a, b = _sext(a, sw), _sext(b, sw)
            if mn in ("madd", "smaddl", "umaddl"):
                res = a * b + val(ops[3])
            elif mn in ("msub", "smsubl", "umsubl"):
                res = val(ops[3]) - a * b
            elif mn in ("mul", "smull", "umull"):
                res = a * b
            elif mn == "mneg":
                res = -(a * b)
            elif mn in ("smulh", "umulh"):
                res = (a * b) >> 64
            elif b == 0:
                res = 0
            elif mn == "udiv":
                res = a // b
            else:
                q = abs(a) // abs(b)
                res = q if (a < 0) == (b < 0) else -q
            m.set(d.name, res & mask)
        elif mn in ("lsl", "lsr", "asr", "ror", "lslv", "lsrv", "asrv", "rorv"):
            d, s, amt = ops
            w = width_of(d)
            n = val(amt) % w
            m.set(d.name, apply_shift(val(s), mn.rstrip("v"), n, w))
        elif mn in ("neg", "negs", "ngs", "ngc", "ngcs"):
            d, s = ops[0], ops[1]
            w = width_of(d)
            mask = (1 << w) - 1
            sv = val(s, ops[2] if len(ops) > 2 and isinstance(ops[2], Shift) else None) & mask
            carry = (regs["nzcv"] >> 1) & 1 if mn.startswith("ngc") else 1
            res, flags = _flags_add(0, ~sv & mask, carry, w)
            if mn.endswith("s"):
                regs["nzcv"] = flags
            m.set(d.name, res)
        elif mn == "mrs":
            m.set(ops[0].name, 0)
        elif mn in ("cset", "csetm"):
            on = cond(ops[1])
            m.set(ops[0].name, (MASK64 if mn == "csetm" else 1) if on else 0)
        elif mn in ("cinv", "cneg", "cinc"):
            d, s, c = ops
            w = width_of(d)
            mask = (1 << w) - 1
            v = val(s)
            if cond(c):
                v = {"cinv": ~v, "cneg": -v, "cinc": v + 1}[mn]
            m.set(d.name, v & mask)
        elif mn in ("ccmp", "ccmn"):
            a, b, nzcv, c = ops
            if cond(c):
                w = width_of(a)
                mask = (1 << w) - 1
                av, bv = val(a) & mask, val(b, width=w) & mask
                if mn == "ccmp":
                    _, flags = _flags_add(av, ~bv & mask, 1, w)
                else:
                    _, flags = _flags_add(av, bv, 0, w)
                regs["nzcv"] = flags
            else:
                regs["nzcv"] = nzcv.value & 0xF
        elif mn in ("csel", "csinc", "csinv", "csneg"):
            d, a, b, c = ops
            w = width_of(d)
            mask = (1 << w) - 1
            if cond(c):
                res = val(a)
            else:
                bv = val(b)
                res = {"csel": bv, "csinc": bv + 1, "csinv": ~bv, "csneg": -bv}[mn]
            m.set(d.name, res & mask)
        elif mn in ("sxtb", "sxth", "sxtw", "uxtb", "uxth", "uxtw"):
            d, s = ops
            bits = {"b": 8, "h": 16, "w": 32}[mn[-1]]
            v = val(s) & ((1 << bits) - 1)
            if mn[0] == "s":
                v = _sext(v, bits)
            m.set(d.name, v & ((1 << width_of(d)) - 1))
        elif mn in ("bfm", "bfi", "bfxil", "ubfm", "ubfiz", "ubfx", "sbfm", "sbfiz", "sbfx"):
            d, s, a, b = ops
            w = width_of(d)
            m.set(d.name, _bitfield_concrete(mn, m.get(d.name), val(s), a.value, b.value, w))
        elif mn in ("rev", "rev16", "rev32"):
            d, s = ops
            w = width_of(d)
            v = val(s)
            chunk = {"rev": w, "rev16": 16, "rev32": 32}[mn]
            res = 0
            for off in range(0, w, chunk):
                piece = (v >> off) & ((1 << chunk) - 1)
                res |= int.from_bytes(piece.to_bytes(chunk // 8, "little"), "big") << off
            m.set(d.name, res)
        elif mn == "adr":
            m.set(ops[0].name, ops[1].addr)
        elif mn == "adrp":
            m.set(ops[0].name, val(ops[1]) & ~0xFFF)
        else:
            self._memory_op(mn, ops)

    def _memory_op(self, mn, ops):
        from .semantics import _EXCLUSIVE_STORES, _LOADS, _PAIRS, _STORES
        m = self.m
        status = None
        if mn in _PAIRS:
            kind, fixed = _PAIRS[mn]
            if mn in ("stxp", "stlxp"):
                status, ops = ops[0], ops[1:]
            targets, mem = [ops[0], ops[1]], ops[2]
        else:
            if mn in _LOADS:
                fixed = _LOADS[mn]
            elif mn in _STORES:
                fixed = _STORES[mn]
            else:
                fixed = _EXCLUSIVE_STORES[mn]
                status, ops = ops[0], ops[1:]
            targets, mem = [ops[0]], ops[1]
        load = mn.startswith("ld")
        base = m.get(mem.base)
        if mem.index is not None:
            addr = (base + (m.get(mem.index) << mem.index_shift)) & MASK64
        elif mem.mode == "post":
            addr = base
        else:
            addr = (base + mem.imm_off) & MASK64
        signed = load and mn.endswith(("sb", "sh", "sw")) and mn not in ("ldaxrb", "ldxrb")
        off = 0
        for t in targets:
            w = canonical(t.name)[1]
            size = fixed or w // 8
            if load:
                v = m.load(addr + off, size)
                if signed:
                    v = _sext(v, size * 8) & ((1 << w) - 1)
                m.set(t.name, v)
            else:
                m.store(addr + off, size, m.get(t.name))
            off += size
        if mem.mode != "offset":
            m.set(mem.base, base + mem.imm_off)
        if status is not None:
            m.set(status.name, 0)


def run(prog: Program, annotations: Optional[AnnotationDb] = None, input_bytes: bytes = b"",
        max_steps: int = DEFAULT_MAX_STEPS, **kwargs) -> RunReport:
    """Execute ``prog`` from its entry label; see :class:`Run` for the options."""
    return Run(prog, annotations, input_bytes, max_steps, **kwargs).execute()
