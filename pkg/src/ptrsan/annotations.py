"""User-provided layouts: globals, stack frames, per-function flags, pointer slots.

The on-disk form is a JSON document::

    {
      "globals": [{"name": "target_buffer", "addr": "0x2000", "size": 10}],
      "functions": {
        "copy": {"frame_vars": [{"sp_off": 16, "size": 10, "name": "buf"}],
                 "suppress": false, "delayed_sp": false, "relaxed_reads": false,
                 "malloc_like": {"size_arg": "x0"}}
      },
      "pointer_slots": [{"addr": "0x2100", "base": "0x3000", "length": 16}]
    }

Function keys are either hex entry addresses or symbolic names; names are
bound to addresses with :meth:`AnnotationDb.bind_symbols`.
"""
from __future__ import annotations

import bisect
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

WORD = 8
GENERAL_REGISTERS = frozenset(f"x{i}" for i in range(31))
_HEX = re.compile(r"^0[xX][0-9a-fA-F]+$")

FunctionKey = Union[int, str]


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class GlobalVar:
    name: str
    addr: int
    size: int

    @property
    def end(self) -> int:
        return self.addr + self.size


@dataclass(frozen=True)
class FrameVar:
    sp_off: int
    size: int
    name: Optional[str] = None

    @property
    def end(self) -> int:
        return self.sp_off + self.size


@dataclass(frozen=True)
class MallocLike:
    size_arg: str = "x0"


@dataclass(frozen=True)
class FunctionInfo:
    key: FunctionKey
    name: Optional[str] = None
    frame_vars: tuple = ()
    suppress: bool = False
    delayed_sp: bool = False
    relaxed_reads: bool = False
    malloc_like: Optional[MallocLike] = None
    _starts: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        vars_ = tuple(sorted(self.frame_vars, key=lambda v: v.sp_off))
        for a, b in zip(vars_, vars_[1:]):
            if b.sp_off < a.end:
                raise AnnotationError(
                    f"frame variables {a.name or a.sp_off} and {b.name or b.sp_off} "
                    f"of {self.label} overlap")
        object.__setattr__(self, "frame_vars", vars_)
        object.__setattr__(self, "_starts", tuple(v.sp_off for v in vars_))

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return hex(self.key) if isinstance(self.key, int) else str(self.key)

    def lookup_var(self, sp_off: int) -> Optional[FrameVar]:
        i = bisect.bisect_right(self._starts, sp_off) - 1
        if i >= 0:
            v = self.frame_vars[i]
            if v.sp_off <= sp_off < v.end:
                return v
        return None


@dataclass(frozen=True)
class PointerSlot:
    addr: int
    base: int
    length: int
    name: Optional[str] = None


class AnnotationDb:
    """Validated, indexed annotations.  Immutable after construction."""

    def __init__(self, globals: Iterable[GlobalVar] = (),
                 functions: Iterable[FunctionInfo] = (),
                 pointer_slots: Iterable[PointerSlot] = ()):
        self.globals = tuple(sorted(globals, key=lambda g: g.addr))
        for g in self.globals:
            if g.size < 1:
                raise AnnotationError(f"global {g.name} has non-positive size")
        for a, b in zip(self.globals, self.globals[1:]):
            if b.addr < a.end:
                raise AnnotationError(f"globals {a.name} and {b.name} overlap")
        self._global_starts = [g.addr for g in self.globals]

        self.functions = tuple(functions)
        self._by_addr: dict = {}
        self._by_name: dict = {}
        for f in self.functions:
            table = self._by_addr if isinstance(f.key, int) else self._by_name
            if f.key in table:
                raise AnnotationError(f"function {f.label} annotated twice")
            table[f.key] = f

        self.pointer_slots = tuple(sorted(pointer_slots, key=lambda s: s.addr))
        owner: dict = {}
        for s in self.pointer_slots:
            if s.length < 1:
                raise AnnotationError(f"pointer slot at {s.addr:#x} has non-positive length")
            for w in range(s.addr // WORD * WORD, s.addr + WORD, WORD):
                if w in owner:
                    raise AnnotationError(
                        f"pointer slots at {owner[w]:#x} and {s.addr:#x} share word {w:#x}")
                owner[w] = s.addr

    # -- lookups -----------------------------------------------------------

    def lookup_global(self, addr: int) -> Optional[GlobalVar]:
        i = bisect.bisect_right(self._global_starts, addr) - 1
        if i >= 0 and addr < self.globals[i].end:
            return self.globals[i]
        return None

    def overlaps_global(self, addr: int, size: int) -> bool:
        i = bisect.bisect_left(self._global_starts, addr + size) - 1
        return i >= 0 and self.globals[i].end > addr

    def function_at(self, pc: int) -> Optional[FunctionInfo]:
        return self._by_addr.get(pc)

    def function_named(self, name: str) -> Optional[FunctionInfo]:
        f = self._by_name.get(name)
        if f is not None:
            return f
        for f in self._by_addr.values():
            if f.name == name:
                return f
        return None

    def lookup_stack_var(self, function: Union[FunctionInfo, FunctionKey, None],
                         sp_off: int) -> Optional[FrameVar]:
        if not isinstance(function, FunctionInfo):
            if function is None:
                return None
            function = (self._by_addr.get(function) if isinstance(function, int)
                        else self.function_named(function))
            if function is None:
                return None
        return function.lookup_var(sp_off)

    # -- transformation ----------------------------------------------------

    def bind_symbols(self, symbols: Mapping[str, int],
                     defaults: Iterable[FunctionInfo] = ()) -> "AnnotationDb":
        """Key name-addressed functions by entry address.

        ``defaults`` supplies annotations for symbols the document leaves out.
        """
        funcs = []
        seen = set()
        for f in self.functions:
            if isinstance(f.key, str):
                if f.key not in symbols:
                    raise AnnotationError(f"annotated function {f.key!r} is not a known symbol")
                f = replace(f, key=symbols[f.key], name=f.name or f.key)
            else:
                if f.name is None:
                    for sym, addr in symbols.items():
                        if addr == f.key:
                            f = replace(f, name=sym)
                            break
            funcs.append(f)
            seen.add(f.key)
        for d in defaults:
            key = symbols.get(d.key, d.key) if isinstance(d.key, str) else d.key
            if key not in seen:
                funcs.append(replace(d, key=key, name=d.name or (d.key if isinstance(d.key, str) else None)))
                seen.add(key)
        return AnnotationDb(self.globals, funcs, self.pointer_slots)

    def without(self, *, globals: bool = False, functions: bool = False,
                pointer_slots: bool = False) -> "AnnotationDb":
        return AnnotationDb(() if globals else self.globals,
                            () if functions else self.functions,
                            () if pointer_slots else self.pointer_slots)

    def to_document(self) -> dict:
        return dump_annotations(self)

    def __eq__(self, other):
        if not isinstance(other, AnnotationDb):
            return NotImplemented
        return dump_annotations(self) == dump_annotations(other)

    def __repr__(self):
        return (f"AnnotationDb({len(self.globals)} globals, {len(self.functions)} functions, "
                f"{len(self.pointer_slots)} pointer slots)")


# ---------------------------------------------------------------------------
# Document (de)serialization
# ---------------------------------------------------------------------------

_TOP_KEYS = {"globals", "functions", "pointer_slots"}
_FUNC_KEYS = {"frame_vars", "suppress", "delayed_sp", "relaxed_reads", "malloc_like", "name"}


def _addr(value, where: str) -> int:
    if not isinstance(value, str) or not _HEX.match(value):
        raise AnnotationError(f"{where}: expected a hex address string, got {value!r}")
    return int(value, 16)


def _size(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise AnnotationError(f"{where}: expected a decimal integer, got {value!r}")
    if value < 0:
        raise AnnotationError(f"{where}: must be non-negative")
    return value


def _flag(value, where: str) -> bool:
    if not isinstance(value, bool):
        raise AnnotationError(f"{where}: expected true/false, got {value!r}")
    return value


def _obj(value, where: str, allowed: set, required: set = frozenset()) -> dict:
    if not isinstance(value, dict):
        raise AnnotationError(f"{where}: expected an object")
    unknown = set(value) - allowed
    if unknown:
        raise AnnotationError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(value)
    if missing:
        raise AnnotationError(f"{where}: missing keys {sorted(missing)}")
    return value


def _list(value, where: str) -> list:
    if not isinstance(value, list):
        raise AnnotationError(f"{where}: expected a list")
    return value


def load_annotations(document: Union[Mapping, str, Path, None]) -> AnnotationDb:
    """Build an :class:`AnnotationDb` from a parsed document, JSON text or a path."""
    if document is None:
        return AnnotationDb()
    if isinstance(document, Path):
        document = json.loads(document.read_text())
    elif isinstance(document, str):
        document = json.loads(document)
    doc = _obj(document, "annotations", _TOP_KEYS)

    globals_ = []
    for i, g in enumerate(_list(doc.get("globals", []), "globals")):
        where = f"globals[{i}]"
        g = _obj(g, where, {"name", "addr", "size"}, {"name", "addr", "size"})
        if not isinstance(g["name"], str):
            raise AnnotationError(f"{where}.name: expected a string")
        globals_.append(GlobalVar(g["name"], _addr(g["addr"], where + ".addr"),
                                  _size(g["size"], where + ".size")))

    functions = []
    funcs = doc.get("functions", {})
    if not isinstance(funcs, dict):
        raise AnnotationError("functions: expected an object keyed by address or name")
    for key, body in funcs.items():
        where = f"functions[{key!r}]"
        body = _obj(body, where, _FUNC_KEYS)
        fkey: FunctionKey = int(key, 16) if _HEX.match(key) else key
        frame_vars = []
        for j, v in enumerate(_list(body.get("frame_vars", []), where + ".frame_vars")):
            vw = f"{where}.frame_vars[{j}]"
            v = _obj(v, vw, {"sp_off", "size", "name"}, {"sp_off", "size"})
            size = _size(v["size"], vw + ".size")
            if size < 1:
                raise AnnotationError(f"{vw}.size: must be positive")
            frame_vars.append(FrameVar(_size(v["sp_off"], vw + ".sp_off"), size, v.get("name")))
        malloc = None
        if body.get("malloc_like") is not None:
            ml = body["malloc_like"]
            if ml is True:
                ml = {}
            ml = _obj(ml, where + ".malloc_like", {"size_arg"})
            reg = ml.get("size_arg", "x0")
            if reg not in GENERAL_REGISTERS:
                raise AnnotationError(f"{where}.malloc_like.size_arg: unknown register {reg!r}")
            malloc = MallocLike(reg)
        name = body.get("name")
        if name is not None and not isinstance(name, str):
            raise AnnotationError(f"{where}.name: expected a string")
        functions.append(FunctionInfo(
            key=fkey, name=name if name is not None else (key if isinstance(fkey, str) else None),
            frame_vars=tuple(frame_vars),
            suppress=_flag(body.get("suppress", False), where + ".suppress"),
            delayed_sp=_flag(body.get("delayed_sp", False), where + ".delayed_sp"),
            relaxed_reads=_flag(body.get("relaxed_reads", False), where + ".relaxed_reads"),
            malloc_like=malloc))

    slots = []
    for i, s in enumerate(_list(doc.get("pointer_slots", []), "pointer_slots")):
        where = f"pointer_slots[{i}]"
        s = _obj(s, where, {"addr", "base", "length", "name"}, {"addr", "base", "length"})
        length = _size(s["length"], where + ".length")
        slots.append(PointerSlot(_addr(s["addr"], where + ".addr"),
                                 _addr(s["base"], where + ".base"), length, s.get("name")))

    return AnnotationDb(globals_, functions, slots)


def dump_annotations(db: AnnotationDb) -> dict:
    doc: dict = {}
    if db.globals:
        doc["globals"] = [{"name": g.name, "addr": hex(g.addr), "size": g.size}
                          for g in db.globals]
    if db.functions:
        funcs = {}
        for f in db.functions:
            key = hex(f.key) if isinstance(f.key, int) else f.key
            body: dict = {}
            if f.name is not None and f.name != key:
                body["name"] = f.name
            if f.frame_vars:
                body["frame_vars"] = []
                for v in f.frame_vars:
                    entry = {"sp_off": v.sp_off, "size": v.size}
                    if v.name is not None:
                        entry["name"] = v.name
                    body["frame_vars"].append(entry)
            for flag in ("suppress", "delayed_sp", "relaxed_reads"):
                if getattr(f, flag):
                    body[flag] = True
            if f.malloc_like is not None:
                body["malloc_like"] = {"size_arg": f.malloc_like.size_arg}
            funcs[key] = body
        doc["functions"] = funcs
    if db.pointer_slots:
        doc["pointer_slots"] = []
        for s in db.pointer_slots:
            entry = {"addr": hex(s.addr), "base": hex(s.base), "length": s.length}
            if s.name is not None:
                entry["name"] = s.name
            doc["pointer_slots"].append(entry)
    return doc
