"""Bit-range identity metadata.

A value of N bits is described by an ordered list of fragments, listed from
the least-significant bit upwards.  Each fragment either names a contiguous
run of bits ``start..end`` taken from some pointer (with that pointer's
identity) or is filler, written ``(0..len, -)``.

All operations here are pure.  Public ``meta_*`` functions validate their
arguments and apply the fragment cap; the underscore helpers skip both and
are used to build composite operations without collapsing intermediates.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Sequence, Union

MAX_FRAGMENTS = 6
POINTER_BITS = 64
MAX_WIDTH = 128
SUPPORTED_WIDTHS = frozenset({8, 16, 32, 64, 128})
ADDRESS_SPACE = 1 << 64


class MetadataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Identities
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StackOrigin:
    frame_pc: int
    sp_off: int


@dataclass(frozen=True)
class GlobalOrigin:
    offset: int
    name: Optional[str] = None


@dataclass(frozen=True)
class HeapOrigin:
    alloc_site: int


@dataclass(frozen=True)
class AnnotatedOrigin:
    name: str


@dataclass(frozen=True)
class PendingStackOrigin:
    """Stack pointer whose variable is bound at its first dereference."""
    frame_pc: int
    frame_end: int
    sp_off: int


@dataclass(frozen=True)
class PendingGlobalOrigin:
    """Page base from ADRP; the global is bound at its first dereference."""
    page: int


Origin = Union[StackOrigin, GlobalOrigin, HeapOrigin, AnnotatedOrigin,
               PendingStackOrigin, PendingGlobalOrigin]

PENDING_ORIGINS = (PendingStackOrigin, PendingGlobalOrigin)


@dataclass(frozen=True)
class Identity:
    """The byte range ``[base, base + length)`` a pointer may access."""
    base: int
    length: int
    origin: Optional[Origin] = None

    def __post_init__(self):
        if not 0 <= self.base < ADDRESS_SPACE:
            raise MetadataError(f"identity base {self.base:#x} outside the address space")
        if self.length < 1:
            raise MetadataError(f"identity length must be >= 1, got {self.length}")
        if self.base + self.length > ADDRESS_SPACE:
            raise MetadataError("identity range overflows the address space")

    @property
    def end(self) -> int:
        return self.base + self.length

    @property
    def pending(self) -> bool:
        return isinstance(self.origin, PENDING_ORIGINS)

    def contains(self, addr: int, size: int = 1) -> bool:
        return addr >= self.base and addr + size <= self.base + self.length

    def __repr__(self):
        return f"Identity({self.base:#x}, {self.length:#x})"


# ---------------------------------------------------------------------------
# Fragments and values
# ---------------------------------------------------------------------------

class Fragment(NamedTuple):
    start: int
    end: int
    identity: Optional[Identity] = None

    @property
    def bits(self) -> int:
        return self.end - self.start

    def __repr__(self):
        who = "-" if self.identity is None else repr(self.identity)
        return f"({self.start}..{self.end}, {who})"


class ValueMetadata:
    """Metadata for a ``width``-bit value, fragments LSB first."""

    __slots__ = ("width", "fragments")

    def __init__(self, width: int, fragments: Sequence[Fragment]):
        fragments = tuple(Fragment(*f) for f in fragments)
        total = 0
        for f in fragments:
            if f.start < 0 or f.start >= f.end:
                raise MetadataError(f"bad fragment range {f.start}..{f.end}")
            if f.identity is not None and f.end > POINTER_BITS:
                raise MetadataError("pointer fragment names bits beyond a pointer")
            total += f.end - f.start
        if total != width:
            raise MetadataError(f"fragments cover {total} bits, expected {width}")
        canon = _normalize(fragments)
        self.width = width
        self.fragments = canon

    @classmethod
    def _make(cls, width: int, fragments: tuple) -> "ValueMetadata":
        obj = object.__new__(cls)
        obj.width = width
        obj.fragments = fragments
        return obj

    @property
    def is_filler(self) -> bool:
        return len(self.fragments) == 1 and self.fragments[0].identity is None

    def __len__(self):
        return len(self.fragments)

    def __eq__(self, other):
        if not isinstance(other, ValueMetadata):
            return NotImplemented
        return self.width == other.width and self.fragments == other.fragments

    def __hash__(self):
        return hash((self.width, self.fragments))

    def __repr__(self):
        return f"<{self.width}b [{', '.join(map(repr, self.fragments))}]>"


def _normalize(frags) -> tuple:
    out: list = []
    for f in frags:
        if out:
            last = out[-1]
            if last.identity is None and f.identity is None:
                out[-1] = Fragment(0, last.end + (f.end - f.start))
                continue
            if (f.identity is not None and last.identity == f.identity
                    and last.end == f.start):
                out[-1] = Fragment(last.start, f.end, f.identity)
                continue
        if f.identity is None and f.start != 0:
            f = Fragment(0, f.end - f.start)
        out.append(f)
    return tuple(out)


_FILLER_CACHE: dict = {}


def filler(width: int) -> ValueMetadata:
    m = _FILLER_CACHE.get(width)
    if m is None:
        if width < 1:
            raise MetadataError(f"width must be positive, got {width}")
        m = ValueMetadata._make(width, (Fragment(0, width),))
        _FILLER_CACHE[width] = m
    return m


def apply_cap(m: ValueMetadata, max_fragments: Optional[int] = MAX_FRAGMENTS) -> ValueMetadata:
    """Collapse ``m`` to filler when it has too many fragments; ``None`` disables the cap."""
    if max_fragments is not None and len(m.fragments) > max_fragments:
        return filler(m.width)
    return m


def _slice(m: ValueMetadata, lo: int, hi: int) -> ValueMetadata:
    if lo == 0 and hi == m.width:
        return m
    out = []
    pos = 0
    for f in m.fragments:
        n = f.end - f.start
        a = lo if lo > pos else pos
        b = hi if hi < pos + n else pos + n
        if a < b:
            if f.identity is None:
                out.append(Fragment(0, b - a))
            else:
                out.append(Fragment(f.start + a - pos, f.start + b - pos, f.identity))
        pos += n
        if pos >= hi:
            break
    return ValueMetadata._make(hi - lo, tuple(out))


def _concat(*parts: ValueMetadata) -> ValueMetadata:
    frags: list = []
    width = 0
    for p in parts:
        width += p.width
        frags.extend(p.fragments)
    return ValueMetadata._make(width, _normalize(frags))


def _insert(dst: ValueMetadata, src: ValueMetadata, src_off: int, size: int,
            dst_off: int, clear: bool) -> ValueMetadata:
    piece = _slice(src, src_off, src_off + size)
    parts = []
    if dst_off:
        parts.append(filler(dst_off) if clear else _slice(dst, 0, dst_off))
    parts.append(piece)
    rest = dst.width - dst_off - size
    if rest:
        parts.append(filler(rest) if clear else _slice(dst, dst_off + size, dst.width))
    return _concat(*parts)


# ---------------------------------------------------------------------------
# Public algebra
# ---------------------------------------------------------------------------

def meta_empty(width: int) -> ValueMetadata:
    if width not in SUPPORTED_WIDTHS:
        raise MetadataError(f"unsupported register width {width}")
    return filler(width)


def meta_pointer(identity: Identity) -> ValueMetadata:
    return ValueMetadata._make(POINTER_BITS, (Fragment(0, POINTER_BITS, identity),))


def meta_slice(m: ValueMetadata, lo: int, hi: int,
               max_fragments: int = MAX_FRAGMENTS) -> ValueMetadata:
    if not 0 <= lo < hi <= m.width:
        raise MetadataError(f"slice {lo}..{hi} out of range for width {m.width}")
    return apply_cap(_slice(m, lo, hi), max_fragments)


def meta_concat(a: ValueMetadata, b: ValueMetadata,
                max_fragments: int = MAX_FRAGMENTS) -> ValueMetadata:
    if a.width + b.width > MAX_WIDTH:
        raise MetadataError(f"concatenation width {a.width + b.width} exceeds {MAX_WIDTH}")
    return apply_cap(_concat(a, b), max_fragments)


class TransformKind(Enum):
    NOTHING = "Nothing"
    SHIFT_LEFT = "ShiftLeft"
    SHIFT_RIGHT = "ShiftRight"
    ROTATE_LEFT = "RotateLeft"
    ROTATE_RIGHT = "RotateRight"


@dataclass(frozen=True)
class MetaTransform:
    kind: TransformKind = TransformKind.NOTHING
    amount: int = 0

    def __post_init__(self):
        if self.amount < 0:
            raise MetadataError("transform amount must be non-negative")

    @classmethod
    def shift_left(cls, n):
        return cls(TransformKind.SHIFT_LEFT, n)

    @classmethod
    def shift_right(cls, n):
        return cls(TransformKind.SHIFT_RIGHT, n)

    @classmethod
    def rotate_left(cls, n):
        return cls(TransformKind.ROTATE_LEFT, n)

    @classmethod
    def rotate_right(cls, n):
        return cls(TransformKind.ROTATE_RIGHT, n)


NOTHING = MetaTransform()


def _transform(m: ValueMetadata, t: MetaTransform) -> ValueMetadata:
    w = m.width
    n = t.amount
    kind = t.kind
    if kind is TransformKind.NOTHING or n == 0:
        return m
    if kind is TransformKind.SHIFT_LEFT:
        if n >= w:
            return filler(w)
        # result bit i holds source bit i - n
        return _concat(filler(n), _slice(m, 0, w - n))
    if kind is TransformKind.SHIFT_RIGHT:
        if n >= w:
            return filler(w)
        return _concat(_slice(m, n, w), filler(n))
    n %= w
    if n == 0:
        return m
    if kind is TransformKind.ROTATE_LEFT:
        return _concat(_slice(m, w - n, w), _slice(m, 0, w - n))
    return _concat(_slice(m, n, w), _slice(m, 0, n))


def meta_transform(m: ValueMetadata, t: MetaTransform,
                   max_fragments: int = MAX_FRAGMENTS) -> ValueMetadata:
    if t.amount > m.width:
        raise MetadataError(f"transform amount {t.amount} exceeds width {m.width}")
    return apply_cap(_transform(m, t), max_fragments)


def meta_insert_bits(dst: ValueMetadata, src: ValueMetadata, src_off: int, size: int,
                     dst_off: int, clear: bool,
                     max_fragments: int = MAX_FRAGMENTS) -> ValueMetadata:
    """Replace ``size`` bits of ``dst`` at ``dst_off`` by ``src`` bits at ``src_off``.

    With ``clear`` every bit outside the inserted range becomes filler.
    """
    if size < 1 or src_off < 0 or dst_off < 0:
        raise MetadataError("bit-field range must be non-empty and non-negative")
    if src_off + size > src.width or dst_off + size > dst.width:
        raise MetadataError(
            f"bit-field {src_off}+{size} -> {dst_off} overflows {src.width}/{dst.width} bits")
    return apply_cap(_insert(dst, src, src_off, size, dst_off, clear), max_fragments)


def meta_reduce(m: ValueMetadata) -> Optional[Identity]:
    """The identity of a complete in-order pointer in the low 64 bits, else None."""
    frags = m.fragments
    f = frags[0]
    if f.identity is None or f.start != 0 or f.end != POINTER_BITS:
        return None
    if len(frags) == 1:
        return f.identity
    if len(frags) == 2 and frags[1].identity is None:
        return f.identity
    return None


def _merge_disjoint(a: ValueMetadata, b: ValueMetadata) -> ValueMetadata:
    # bits owned by exactly one operand keep their label; collisions become filler
    cuts = {0, a.width}
    pos = 0
    for f in a.fragments:
        pos += f.end - f.start
        cuts.add(pos)
    pos = 0
    for f in b.fragments:
        pos += f.end - f.start
        cuts.add(pos)
    edges = sorted(cuts)
    parts = []
    for lo, hi in zip(edges, edges[1:]):
        pa = _slice(a, lo, hi)
        pb = _slice(b, lo, hi)
        a_ptr = pa.fragments[0].identity is not None
        b_ptr = pb.fragments[0].identity is not None
        if a_ptr and not b_ptr:
            parts.append(pa)
        elif b_ptr and not a_ptr:
            parts.append(pb)
        else:
            parts.append(filler(hi - lo))
    return _concat(*parts)


def meta_combine(a: ValueMetadata, b: ValueMetadata,
                 max_fragments: int = MAX_FRAGMENTS) -> ValueMetadata:
    """Metadata of an arithmetic or bitwise result of two operands.

    A pointer combined with a non-pointer stays that pointer; two pointers give
    an offset (filler).  When neither side is a whole pointer, pointer bits that
    only one side carries survive, so OR-ing shifted halves reassembles them.
    """
    if a.width != b.width:
        raise MetadataError(f"combine width mismatch {a.width} != {b.width}")
    ra = meta_reduce(a)
    rb = meta_reduce(b)
    if ra is not None and rb is None:
        return a
    if rb is not None and ra is None:
        return b
    if ra is not None:
        return filler(a.width)
    if a.is_filler:
        return b
    if b.is_filler:
        return a
    return apply_cap(_merge_disjoint(a, b), max_fragments)


def widen(m: ValueMetadata, width: int) -> ValueMetadata:
    """Zero-extend ``m`` with filler to ``width`` bits."""
    if m.width == width:
        return m
    if m.width > width:
        return _slice(m, 0, width)
    return _concat(m, filler(width - m.width))
