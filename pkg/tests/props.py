"""Hypothesis strategies and metadata properties shared by the unit and acceptance suites.

Each property is a plain function of drawn arguments; the test modules wrap
them with ``given`` at whatever example count they need.
"""
from hypothesis import strategies as st

from ptrsan.metadata import (
    Fragment, Identity, MetaTransform, TransformKind, ValueMetadata, filler, meta_combine,
    meta_concat, meta_insert_bits, meta_reduce, meta_slice, meta_transform,
)
from ptrsan.oracle import (
    bits_cap, bits_combine, bits_insert, bits_reduce, bits_runs, bits_transform, fragment_runs,
    to_bits,
)

WIDTHS = (8, 16, 32, 64, 128)
IDENTS = (Identity(0xff10, 0x10), Identity(0x2000, 10), Identity(0x8000, 32),
          Identity(0x1000, 4096))


def decode_metadata(raw: bytes, width=None, max_fragments=6) -> ValueMetadata:
    """A canonical value with at most ``max_fragments`` fragments, decoded from bytes.

    Decoding from one byte string keeps example generation cheap and lets
    hypothesis shrink toward fewer, shorter, filler-only fragments.
    """
    raw = raw.ljust(DECODE_BYTES, b"\0")
    if width is None:
        width = WIDTHS[raw[0] % len(WIDTHS)]
    if width >= 64 and raw[1] % 4 == 3:
        ident = IDENTS[raw[2] % len(IDENTS)]
        frags = [Fragment(0, 64, ident)] + ([Fragment(0, width - 64)] if width > 64 else [])
        return ValueMetadata(width, frags)
    pieces = 1 + raw[2] % min(max_fragments, width)
    cuts = sorted({1 + b % (width - 1) for b in raw[3:3 + pieces - 1]}) if width > 1 else []
    edges = [0] + cuts + [width]
    frags = []
    pos = 3 + max_fragments
    for lo, hi in zip(edges, edges[1:]):
        n = hi - lo
        kind, where = raw[pos], raw[pos + 1]
        pos += 2
        if n <= 64 and kind % 3:
            start = where % (65 - n)
            frags.append(Fragment(start, start + n, IDENTS[kind % len(IDENTS)]))
        else:
            frags.append(Fragment(0, n))
    return ValueMetadata(width, frags)


DECODE_BYTES = 3 + 6 + 2 * 6


def metadata(width=None):
    return st.binary(min_size=DECODE_BYTES, max_size=DECODE_BYTES).map(
        lambda raw: decode_metadata(raw, width))


def random_metadata(rng, width=None) -> ValueMetadata:
    return decode_metadata(bytes(rng.getrandbits(8) for _ in range(DECODE_BYTES)), width)


def random_transform(rng, width):
    return MetaTransform(rng.choice(list(TransformKind)), rng.randint(0, width))


def random_range(rng, width):
    lo = rng.randrange(width)
    return lo, rng.randint(lo + 1, width)


def conserved(m):
    return sum(f.end - f.start for f in m.fragments) == m.width


def capped(m):
    return len(m.fragments) <= 6 or m == filler(m.width)


def expected(bits, cap=6):
    """The canonical run list the engine must produce for per-bit labels ``bits``."""
    return bits_runs(bits_cap(bits, cap))


def outputs(m, rng):
    """One application of every algebra operation to ``m`` and random partners."""
    w = m.width
    other = random_metadata(rng, w)
    lo, hi = random_range(rng, w)
    size = rng.randint(1, w)
    outs = [meta_slice(m, lo, hi), meta_transform(m, random_transform(rng, w)),
            meta_combine(m, other),
            meta_insert_bits(m, other, rng.randint(0, w - size), size, rng.randint(0, w - size),
                             rng.random() < 0.5)]
    if w <= 64:
        outs.append(meta_concat(m, other))
    return outs


# -- properties -------------------------------------------------------------

def prop_bit_conservation(m, rng):
    for out in outputs(m, rng):
        assert conserved(out), out


def prop_slice_concat_roundtrip(m, rng):
    k = rng.randint(1, m.width - 1)
    a = meta_slice(m, 0, k, max_fragments=None)
    b = meta_slice(m, k, m.width, max_fragments=None)
    assert meta_concat(a, b, max_fragments=None) == m


def prop_transform_identities(m, rng):
    w = m.width
    assert meta_transform(m, MetaTransform()) == m
    # shift left then right restores every bit when nothing is shifted out
    n = rng.randint(0, w)
    bits = to_bits(m)
    if all(b is None for b in bits[w - n:]):
        there = meta_transform(m, MetaTransform(TransformKind.SHIFT_LEFT, n), max_fragments=None)
        back = meta_transform(there, MetaTransform(TransformKind.SHIFT_RIGHT, n),
                              max_fragments=None)
        assert to_bits(back) == bits
    # rotating by a divisor of the width, width/n times, is the identity
    d = rng.choice([d for d in (1, 2, 4, 8, 16, 32, 64) if d <= w])
    kind = rng.choice((TransformKind.ROTATE_LEFT, TransformKind.ROTATE_RIGHT))
    out = m
    for _ in range(w // d):
        out = meta_transform(out, MetaTransform(kind, d), max_fragments=None)
    assert out == m


def prop_cap(m, rng):
    for out in outputs(m, rng):
        assert capped(out), out


def prop_oracle_equivalence(m, rng):
    w = m.width
    bits = to_bits(m)
    assert meta_reduce(m) == bits_reduce(bits)
    lo, hi = random_range(rng, w)
    assert fragment_runs(meta_slice(m, lo, hi)) == expected(bits[lo:hi])
    t = random_transform(rng, w)
    assert fragment_runs(meta_transform(m, t)) == expected(bits_transform(bits, t))
    other = random_metadata(rng, rng.choice([x for x in WIDTHS if x + w <= 128] or [w]))
    if w + other.width <= 128:
        assert fragment_runs(meta_concat(m, other)) == expected(bits + to_bits(other))
    src = random_metadata(rng)
    size = rng.randint(1, min(w, src.width))
    src_off, dst_off = rng.randint(0, src.width - size), rng.randint(0, w - size)
    clear = rng.random() < 0.5
    got = meta_insert_bits(m, src, src_off, size, dst_off, clear)
    assert fragment_runs(got) == expected(bits_insert(bits, to_bits(src), src_off, size,
                                                      dst_off, clear))
    partner = random_metadata(rng, w)
    assert fragment_runs(meta_combine(m, partner)) == expected(
        bits_combine(bits, to_bits(partner)))


PROPERTIES = {
    "bit_conservation": prop_bit_conservation,
    "slice_concat_roundtrip": prop_slice_concat_roundtrip,
    "transform_identities": prop_transform_identities,
    "cap": prop_cap,
    "oracle_equivalence": prop_oracle_equivalence,
}

PARAMS = st.randoms(use_true_random=False)
