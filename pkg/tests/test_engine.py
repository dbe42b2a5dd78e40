import time

import pytest
from hypothesis import given, settings, strategies as st

from ptrsan.annotations import load_annotations
from ptrsan.engine import SanitizerState, engine_init
from ptrsan.metadata import (
    Fragment, Identity, MetaTransform, ValueMetadata, filler, meta_pointer, meta_reduce,
)
from ptrsan.ops import (
    READ, WRITE, Access, AccessKind, Clear, Combine, Copy, CreateGlobalPointer,
    CreateStackPointer, FunctionCall, Return, SanitizerError, StackChange, ViolationKind,
)

from ptrsan.oracle import count_runs, to_bits

import props

A = Identity(0xff10, 0x10)
FRAME_FN = {"functions": {"0x1000": {"frame_vars": [{"sp_off": 0x10, "size": 10}]}}}


def v(width, *frags):
    return ValueMetadata(width, [Fragment(*f) for f in frags])


def worked_state():
    state = engine_init(initial_sp=0x10000, entry_pc=0x1000)
    state.seed_register("x3", meta_pointer(A))
    return state


WORKED = [Copy("x3", "x0"), Access(WRITE, 0xff18, "x0", "x1", 8),
          Access(WRITE, 0xff20, "x0", "x1", 8)]


def test_worked_example_exact():
    start = time.perf_counter()
    state = worked_state()
    results = [state.apply(op, pc=0x100 + 4 * i) for i, op in enumerate(WORKED)]
    assert results[0] is None and results[1] is None
    bad = results[2]
    assert bad.kind is ViolationKind.OUT_OF_BOUNDS
    assert (bad.pc, bad.access_addr, bad.access_size) == (0x108, 0xff20, 8)
    assert bad.via_identity == A
    assert state.reg("x0") == meta_pointer(A)
    assert time.perf_counter() - start < 1.0


# -- init -------------------------------------------------------------------

def test_init_empty():
    state = engine_init(initial_sp=0x10000)
    assert len(state.stack) == 1
    assert all(m.is_filler for r, m in state.regs.items() if r != "sp")
    assert state.reg_is_pointer("sp")


def test_init_seeds_pointer_slots():
    db = load_annotations({"pointer_slots": [{"addr": "0x2000", "base": "0x3000", "length": 16}]})
    state = engine_init(db, initial_sp=0x10000)
    ident = meta_reduce(state.memory[0x2000])
    assert (ident.base, ident.length) == (0x3000, 16)
    assert meta_reduce(state.read_memory_meta(0x2000, 8)) == ident


# -- apply ------------------------------------------------------------------

def test_copy_clear_combine():
    state = worked_state()
    state.apply(Copy("x3", "x0"))
    assert state.reg("x0") == meta_pointer(A)
    state.apply(Combine("x0", "x5", "x6"))
    assert meta_reduce(state.reg("x6")) == A
    state.apply(Combine("x0", "x3", "x7"))
    assert state.reg("x7").is_filler
    state.apply(Copy("x0", "x8", MetaTransform.shift_right(32)))
    assert state.reg("x8") == v(64, (32, 64, A), (0, 32))
    state.apply(Clear("x0"))
    assert state.reg("x0").is_filler
    state.apply(Clear("xzr"))


def test_write_stores_register_metadata():
    state = worked_state()
    state.apply(Copy("x3", "x1"))
    assert state.apply(Access(WRITE, 0xff18, "x3", "x1", 8)) is None
    assert state.memory[0xff18] == meta_pointer(A)
    state.apply(Access(READ, 0xff18, "x3", "x9", 8))
    assert state.reg("x9") == meta_pointer(A)


def test_malformed_ops_are_harness_errors():
    state = worked_state()
    with pytest.raises(SanitizerError):
        state.apply(Access(READ, 0xff10, "x3", "x1", 3))
    with pytest.raises(SanitizerError):
        state.apply(Access(READ, 0xff10, "x3", "x1", 16))
    with pytest.raises(SanitizerError):
        state.apply(Copy("q0", "x1"))
    with pytest.raises(SanitizerError):
        state.apply(Copy("x99", "x1"))
    with pytest.raises(SanitizerError):
        state.apply("not an op")
    empty = SanitizerState()
    with pytest.raises(SanitizerError):
        empty.apply(Return("x0", 0))


# -- check_access -----------------------------------------------------------

def test_check_access_examples():
    db = load_annotations({"globals": [{"name": "g", "addr": "0x2000", "size": 16}],
                           "functions": {"0x1000": {"relaxed_reads": True}}})
    state = engine_init(db, initial_sp=0x10000, entry_pc=0x1000)
    frame = state.top
    assert state.check_access(A, 0xff18, 8, READ, frame) is None
    # a read starting at the end would end 8 bytes past the object: outside the window
    assert state.check_access(A, 0xff20, 8, READ, frame).kind is ViolationKind.OUT_OF_BOUNDS
    assert state.check_access(A, 0xff20, 8, WRITE, frame).kind is ViolationKind.OUT_OF_BOUNDS
    assert state.check_access(A, 0xff1c, 8, READ, frame).kind is ViolationKind.OUT_OF_BOUNDS
    wide = Identity(0xff10, 0x11)
    assert state.check_access(wide, 0xff20, 8, READ, frame) is None
    assert state.check_access(wide, 0xff20, 8, WRITE, frame) is not None
    hit = state.check_access(None, 0x2004, 4, WRITE, frame)
    assert hit.kind is ViolationKind.UNTRACKED_POINTER
    assert state.check_access(None, 0x5000, 8, WRITE, frame) is None


def test_relaxed_window_bounds():
    db = load_annotations({"functions": {"0x1000": {"relaxed_reads": True}}})
    state = engine_init(db, initial_sp=0x10000, entry_pc=0x1000)
    s = Identity(0x2000, 12)
    frame = state.top
    # aligned reads starting inside the object may end up to 7 bytes past it
    assert state.check_access(s, 0x2008, 8, READ, frame) is None
    assert state.check_access(s, 0x2008, 4, READ, frame) is None
    assert state.check_access(s, 0x200c, 4, READ, frame) is not None
    assert state.check_access(Identity(0x2000, 9), 0x2008, 8, READ, frame) is None
    assert state.check_access(Identity(0x2000, 8), 0x2008, 8, READ, frame) is not None
    unrelaxed = engine_init(initial_sp=0x10000, entry_pc=0x1000)
    assert unrelaxed.check_access(s, 0x2008, 8, READ, unrelaxed.top) is not None


def test_untracked_pointer_into_tracked_words():
    state = worked_state()
    state.apply(Access(WRITE, 0xff18, "x3", "x3", 8))
    hit = state.apply(Access(READ, 0xff1c, "x5", "x6", 4))
    assert hit.kind is ViolationKind.UNTRACKED_POINTER
    assert state.apply(Access(READ, 0xff08, "x5", "x6", 8)) is None


# -- memory metadata --------------------------------------------------------

def test_memory_read_examples():
    state = worked_state()
    state.write_memory_meta(0xff18, meta_pointer(A))
    assert state.read_memory_meta(0xff18, 8) == meta_pointer(A)
    assert state.read_memory_meta(0xff1c, 8) == v(64, (32, 64, A), (0, 32))
    assert state.read_memory_meta(0x5000, 4) == filler(32)


def test_memory_write_examples():
    state = worked_state()
    state.write_memory_meta(0xff18, meta_pointer(A))
    assert state.memory == {0xff18: meta_pointer(A)}
    other = Identity(0x3000, 8)
    state.write_memory_meta(0xff18, meta_pointer(other))
    state.write_memory_meta(0xff1c, meta_pointer(A))
    assert state.memory[0xff18] == v(64, (0, 32, other), (0, 32, A))
    assert state.memory[0xff20] == v(64, (32, 64, A), (0, 32))
    state.write_memory_meta(0xff18, filler(64))
    state.write_memory_meta(0xff20, filler(64))
    assert state.memory == {}


@settings(max_examples=400, deadline=None)
@given(props.metadata(), st.integers(0, 7))
def test_memory_round_trip(m, align):
    state = SanitizerState()
    addr = 0x4000 + align
    state.write_memory_meta(addr, m)
    assert all(w % 8 == 0 and not x.is_filler for w, x in state.memory.items())
    # each touched word holds its old filler around the written bytes
    bits = (None,) * (align * 8) + to_bits(m)
    bits += (None,) * (-len(bits) % 64)
    words = [bits[i:i + 64] for i in range(0, len(bits), 64)]
    if all(count_runs(w) <= 6 for w in words):
        assert state.read_memory_meta(addr, m.width // 8) == m
    else:
        for i, w in enumerate(words):
            if count_runs(w) > 6:
                assert 0x4000 + 8 * i not in state.memory


# -- stack pointers ---------------------------------------------------------

def frame_state(doc=FRAME_FN):
    return engine_init(load_annotations(doc), initial_sp=0xff00, entry_pc=0x1000,
                       root_size=0x40)


def test_create_stack_pointer_annotated_var():
    state = frame_state()
    state.apply(CreateStackPointer(0x1004, 0x10, 0xff00, "x2"))
    ident = meta_reduce(state.reg("x2"))
    assert (ident.base, ident.length) == (0xff10, 10)
    state.apply(CreateStackPointer(0x1004, 0x14, 0xff00, "x2"))
    assert meta_reduce(state.reg("x2")).base == 0xff10


def test_create_stack_pointer_whole_frame_fallback():
    state = frame_state({})
    state.apply(CreateStackPointer(0x1004, 0x10, 0xff00, "x2"))
    ident = meta_reduce(state.reg("x2"))
    assert (ident.base, ident.length) == (0xff00, 0x40)


def delayed_state(flag=True):
    doc = {"functions": {"0x1000": {"delayed_sp": flag,
                                    "frame_vars": [{"sp_off": 0x1018, "size": 0x10},
                                                   {"sp_off": 0x10, "size": 0x1000}]}}}
    return engine_init(load_annotations(doc), initial_sp=0xe000, entry_pc=0x1000,
                       root_size=0x2000)


def test_delayed_identity_resolves_at_first_access():
    state = delayed_state()
    state.apply(CreateStackPointer(0x1004, 0x1000, 0xe000, "x2"))
    state.apply(Copy("x2", "x2"))  # add x2, x2, #0x20
    assert state.apply(Access(WRITE, 0xf020, "x2", "x1", 8)) is None
    ident = meta_reduce(state.reg("x2"))
    assert (ident.base, ident.length) == (0xf018, 0x10)
    assert state.apply(Access(WRITE, 0xf028, "x2", "x1", 8)).kind is ViolationKind.OUT_OF_BOUNDS


def test_eager_identity_misattributes_large_offsets():
    state = delayed_state(flag=False)
    state.apply(CreateStackPointer(0x1004, 0x1000, 0xe000, "x2"))
    state.apply(Copy("x2", "x2"))
    assert state.apply(Access(WRITE, 0xf020, "x2", "x1", 8)) is not None


def test_4095_trigger_enables_delayed_mode():
    state = delayed_state(flag=False)
    state.apply(CreateStackPointer(0x1004, 4095, 0xe000, "x2"))
    assert state.top.delayed_sp
    state.apply(Copy("x2", "x2"))  # add x2, x2, #0x21
    assert state.apply(Access(WRITE, 0xf020, "x2", "x1", 8)) is None
    # later frames of the same function start out delayed
    state.apply(FunctionCall(0xe000, 0x1000, 0))
    assert state.top.delayed_sp


def test_delayed_pointer_never_used_expires():
    state = delayed_state()
    state.apply(FunctionCall(0xe000, 0x1000, 0))
    state.apply(StackChange(-0x2000, 0xc000))
    state.apply(CreateStackPointer(0x1004, 0x1000, 0xc000, "x2"))
    state.apply(StackChange(0x2000, 0xe000))
    state.apply(Return("x0", 0))
    assert state.apply(Access(WRITE, 0xd020, "x2", "x1", 8)) is None


def test_global_pointer_binds_at_add():
    db = load_annotations({"globals": [{"name": "a", "addr": "0x2000", "size": 16},
                                       {"name": "b", "addr": "0x2020", "size": 8}]})
    state = engine_init(db, initial_sp=0x10000)
    state.apply(CreateGlobalPointer(0, 0x2000, "x1"))
    state.apply(CreateGlobalPointer(0, 0x2020, "x2"))
    assert meta_reduce(state.reg("x2")).base == 0x2020
    assert state.apply(Access(WRITE, 0x2028, "x2", "x0", 1)) is not None
    # a bare page pointer binds to whatever global its first access hits
    assert state.apply(Access(READ, 0x2020, "x1", "x0", 8)) is None
    assert meta_reduce(state.reg("x1")).base == 0x2020


def test_page_pointer_falls_back_to_page_start_global():
    db = load_annotations({"globals": [{"name": "a", "addr": "0x2000", "size": 16}]})
    state = engine_init(db, initial_sp=0x10000)
    state.apply(CreateGlobalPointer(0, 0x2000, "x1"))
    assert state.apply(Access(WRITE, 0x2010, "x1", "x0", 1)).kind is ViolationKind.OUT_OF_BOUNDS


# -- stack changes, calls, returns ------------------------------------------

def call_state():
    state = engine_init(initial_sp=0x10000, entry_pc=0x1000, root_size=0x40)
    state.apply(FunctionCall(0x10000, 0x1100, 0))
    return state


def test_prologue_binds_new_frame():
    state = call_state()
    state.apply(StackChange(-0x40, 0xffc0))
    assert len(state.stack) == 2
    assert (state.top.frame_addr, state.top.frame_size, state.top.entry_pc) == (0xffc0, 0x40, 0x1100)


def test_sp_spans_two_topmost_frames():
    state = call_state()
    state.apply(StackChange(-0x40, 0xffc0))
    ident = meta_reduce(state.reg("sp"))
    under = state.stack[-2]
    assert (ident.base, ident.end) == (0xffc0, under.end)
    assert state.apply(Access(READ, 0x10008, "sp", "x0", 8)) is None
    assert state.apply(Access(READ, 0x10040, "sp", "x0", 8)) is not None


def test_mid_function_growth():
    state = call_state()
    state.apply(StackChange(-0x40, 0xffc0))
    state.apply(StackChange(-0x20, 0xffa0))
    assert (len(state.stack), state.top.frame_size) == (2, 0x60)


def test_unwinding_past_frames_pops_them():
    state = call_state()
    state.apply(StackChange(-0x40, 0xffc0))
    state.apply(FunctionCall(0xffc0, 0x1200, 0))
    state.apply(StackChange(-0x20, 0xffa0))
    assert len(state.stack) == 3
    state.apply(StackChange(0x60, 0x10000))
    assert len(state.stack) == 1 + 1 and state.top.entry_pc == 0x1100


def test_epilogue_then_return_pops_once():
    state = call_state()
    state.apply(StackChange(-0x40, 0xffc0))
    state.apply(StackChange(0x40, 0x10000))
    assert len(state.stack) == 2
    state.apply(Return("x0", 0))
    assert len(state.stack) == 1


def test_malloc_like_return_mints_heap_identity():
    db = load_annotations({"functions": {"0x1100": {"malloc_like": {"size_arg": "x0"}}}})
    state = engine_init(db, initial_sp=0x10000, entry_pc=0x1000)
    state.apply(FunctionCall(0x10000, 0x1100, 32))
    assert state.top.is_malloc_like and state.top.malloc_request == 32
    state.apply(Return("x0", 0x8000))
    ident = meta_reduce(state.reg("x0"))
    assert (ident.base, ident.length) == (0x8000, 32)


def test_ordinary_return_keeps_register():
    state = call_state()
    state.seed_register("x0", meta_pointer(A))
    state.apply(Return("x0", 0xff10))
    assert state.reg("x0") == meta_pointer(A)


def test_return_discards_frame_metadata():
    state = call_state()
    state.apply(StackChange(-0x40, 0xffc0))
    state.seed_register("x3", meta_pointer(A))
    state.apply(Access(WRITE, 0xffd0, "sp", "x3", 8))
    assert 0xffd0 in state.memory
    state.apply(StackChange(0x40, 0x10000))
    state.apply(Return("x0", 0))
    assert not any(0xffc0 <= w < 0x10000 for w in state.memory)
    state.apply(Access(READ, 0xffd0, "x3", "x4", 8))
    assert state.reg("x4").is_filler


def test_tail_call_replaces_frame():
    state = call_state()
    state.apply(FunctionCall(0x10000, 0x1200, 0, tail=True))
    assert len(state.stack) == 2 and state.top.entry_pc == 0x1200


def test_suppressed_frames_mark_violations():
    db = load_annotations({"functions": {"0x1100": {"suppress": True}}})
    state = engine_init(db, initial_sp=0x10000, entry_pc=0x1000)
    state.seed_register("x3", meta_pointer(A))
    state.apply(FunctionCall(0x10000, 0x1100, 0))
    state.apply(FunctionCall(0x10000, 0x1200, 0))
    hit = state.apply(Access(WRITE, 0xff20, "x3", "x1", 8))
    assert hit.suppressed
    assert [f.entry_pc for f in hit.stack_trace] == [0x1200, 0x1100, 0x1000]
    state.apply(Return("x0", 0))
    state.apply(Return("x0", 0))
    assert not state.apply(Access(WRITE, 0xff20, "x3", "x1", 8)).suppressed


def test_reg_is_pointer():
    state = worked_state()
    assert state.reg_is_pointer("x3")
    state.seed_register("x4", v(64, (0, 32, A), (0, 32)))
    assert not state.reg_is_pointer("x4")
    assert state.reg_is_pointer("sp")


def test_clone_is_independent():
    state = worked_state()
    twin = state.clone()
    twin.apply(Clear("x3"))
    twin.apply(FunctionCall(0x10000, 0x1100, 0))
    assert state.reg_is_pointer("x3") and len(state.stack) == 1
    assert twin.apply(Access(WRITE, 0xff20, "x3", "x1", 8)) is None
    assert state.apply(Access(WRITE, 0xff20, "x3", "x1", 8)) is not None
