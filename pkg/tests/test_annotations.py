import json

import pytest
from hypothesis import given, settings, strategies as st

from ptrsan.annotations import (
    AnnotationDb, AnnotationError, FunctionInfo, FrameVar, GlobalVar, dump_annotations,
    load_annotations,
)

FN = {"functions": {"0x1000": {"frame_vars": [{"sp_off": 16, "size": 10, "name": "buf"}]}}}


def test_single_global():
    db = load_annotations({"globals": [{"name": "target_buffer", "addr": "0x2000", "size": 10}]})
    assert len(db.globals) == 1
    assert db.lookup_global(0x2009).name == "target_buffer"
    assert db.lookup_global(0x200a) is None


def test_empty_document():
    db = load_annotations({})
    assert db.globals == () and db.functions == () and db.pointer_slots == ()
    assert load_annotations(None) == db


def test_overlapping_globals_rejected():
    doc = {"globals": [{"name": "a", "addr": "0x2000", "size": 8},
                       {"name": "b", "addr": "0x2005", "size": 8}]}
    with pytest.raises(AnnotationError):
        load_annotations(doc)


def test_overlapping_frame_vars_rejected():
    doc = {"functions": {"f": {"frame_vars": [{"sp_off": 0, "size": 16},
                                              {"sp_off": 8, "size": 8}]}}}
    with pytest.raises(AnnotationError):
        load_annotations(doc)


def test_slots_must_be_word_unique():
    doc = {"pointer_slots": [{"addr": "0x2000", "base": "0x3000", "length": 16},
                             {"addr": "0x2004", "base": "0x3000", "length": 16}]}
    with pytest.raises(AnnotationError):
        load_annotations(doc)


@pytest.mark.parametrize("doc", [
    {"globals": [{"name": "a", "addr": "2000", "size": 8}]},
    {"globals": [{"name": "a", "addr": "0x2000"}]},
    {"bogus": []},
    {"functions": {"f": {"malloc_like": {"size_arg": "x99"}}}},
    {"functions": {"f": {"suppress": "yes"}}},
    {"functions": []},
])
def test_schema_violations(doc):
    with pytest.raises(AnnotationError):
        load_annotations(doc)


def test_lookup_stack_var():
    db = load_annotations(FN)
    assert db.lookup_stack_var(0x1000, 16) == FrameVar(16, 10, "buf")
    assert db.lookup_stack_var(0x1000, 20) == FrameVar(16, 10, "buf")
    assert db.lookup_stack_var(0x1000, 40) is None
    assert db.lookup_stack_var(0x2000, 16) is None


def test_function_flags_and_names():
    db = load_annotations({"functions": {"alloc": {"malloc_like": {"size_arg": "x1"},
                                                   "suppress": True}}})
    bound = db.bind_symbols({"alloc": 0x4000})
    info = bound.function_at(0x4000)
    assert info.malloc_like.size_arg == "x1" and info.suppress and info.name == "alloc"
    with pytest.raises(AnnotationError):
        db.bind_symbols({})


def test_load_from_text_and_path(tmp_path):
    path = tmp_path / "a.json"
    path.write_text(json.dumps(FN))
    assert load_annotations(path) == load_annotations(json.dumps(FN)) == load_annotations(FN)


def test_round_trip():
    doc = {
        "globals": [{"name": "g", "addr": "0x2000", "size": 24}],
        "functions": {"0x1000": {"frame_vars": [{"sp_off": 8, "size": 4, "name": "v"}],
                                 "delayed_sp": True, "relaxed_reads": True},
                      "malloc": {"malloc_like": {"size_arg": "x0"}, "suppress": True}},
        "pointer_slots": [{"addr": "0x3000", "base": "0x2000", "length": 24, "name": "p"}],
    }
    db = load_annotations(doc)
    assert load_annotations(dump_annotations(db)) == db


layouts = st.lists(st.tuples(st.integers(0, 255), st.integers(1, 12)), max_size=20)


@settings(max_examples=300, deadline=None)
@given(layouts, st.lists(st.integers(0, 300), min_size=1, max_size=30))
def test_interval_index_matches_linear_scan(spans, probes):
    globals_, vars_, pos = [], [], 0
    for gap, size in spans:
        pos += gap
        globals_.append(GlobalVar(f"g{pos}", pos, size))
        vars_.append(FrameVar(pos, size))
        pos += size
    db = AnnotationDb(globals_, [FunctionInfo(0x1000, frame_vars=tuple(vars_))])
    for addr in probes:
        linear = next((g for g in globals_ if g.addr <= addr < g.addr + g.size), None)
        assert db.lookup_global(addr) == linear
        var = next((v for v in vars_ if v.sp_off <= addr < v.sp_off + v.size), None)
        assert db.lookup_stack_var(0x1000, addr) == var
        size = 1 + addr % 8
        assert db.overlaps_global(addr, size) == any(
            g.addr < addr + size and addr < g.addr + g.size for g in globals_)
