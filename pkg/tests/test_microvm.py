from pathlib import Path

import pytest

from ptrsan.annotations import load_annotations
from ptrsan.metadata import meta_reduce
from ptrsan.microvm import (
    HEAP_BASE, INPUT_BASE, ParseError, StepLimitExceeded, parse_program, run, Run,
)
from ptrsan.ops import CreateGlobalPointer, CreateStackPointer, Return, ViolationKind
from ptrsan.semantics import UnknownInstruction

CORPUS = Path(__file__).resolve().parents[1] / "src" / "ptrsan" / "corpus"

GLOBAL_OVERFLOW = """
.entry entry_point
.global target_buffer, 0x2000, 10
entry_point:
    adrp x2, target_buffer
    add x2, x2, #:lo12:target_buffer
    mov x3, #0
loop:
    cmp x3, x0
    b.hs done
    ldrb w4, [x1, x3]
    strb w4, [x2, x3]
    add x3, x3, #1
    b loop
done:
    ret
"""
GLOBAL_DB = {"globals": [{"name": "target_buffer", "addr": "0x2000", "size": 10}]}


def fixture(name):
    d = CORPUS / name
    return parse_program((d / "program.s").read_text()), load_annotations(d / "annotations.json")


# -- parsing ----------------------------------------------------------------

def test_parse_single_instruction():
    prog = parse_program("mov x0, x1")
    assert len(prog.statements) == 1 and prog.labels == {}


def test_parse_global_directive():
    prog = parse_program(".global buf, 0x2000, 10\nret")
    assert prog.globals == [("buf", 0x2000, 10)]


def test_parse_error_carries_line():
    with pytest.raises(ParseError) as info:
        parse_program("ldr x0 [x1]")
    assert info.value.line == 1


@pytest.mark.parametrize("text,line", [
    ("a:\nret\na:\nret", 3),
    ("mov x0, x1\nfrobnicate x0", 2),
    ("mov x0, #zz", 1),
    ("ldr x0, [x1, #8", 1),
    ("b nowhere", 1),
    ("nop\n.bogus 1", 2),
])
def test_parse_errors(text, line):
    with pytest.raises(ParseError) as info:
        parse_program(text)
    assert info.value.line == line


def test_parse_grammar_forms():
    prog = parse_program("""
    ; full-line comment
    .entry start
    .bytes 0x3000, 0102 0304
    start:
        ldr x0, [x1]            ; trailing comment
        ldr x0, [x1, #8]
        ldr x0, [x1, x2]
        ldr x0, [x1, #-16]!
        ldr x0, [x1], #16
        mov x0, #0x10
        ret
    """)
    assert prog.entry == "start" and len(prog.statements) == 7
    assert prog.data == [(0x3000, bytes([1, 2, 3, 4]))]
    modes = [st.operands[1].mode for st in prog.statements[:5]]
    assert modes == ["offset", "offset", "offset", "pre", "post"]
    assert prog.statements[3].operands[1].imm_off == -16


def test_entry_must_exist():
    with pytest.raises(ParseError):
        parse_program(".entry missing\nret")


# -- running ----------------------------------------------------------------

def test_global_overflow_detected_at_eleventh_store():
    report = run(parse_program(GLOBAL_OVERFLOW), load_annotations(GLOBAL_DB), b"A" * 11)
    assert report.exit_code == 2
    bad = report.first_violation
    assert bad.kind is ViolationKind.OUT_OF_BOUNDS
    assert (bad.access_addr, bad.access_size) == (0x2000 + 10, 1)
    assert (bad.via_identity.base, bad.via_identity.length) == (0x2000, 10)


def test_global_in_bounds_is_clean():
    report = run(parse_program(GLOBAL_OVERFLOW), load_annotations(GLOBAL_DB), b"A" * 10)
    assert (report.outcome, report.exit_code, report.violations) == ("clean", 0, [])


def test_unaligned_pointer_copy_dereferences():
    prog, db = fixture("unaligned_copy")
    report = run(prog, db, b"x" * 16)
    assert report.exit_code == 0 and report.violations == []
    assert report.machine is not None


def test_determinism():
    prog, db = fixture("memcpy_vectorized")
    a = run(prog, db, b"y" * 17).to_json()
    b = run(prog, db, b"y" * 17).to_json()
    assert a == b


def test_input_has_identity():
    r = Run(parse_program("ret"), None, b"abc")
    ident = meta_reduce(r.san.reg("x1"))
    assert (ident.base, ident.length) == (INPUT_BASE, 3)
    assert r.m.regs["x0"] == 3


def test_input_overread_detected():
    prog = parse_program("ldrb w2, [x1, x0]\nret")
    assert run(prog, None, b"abc").exit_code == 2


def test_heap_identity_from_builtin_malloc():
    prog, db = fixture("heap_overflow")
    report = run(prog, db, b"z" * 17)
    bad = report.first_violation
    assert bad.via_identity.base == HEAP_BASE and bad.via_identity.length == 16


def test_step_limit():
    prog = parse_program("spin:\n    b spin")
    with pytest.raises(StepLimitExceeded):
        run(prog, None, b"", max_steps=50)


def test_sys_fail_is_a_crash():
    report = run(parse_program("sys_fail\nret"), None, b"")
    assert (report.outcome, report.exit_code) == ("crash", 1)


def test_unmapped_instruction_strict_and_permissive():
    prog = parse_program("rev x0, x1\nret")
    with pytest.raises(UnknownInstruction):
        run(prog, None, b"", strict_unknown=True)
    report = run(prog, None, b"", strict_unknown=False)
    assert report.exit_code == 0 and [m for _, m in report.unknown] == ["rev"]


def test_suppressed_function_does_not_abort():
    prog = parse_program("""
    .entry main
    .global buf, 0x2000, 4
    main:
        sub sp, sp, #16
        str x30, [sp, #8]
        bl sloppy
        ldr x30, [sp, #8]
        add sp, sp, #16
        ret
    sloppy:
        adrp x2, buf
        add x2, x2, #:lo12:buf
        str x0, [x2]
        ret
    """)
    db = {"globals": [{"name": "buf", "addr": "0x2000", "size": 4}]}
    flagged = run(prog, load_annotations(db), b"")
    assert flagged.exit_code == 2
    db["functions"] = {"sloppy": {"suppress": True}}
    quiet = run(prog, load_annotations(db), b"")
    assert quiet.exit_code == 0 and len(quiet.violations) == 1
    assert quiet.violations[0].suppressed


def test_no_abort_collects_everything():
    report = run(parse_program(GLOBAL_OVERFLOW), load_annotations(GLOBAL_DB), b"A" * 13,
                 abort=False)
    assert [v.access_addr for v in report.violations] == [0x200a, 0x200b, 0x200c]


def test_concrete_values_agree_with_created_identities():
    """At every pointer-creation site the concrete value lies within its identity."""
    checked = []
    for d in sorted(p for p in CORPUS.iterdir() if (p / "manifest.json").exists()):
        prog, db = fixture(d.name)
        pending = []

        def observe(step, pending=pending):
            for name, ident in pending:
                v = step.record.pre_regs[name]
                assert ident.base <= v <= ident.base + ident.length, (d.name, name, hex(v))
                checked.append(name)
            pending.clear()
            for op in step.ops:
                if isinstance(op, (CreateStackPointer, CreateGlobalPointer)):
                    reg = op.dst
                elif isinstance(op, Return):
                    reg = op.reg
                else:
                    continue
                ident = meta_reduce(r.san.reg(reg))
                if ident is not None:
                    pending.append((reg, ident))

        r = Run(prog, db, b"7", observer=observe)
        r.execute()
    assert len(checked) > 20


def test_every_fixture_terminates_within_default_limit():
    import json
    for d in sorted(p for p in CORPUS.iterdir() if (p / "manifest.json").exists()):
        prog, db = fixture(d.name)
        manifest = json.loads((d / "manifest.json").read_text())
        for case in manifest["cases"]:
            data = case.get("input_text", "").encode() or bytes.fromhex(case.get("input_hex", ""))
            report = run(prog, db, data)
            assert report.steps < 1_000_000
