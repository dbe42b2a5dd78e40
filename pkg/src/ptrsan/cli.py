"""Command-line front end.

``ptrsan run PROGRAM`` executes one micro-assembly program under the
sanitizer; ``ptrsan corpus [DIR]`` runs a directory of fixtures and checks
each case against its expected outcome.

Exit codes: 0 clean, 1 concrete crash (``sys_fail``) or corpus mismatch,
2 violation, 3 harness error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .annotations import AnnotationDb, AnnotationError, load_annotations
from .metadata import (
    AnnotatedOrigin, GlobalOrigin, HeapOrigin, Identity, PendingGlobalOrigin, PendingStackOrigin,
    StackOrigin,
)
from .microvm import DEFAULT_MAX_STEPS, ParseError, RunReport, VmError, parse_program, run
from .ops import FrameSummary, SanitizerError, Violation, ViolationKind
from .semantics import MalformedInstruction, UnknownInstruction

EXIT_CLEAN = 0
EXIT_MISMATCH = 1
EXIT_VIOLATION = 2
EXIT_HARNESS = 3

HARNESS_ERRORS = (ParseError, AnnotationError, VmError, SanitizerError, UnknownInstruction,
                  MalformedInstruction, OSError, ValueError)

SHIPPED_CORPUS = Path(__file__).parent / "corpus"


# ---------------------------------------------------------------------------
# Report records
# ---------------------------------------------------------------------------

def _hex(v: int) -> str:
    return f"{v:#x}"


def origin_to_record(origin) -> Optional[dict]:
    if origin is None:
        return None
    if isinstance(origin, StackOrigin):
        return {"type": "stack", "frame_pc": _hex(origin.frame_pc), "sp_off": origin.sp_off}
    if isinstance(origin, GlobalOrigin):
        return {"type": "global", "offset": _hex(origin.offset), "name": origin.name}
    if isinstance(origin, HeapOrigin):
        return {"type": "heap", "alloc_site": _hex(origin.alloc_site)}
    if isinstance(origin, AnnotatedOrigin):
        return {"type": "annotated", "name": origin.name}
    if isinstance(origin, PendingStackOrigin):
        return {"type": "pending_stack", "frame_pc": _hex(origin.frame_pc),
                "frame_end": _hex(origin.frame_end), "sp_off": origin.sp_off}
    if isinstance(origin, PendingGlobalOrigin):
        return {"type": "pending_global", "page": _hex(origin.page)}
    raise TypeError(f"unknown origin {origin!r}")


def record_to_origin(rec):
    if rec is None:
        return None
    t = rec["type"]
    if t == "stack":
        return StackOrigin(int(rec["frame_pc"], 16), rec["sp_off"])
    if t == "global":
        return GlobalOrigin(int(rec["offset"], 16), rec.get("name"))
    if t == "heap":
        return HeapOrigin(int(rec["alloc_site"], 16))
    if t == "annotated":
        return AnnotatedOrigin(rec["name"])
    if t == "pending_stack":
        return PendingStackOrigin(int(rec["frame_pc"], 16), int(rec["frame_end"], 16),
                                  rec["sp_off"])
    if t == "pending_global":
        return PendingGlobalOrigin(int(rec["page"], 16))
    raise ValueError(f"unknown origin type {t!r}")


def violation_to_record(v: Violation) -> dict:
    via = None
    if v.via_identity is not None:
        ident = v.via_identity
        via = {"base": _hex(ident.base), "length": ident.length,
               "origin": origin_to_record(ident.origin)}
    return {
        "kind": v.kind.value,
        "pc": _hex(v.pc),
        "addr": _hex(v.access_addr),
        "size": v.access_size,
        "via": via,
        "stack": [{"entry_pc": _hex(f.entry_pc), "frame_addr": _hex(f.frame_addr),
                   "frame_size": f.frame_size, "function": f.function} for f in v.stack_trace],
        "suppressed": v.suppressed,
    }


def record_to_violation(rec: dict) -> Violation:
    via = rec.get("via")
    ident = None
    if via is not None:
        ident = Identity(int(via["base"], 16), via["length"], record_to_origin(via.get("origin")))
    stack = tuple(FrameSummary(int(f["entry_pc"], 16), int(f["frame_addr"], 16), f["frame_size"],
                               f.get("function")) for f in rec.get("stack", []))
    return Violation(ViolationKind(rec["kind"]), int(rec["pc"], 16), int(rec["addr"], 16),
                     rec["size"], ident, stack, bool(rec.get("suppressed", False)))


def emit_report(violations, fmt: str = "json-lines") -> str:
    if fmt == "json-lines":
        return "".join(json.dumps(violation_to_record(v), sort_keys=True) + "\n"
                       for v in violations)
    lines = []
    for v in violations:
        tag = " (suppressed)" if v.suppressed else ""
        lines.append(v.describe() + tag)
        if v.via_identity is not None and v.via_identity.origin is not None:
            lines.append(f"    origin: {origin_to_record(v.via_identity.origin)}")
        for depth, f in enumerate(v.stack_trace):
            name = f.function or "?"
            lines.append(f"    #{depth} {name} entry {f.entry_pc:#x} frame "
                         f"[{f.frame_addr:#x}, {f.frame_addr + f.frame_size:#x})")
    return "".join(line + "\n" for line in lines)


def parse_report(text: str) -> list:
    """Inverse of ``emit_report(..., "json-lines")``."""
    return [record_to_violation(json.loads(line)) for line in text.splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# Running one program
# ---------------------------------------------------------------------------

@dataclass
class RunOptions:
    max_steps: int = DEFAULT_MAX_STEPS
    max_fragments: int = 6
    strict_unknown: bool = False
    abort: bool = True


def execute(program_text: str, db: Optional[AnnotationDb], data: bytes,
            opts: RunOptions) -> RunReport:
    prog = parse_program(program_text)
    return run(prog, db, data, opts.max_steps, max_fragments=opts.max_fragments,
               strict_unknown=opts.strict_unknown, abort=opts.abort)


def _options(args) -> RunOptions:
    return RunOptions(args.max_steps, args.max_fragments, args.strict_unknown, not args.no_abort)


def cmd_run(args) -> int:
    try:
        text = Path(args.program).read_text()
        db = load_annotations(Path(args.annotations)) if args.annotations else None
        data = Path(args.input).read_bytes() if args.input else b""
        report = execute(text, db, data, _options(args))
    except HARNESS_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_HARNESS
    body = emit_report(report.violations, args.format)
    if args.report:
        try:
            Path(args.report).write_text(emit_report(report.violations, "json-lines"))
        except OSError as e:
            print(f"error: cannot write report: {e}", file=sys.stderr)
            return EXIT_HARNESS
    if body:
        sys.stdout.write(body)
    if args.format == "human":
        extra = f", {len(report.unknown)} unknown instructions skipped" if report.unknown else ""
        print(f"{report.outcome}: {report.steps} steps, "
              f"{len(report.violations)} violations{extra}")
    return report.exit_code


# ---------------------------------------------------------------------------
# Corpus
# ---------------------------------------------------------------------------

class ManifestError(ValueError):
    pass


@dataclass
class CaseResult:
    fixture: str
    case: str
    expected_exit: int
    expected_kind: Optional[str]
    exit: int
    kind: Optional[str]
    error: Optional[str] = None

    @property
    def passed(self) -> bool:
        if self.exit != self.expected_exit:
            return False
        return self.expected_kind is None or self.kind == self.expected_kind


def _case_input(case: dict, root: Path) -> bytes:
    keys = [k for k in ("input_text", "input_hex", "input_file") if k in case]
    if len(keys) > 1:
        raise ManifestError("a case takes at most one input")
    if not keys:
        return b""
    k = keys[0]
    v = case[k]
    if not isinstance(v, str):
        raise ManifestError(f"{k} must be a string")
    if k == "input_text":
        return v.encode()
    if k == "input_hex":
        try:
            return bytes.fromhex(v)
        except ValueError:
            raise ManifestError("input_hex is not valid hex") from None
    return (root / v).read_bytes()


def load_manifest(path: Path) -> dict:
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"{path}: {e}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("program"), str):
        raise ManifestError(f"{path}: a manifest needs a 'program'")
    cases = doc.get("cases")
    if not isinstance(cases, list) or not cases:
        raise ManifestError(f"{path}: a manifest needs a non-empty 'cases' list")
    for c in cases:
        if not isinstance(c, dict) or not isinstance(c.get("expect"), dict):
            raise ManifestError(f"{path}: every case needs an 'expect' object")
        if not isinstance(c["expect"].get("exit"), int):
            raise ManifestError(f"{path}: expect.exit must be an integer")
    return doc


def run_fixture(root: Path, opts: RunOptions) -> list:
    doc = load_manifest(root / "manifest.json")
    name = doc.get("name", root.name)
    try:
        program = (root / doc["program"]).read_text()
    except OSError as e:
        raise ManifestError(f"{root}: {e}") from None
    default_ann = doc.get("annotations")
    results = []
    for i, case in enumerate(doc["cases"]):
        cname = case.get("name", f"case{i}")
        ann = case.get("annotations", default_ann)
        expect = case["expect"]
        case_opts = RunOptions(opts.max_steps, opts.max_fragments,
                               case.get("strict_unknown", opts.strict_unknown), opts.abort)
        try:
            db = load_annotations(root / ann) if ann else None
            data = _case_input(case, root)
            report = execute(program, db, data, case_opts)
            first = report.first_violation
            res = CaseResult(name, cname, expect["exit"], expect.get("kind"), report.exit_code,
                             first.kind.value if first else None)
        except ManifestError:
            raise
        except HARNESS_ERRORS as e:
            res = CaseResult(name, cname, expect["exit"], expect.get("kind"), EXIT_HARNESS, None,
                             str(e))
        results.append(res)
    return results


def fixture_dirs(directory: Path) -> list:
    return sorted(p for p in directory.iterdir() if (p / "manifest.json").is_file())


def cmd_corpus(args) -> int:
    directory = Path(args.dir) if args.dir else SHIPPED_CORPUS
    if not directory.is_dir():
        print(f"error: {directory} is not a directory", file=sys.stderr)
        return EXIT_HARNESS
    opts = RunOptions(args.max_steps, args.max_fragments, True, True)
    dirs = fixture_dirs(directory)
    if not dirs:
        print(f"warning: no fixtures found in {directory}", file=sys.stderr)
        return EXIT_CLEAN
    failed = 0
    total = 0
    try:
        for d in dirs:
            for r in run_fixture(d, opts):
                total += 1
                status = "PASS" if r.passed else "FAIL"
                failed += not r.passed
                detail = f"exit {r.exit}" + (f" {r.kind}" if r.kind else "")
                want = f"exit {r.expected_exit}" + (f" {r.expected_kind}" if r.expected_kind else "")
                line = f"{status} {r.fixture}/{r.case}: {detail}"
                if not r.passed:
                    line += f" (expected {want})"
                if r.error:
                    line += f" [{r.error}]"
                print(line)
    except ManifestError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_HARNESS
    print(f"{total - failed}/{total} cases passed")
    return EXIT_CLEAN if failed == 0 else EXIT_MISMATCH


# ---------------------------------------------------------------------------

def _common(p):
    p.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS)
    p.add_argument("--max-fragments", type=int, default=6)


class _Parser(argparse.ArgumentParser):
    """Usage errors exit 3: status 2 is reserved for detected violations."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_HARNESS, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ptrsan", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one program under the sanitizer")
    r.add_argument("program")
    r.add_argument("--annotations", help="annotation document (JSON)")
    r.add_argument("--input", help="file whose bytes are passed to the entry point")
    r.add_argument("--report", help="also write json-lines records here")
    r.add_argument("--format", choices=("human", "json-lines"), default="human")
    _common(r)
    r.add_argument("--strict-unknown", action="store_true",
                   help="fail on instructions without a sanitizer mapping")
    r.add_argument("--no-abort", action="store_true", help="collect all violations")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("corpus", help="run a fixture corpus")
    c.add_argument("dir", nargs="?", help="fixture directory (default: the shipped corpus)")
    _common(c)
    c.set_defaults(func=cmd_corpus)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.max_steps <= 0 or args.max_fragments <= 0:
        print("error: --max-steps and --max-fragments must be positive", file=sys.stderr)
        return EXIT_HARNESS
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
