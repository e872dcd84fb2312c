"""Program context: loading exported bundles and a lightweight extractor.

The extractor is heuristic and meant for C-like sources: a function is a
top-level ``name(args) {`` whose body is closed by brace matching. Comments and
string literals are blanked before scanning so their braces and call-like
tokens are ignored.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .fsutil import atomic_write_text
from .model import ContextBundle, canonical_dumps
from .schema import MalformedDocument, ValidationResult, validate_data


class ContextError(Exception):
    pass


class ContextSchemaViolation(ContextError):
    def __init__(self, result: ValidationResult, source: str = ""):
        self.result = result
        detail = "; ".join(map(str, result.violations[:5]))
        super().__init__(f"{source or 'context'} violates the context schema: {detail}")


class ContextIOFailure(ContextError):
    pass


def load_context(path: Path | str) -> ContextBundle:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ContextIOFailure(f"cannot read context {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"context {path} is not JSON: {exc}") from exc
    result = validate_data(data, "context_bundle")
    if not result.ok:
        raise ContextSchemaViolation(result, str(path))
    return ContextBundle.from_dict(data)


def save_context(bundle: ContextBundle, path: Path | str) -> Path:
    return atomic_write_text(path, canonical_dumps(bundle.to_dict()))


_KEYWORDS = frozenset(
    """if else while for do switch case return sizeof typeof alignof _Alignof offsetof defined
    catch throw new delete static_cast dynamic_cast reinterpret_cast const_cast decltype
    __attribute__ __typeof__ __builtin_expect
    void char short int long float double signed unsigned bool const volatile struct union enum""".split()
)
_INCLUDE_RE = re.compile(r'^\s*#\s*include\s*[<"]([^>"]+)[>"]', re.MULTILINE)
_PY_IMPORT_RE = re.compile(r"^\s*(?:from\s+([\w.]+)\s+import|import\s+([\w.]+))", re.MULTILINE)
_CALL_RE = re.compile(r"\b([A-Za-z_]\w*)\s*\(")
_HEADER_RE = re.compile(r"([A-Za-z_]\w*(?:::~?[A-Za-z_]\w*)*)\s*\([^;{}]*\)\s*(?:const\s*)?(?:noexcept\s*)?$", re.S)


def blank_noise(text: str) -> str:
    """Replace comments and string/char literals with spaces, keeping newlines and offsets."""
    out = list(text)
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if text.startswith("//", i):
            j = text.find("\n", i)
            j = n if j < 0 else j
        elif text.startswith("/*", i):
            j = text.find("*/", i + 2)
            j = n if j < 0 else j + 2
        elif c in "\"'":
            j = i + 1
            while j < n and text[j] != c and text[j] != "\n":
                j += 2 if text[j] == "\\" else 1
            j = min(j + 1, n)
            # keep the quotes so the literal stays a token boundary
            for k in range(i + 1, j - 1):
                if out[k] != "\n":
                    out[k] = " "
            i = j
            continue
        elif c == "#" and (i == 0 or text[i - 1] == "\n"):
            j = text.find("\n", i)
            j = n if j < 0 else j
        else:
            i += 1
            continue
        for k in range(i, j):
            if out[k] != "\n":
                out[k] = " "
        i = j
    return "".join(out)


@dataclass(frozen=True)
class FunctionDef:
    name: str
    file: str
    start_line: int
    end_line: int
    body: tuple[str, ...]
    clean_body: tuple[str, ...]


def find_functions(text: str, file: str = "") -> list[FunctionDef]:
    clean = blank_noise(text)
    raw_lines = text.replace("\r\n", "\n").split("\n")
    clean_lines = clean.replace("\r\n", "\n").split("\n")
    found: list[FunctionDef] = []
    depth = 0
    seg_start = 0
    i = 0
    while i < len(clean):
        c = clean[i]
        if c == "{":
            if depth == 0:
                header = clean[seg_start:i]
                m = _HEADER_RE.search(header.rstrip())
                name = m.group(1).split("::")[-1] if m else None
                if name and name not in _KEYWORDS:
                    end = _match_brace(clean, i)
                    if end is not None:
                        head_start = seg_start + m.start()
                        first = clean.count("\n", 0, head_start) + 1
                        last = clean.count("\n", 0, end) + 1
                        found.append(
                            FunctionDef(
                                name=name,
                                file=file,
                                start_line=first,
                                end_line=last,
                                body=tuple(raw_lines[first - 1 : last]),
                                clean_body=tuple(clean_lines[first - 1 : last]),
                            )
                        )
                        i = end + 1
                        seg_start = i
                        continue
            depth += 1
        elif c == "}":
            depth = max(depth - 1, 0)
            if depth == 0:
                seg_start = i + 1
        elif c == ";" and depth == 0:
            seg_start = i + 1
        i += 1
    return found


def _match_brace(text: str, open_at: int) -> Optional[int]:
    depth = 0
    for j in range(open_at, len(text)):
        if text[j] == "{":
            depth += 1
        elif text[j] == "}":
            depth -= 1
            if depth == 0:
                return j
    return None


def _calls_in(fn: FunctionDef) -> list[tuple[str, int]]:
    out = []
    for offset, line in enumerate(fn.clean_body, start=1):
        for m in _CALL_RE.finditer(line):
            callee = m.group(1)
            if callee in _KEYWORDS:
                continue
            if offset == 1 and callee == fn.name:
                continue  # the definition header itself
            out.append((callee, offset))
    return out


def extract_lightweight(
    files: Sequence[str | tuple[str, str]] | Mapping[str, str],
    target: Optional[str] = None,
    project: str = "",
) -> ContextBundle:
    """Best-effort bundle from raw sources: functions, call edges, includes/imports.

    ``files`` holds source texts, ``(name, text)`` pairs, or a name -> text
    mapping. ``target`` names the function under test when it is defined here.
    Call-site lines are relative to the caller's body (line 1 is its header).
    """
    if isinstance(files, Mapping):
        items = sorted(files.items())
    else:
        items = [f if isinstance(f, tuple) else (f"file{i}", f) for i, f in enumerate(files)]
    defs: dict[str, FunctionDef] = {}
    imports: set[str] = set()
    for name, text in items:
        imports.update(_INCLUDE_RE.findall(text))
        for a, b in _PY_IMPORT_RE.findall(text):
            imports.add(a or b)
        for fn in find_functions(text, name):
            defs.setdefault(fn.name, fn)
    call_edges = set()
    externals = set()
    for fn in defs.values():
        for callee, line in _calls_in(fn):
            call_edges.add((fn.name, callee, line))
            if callee not in defs:
                externals.add(callee)
    meta = {"project": project} if project else {}
    if target:
        meta["target"] = target
    return ContextBundle(
        functions={n: tuple(enumerate(f.body, start=1)) for n, f in defs.items()},
        call_edges=tuple(call_edges),
        imports=tuple(imports),
        project_meta=meta,
        externals=tuple(externals),
        target=target if target in defs else None,
    )


SOURCE_SUFFIXES = (".c", ".h", ".cc", ".cpp", ".cxx", ".hpp", ".hh", ".py")


def extract_directory(root: Path | str, target: Optional[str] = None, project: str = "") -> ContextBundle:
    root = Path(root)
    if not root.is_dir():
        raise ContextIOFailure(f"not a readable directory: {root}")
    files = {}
    try:
        for path in sorted(root.rglob("*")):
            if path.is_file() and path.suffix.lower() in SOURCE_SUFFIXES:
                files[path.relative_to(root).as_posix()] = path.read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise ContextIOFailure(f"cannot read {root}: {exc}") from exc
    return extract_lightweight(files, target=target, project=project or root.name)


def relevant_functions(ctx: ContextBundle, focus: Iterable[str]) -> list[str]:
    """Focus functions, their callers, and their defined callees."""
    focus = set(focus)
    picked = set(f for f in focus if f in ctx.functions)
    for caller, callee, _ in ctx.call_edges:
        if callee in focus and caller in ctx.functions:
            picked.add(caller)
        if caller in focus and callee in ctx.functions:
            picked.add(callee)
    return sorted(picked)


def render_context(ctx: Optional[ContextBundle], focus: Iterable[str] = ()) -> str:
    """Plain-text rendering of the parts of ``ctx`` relevant to ``focus``."""
    if ctx is None:
        return "(no program context available)"
    focus = list(focus) or ([ctx.target] if ctx.target else [])
    names = relevant_functions(ctx, focus) if focus else sorted(ctx.functions)
    parts = []
    if ctx.project_meta:
        parts.append("Project: " + ", ".join(f"{k}={v}" for k, v in ctx.project_meta.items()))
    if ctx.imports:
        parts.append("Imports: " + ", ".join(ctx.imports))
    calls = [f"{a} -> {b} (L{n})" for a, b, n in ctx.call_edges if a in names or b in names]
    if calls:
        parts.append("Call graph:\n" + "\n".join(f"  {c}" for c in calls))
    for kind, edges in (("Data", ctx.data_edges), ("Control", ctx.control_edges)):
        shown = [f"  {a}:L{la} -> {b}:L{lb}" for (a, la), (b, lb) in edges if a in names or b in names]
        if shown:
            parts.append(f"{kind} dependencies:\n" + "\n".join(shown))
    facts = [a for a in ctx.annotations if a.func in names]
    if facts:
        parts.append(
            "Facts:\n"
            + "\n".join(f"  {a.func}:L{a.line} [{a.kind}] {a.label}".rstrip() for a in facts)
        )
    for name in names:
        body = "\n".join(f"L{n}: {t}" for n, t in ctx.functions[name])
        parts.append(f"Function {name}:\n{body}")
    return "\n\n".join(parts) if parts else "(empty program context)"
