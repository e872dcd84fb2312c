"""Line numbering of function source and its inverse."""

from __future__ import annotations

from .model import CodeSample, NumberedFunction


class EmptySource(ValueError):
    pass


class NumberingGap(ValueError):
    pass


def normalize_source(source: str) -> str:
    """CRLF becomes LF and a single trailing newline is dropped."""
    text = source.replace("\r\n", "\n")
    return text[:-1] if text.endswith("\n") else text


def split_lines(source: str) -> list[str]:
    # no str.splitlines(): it also breaks on \v, \f, \x1c.. which are legal inside C source lines
    return normalize_source(source).split("\n")


def number_lines(sample: CodeSample | str, sample_id: str | None = None) -> NumberedFunction:
    if isinstance(sample, CodeSample):
        source, sid = sample.source, sample.id
    else:
        source, sid = sample, sample_id or ""
    if not source:
        raise EmptySource(f"sample {sid!r} has empty source")
    return NumberedFunction(sample_id=sid, lines=tuple(enumerate(split_lines(source), start=1)))


def strip_numbers(numbered: NumberedFunction) -> str:
    for expected, (line_no, _) in enumerate(numbered.lines, start=1):
        if line_no != expected:
            raise NumberingGap(f"expected line {expected}, found {line_no}")
    return "\n".join(text for _, text in numbered.lines)


def render(numbered: NumberedFunction) -> str:
    """``L<k>: <text>`` per line, the format every prompt receives."""
    return numbered.render()
