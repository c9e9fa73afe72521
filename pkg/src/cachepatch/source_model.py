"""Rosters of mutable source lines and line-level patches over them.

A roster is the immutable, indexed view of the target program that the
search mutates: every surviving line is an independently addressable slot.
Patches are ordered lists of edits expressed in *original* coordinates, so
edits never shift each other and each edit can be removed independently
(which is what makes patch minification well defined).

All types are immutable values; every operation here is a pure function.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

__all__ = [
    "StripPolicy",
    "SourceFile",
    "SourceRoster",
    "EditKind",
    "Edit",
    "Patch",
    "IngestError",
    "PatchParseError",
    "PatchApplicationError",
    "ingest_source",
    "roster_from_texts",
    "apply_patch",
    "parse_patch",
    "format_patch",
]


class IngestError(ValueError):
    pass


class PatchParseError(ValueError):
    pass


class PatchApplicationError(ValueError):
    pass


class StripPolicy(str, Enum):
    NONE = "none"
    COMMENTS_AND_BLANK = "comments_and_blank"


# Full-line comments only: //...  #...  /* ... */ closed on the same line.
_COMMENT_RE = re.compile(r"^\s*(//.*|#.*|/\*.*?\*/\s*)$")


def _strippable(line: str) -> bool:
    return not line.strip() or _COMMENT_RE.match(line) is not None


@dataclass(frozen=True)
class SourceFile:
    name: str
    lines: tuple[str, ...]
    trailing_newline: bool = True

    def serialize(self) -> str:
        if not self.lines:
            return ""
        return "\n".join(self.lines) + ("\n" if self.trailing_newline else "")


@dataclass(frozen=True)
class SourceRoster:
    """Target program as ordered files of mutable lines.

    With comment/blank stripping enabled the stripped lines are removed
    from the roster entirely, so patch coordinates always address the
    surviving lines (1-based in the text form, 0-based internally).
    """

    files: tuple[SourceFile, ...]
    strip_policy: StripPolicy = StripPolicy.NONE

    @property
    def mutable_points(self) -> tuple[tuple[int, int], ...]:
        return tuple(
            (fi, li) for fi, f in enumerate(self.files) for li in range(len(f.lines))
        )

    def line_text(self, point: tuple[int, int]) -> str:
        fi, li = point
        return self.files[fi].lines[li]

    def has_point(self, point) -> bool:
        fi, li = point
        return 0 <= fi < len(self.files) and 0 <= li < len(self.files[fi].lines)

    def file_index(self, name: str) -> int:
        for fi, f in enumerate(self.files):
            if f.name == name:
                return fi
        raise KeyError(name)

    def serialize(self) -> list[tuple[str, str]]:
        return [(f.name, f.serialize()) for f in self.files]


def _split_text(text: str) -> tuple[tuple[str, ...], bool]:
    if text == "":
        return (), False
    normalized = text.replace("\r\n", "\n")
    parts = normalized.split("\n")
    if parts[-1] == "":
        return tuple(parts[:-1]), True
    return tuple(parts), False


def roster_from_texts(named_texts, strip_policy: StripPolicy = StripPolicy.NONE) -> SourceRoster:
    """Build a roster from in-memory (name, text) pairs."""
    files = []
    for name, text in named_texts:
        lines, trailing = _split_text(text)
        if strip_policy is StripPolicy.COMMENTS_AND_BLANK:
            lines = tuple(line for line in lines if not _strippable(line))
            trailing = True if lines else trailing
        files.append(SourceFile(name=name, lines=lines, trailing_newline=trailing))
    roster = SourceRoster(files=tuple(files), strip_policy=strip_policy)
    if not roster.mutable_points:
        raise IngestError("roster has no mutable lines; search would be vacuous")
    return roster


def ingest_source(paths, strip_policy: StripPolicy = StripPolicy.NONE) -> SourceRoster:
    """Read UTF-8 text files (LF or CRLF) into a roster. With strip policy
    ``none`` re-serializing an unpatched roster reproduces the normalized
    input byte for byte."""
    named_texts = []
    for path in paths:
        p = Path(path)
        try:
            text = p.read_bytes().decode("utf-8")
        except OSError as exc:
            raise IngestError(f"cannot read source file {p}: {exc}") from exc
        except UnicodeDecodeError as exc:
            raise IngestError(f"source file {p} is not valid UTF-8: {exc}") from exc
        named_texts.append((p.name, text))
    return roster_from_texts(named_texts, strip_policy)


class EditKind(str, Enum):
    DELETION = "Deletion"
    INSERTION = "Insertion"
    REPLACEMENT = "Replacement"


@dataclass(frozen=True)
class Edit:
    """One line-level edit in original coordinates.

    Deletion removes the target slot. Insertion places a copy of the
    source line immediately before the target slot. Replacement rewrites
    the target slot with a copy of the source line. Sources always name an
    existing roster line; there is no free-text insertion.
    """

    kind: EditKind
    target: tuple[int, int]
    source: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind is EditKind.DELETION:
            if self.source is not None:
                raise ValueError("Deletion takes no source line")
        elif self.source is None:
            raise ValueError(f"{self.kind.value} requires a source line")


@dataclass(frozen=True)
class Patch:
    edits: tuple[Edit, ...] = ()

    @classmethod
    def empty(cls) -> "Patch":
        return cls(())

    def __len__(self) -> int:
        return len(self.edits)

    def __iter__(self):
        return iter(self.edits)


def _check_edit(roster: SourceRoster, edit: Edit) -> None:
    if not roster.has_point(edit.target):
        raise PatchApplicationError(f"edit targets missing line: {_describe(edit)}")
    if edit.source is not None and not roster.has_point(edit.source):
        raise PatchApplicationError(f"edit copies missing line: {_describe(edit)}")


def _describe(edit: Edit) -> str:
    if edit.source is None:
        return f"{edit.kind.value} {edit.target}"
    return f"{edit.kind.value} {edit.target} <- {edit.source}"


def apply_patch(roster: SourceRoster, patch: Patch) -> list[tuple[str, str]]:
    """Apply a patch and return the patched text per file.

    Every edit is interpreted against original coordinates, so later edits
    never shift earlier ones. For one target slot the last Deletion or
    Replacement in patch order wins; insertions at the same anchor appear
    in patch order, before whatever the slot itself contributes.
    """
    for edit in patch:
        _check_edit(roster, edit)

    slot_ops: dict[tuple[int, int], Edit] = {}
    inserts: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for edit in patch:
        if edit.kind is EditKind.INSERTION:
            inserts.setdefault(edit.target, []).append(edit.source)
        else:
            slot_ops[edit.target] = edit

    output = []
    for fi, f in enumerate(roster.files):
        out_lines: list[str] = []
        for li, line in enumerate(f.lines):
            for source in inserts.get((fi, li), ()):
                out_lines.append(roster.line_text(source))
            op = slot_ops.get((fi, li))
            if op is None:
                out_lines.append(line)
            elif op.kind is EditKind.REPLACEMENT:
                out_lines.append(roster.line_text(op.source))
            # Deletion: the slot contributes nothing.
        trailing = f.trailing_newline or not f.lines
        text = "\n".join(out_lines) + ("\n" if out_lines and trailing else "")
        if not out_lines:
            text = ""
        output.append((f.name, text))
    return output


# --- text form ---------------------------------------------------------------
#
# Comma-separated items, 1-based line numbers, optional file prefix:
#   Deletion 254
#   Insertion before 102 of 105
#   Replacement 63 <- 12
#   Deletion util.c:7          (multi-file rosters)

_LOC = r"(?:([^\s:,]+):)?(\d+)"
_DELETION_RE = re.compile(rf"^Deletion\s+{_LOC}$")
_INSERTION_RE = re.compile(rf"^Insertion\s+before\s+{_LOC}\s+of\s+{_LOC}$")
_REPLACEMENT_RE = re.compile(rf"^Replacement\s+{_LOC}\s*<-\s*{_LOC}$")


def _resolve(roster: SourceRoster, file_name: str | None, number: str,
             item_index: int) -> tuple[int, int]:
    if file_name is None:
        if len(roster.files) != 1:
            raise PatchParseError(
                f"item {item_index}: file prefix required for multi-file roster")
        fi = 0
    else:
        try:
            fi = roster.file_index(file_name)
        except KeyError:
            raise PatchParseError(
                f"item {item_index}: unknown file name {file_name!r}") from None
    li = int(number) - 1
    if not roster.has_point((fi, li)):
        raise PatchParseError(
            f"item {item_index}: line {number} out of range for "
            f"{roster.files[fi].name!r}")
    return (fi, li)


def parse_patch(text: str, roster: SourceRoster) -> Patch:
    """Parse the canonical patch text form against a roster."""
    if not text.strip():
        return Patch.empty()
    edits = []
    for index, item in enumerate(text.split(","), start=1):
        item = item.strip()
        if not item:
            raise PatchParseError(f"item {index}: empty patch item")
        if (m := _DELETION_RE.match(item)) is not None:
            target = _resolve(roster, m.group(1), m.group(2), index)
            edits.append(Edit(EditKind.DELETION, target))
        elif (m := _INSERTION_RE.match(item)) is not None:
            target = _resolve(roster, m.group(1), m.group(2), index)
            source = _resolve(roster, m.group(3), m.group(4), index)
            edits.append(Edit(EditKind.INSERTION, target, source))
        elif (m := _REPLACEMENT_RE.match(item)) is not None:
            target = _resolve(roster, m.group(1), m.group(2), index)
            source = _resolve(roster, m.group(3), m.group(4), index)
            edits.append(Edit(EditKind.REPLACEMENT, target, source))
        else:
            raise PatchParseError(f"item {index}: malformed patch item {item!r}")
    return Patch(tuple(edits))


def format_patch(patch: Patch, roster: SourceRoster) -> str:
    """Canonical text form; round-trips through parse_patch."""
    single = len(roster.files) == 1

    def loc(point: tuple[int, int]) -> str:
        fi, li = point
        if single:
            return str(li + 1)
        name = roster.files[fi].name
        if ":" in name or "," in name or any(c.isspace() for c in name):
            raise ValueError(f"file name {name!r} cannot appear in patch text")
        return f"{name}:{li + 1}"

    items = []
    for edit in patch:
        if edit.kind is EditKind.DELETION:
            items.append(f"Deletion {loc(edit.target)}")
        elif edit.kind is EditKind.INSERTION:
            items.append(f"Insertion before {loc(edit.target)} of {loc(edit.source)}")
        else:
            items.append(f"Replacement {loc(edit.target)} <- {loc(edit.source)}")
    return ", ".join(items)
