"""SVC2004 ink files: parsing, stroke segmentation and corpus loading.

An SVC2004 file holds a decimal point count on its first line followed by one
line per point, ``X Y TIMESTAMP BUTTON`` (task 1) or
``X Y TIMESTAMP BUTTON AZIMUTH ALTITUDE PRESSURE`` (task 2).  BUTTON is 1
while the pen touches the tablet and 0 when it lifts.
"""
from __future__ import annotations

import enum
import logging
import os
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

logger = logging.getLogger(__name__)

FILENAME_RE = re.compile(r"^U(\d+)S(\d+)\.txt$", re.IGNORECASE)
GENUINE_SAMPLES = 20


class InkFormatError(ValueError):
    """Base class for malformed ink files."""


class MalformedHeader(InkFormatError):
    pass


class ColumnCountMismatch(InkFormatError):
    pass


class PointCountMismatch(InkFormatError):
    pass


class MalformedLine(InkFormatError):
    pass


class EmptyInput(ValueError):
    pass


class NoFilesFound(FileNotFoundError):
    pass


class CorpusError(ValueError):
    """A file in a corpus directory failed to parse; ``filename`` names it."""

    def __init__(self, filename: str, cause: Exception):
        super().__init__(f"{filename}: {cause}")
        self.filename = filename
        self.cause = cause


class Pen(enum.IntEnum):
    UP = 0
    DOWN = 1


class Label(enum.IntEnum):
    FORGERY = 0
    GENUINE = 1


class StrokePoint(NamedTuple):
    x: int
    y: int
    t: int
    pen: Pen
    aux: tuple[int, int, int] | None = None


@dataclass(frozen=True)
class Stroke:
    points: tuple[StrokePoint, ...]

    def __post_init__(self):
        if not self.points:
            raise EmptyInput("a stroke needs at least one point")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class SignatureInstance:
    strokes: tuple[Stroke, ...]
    writer_id: int = 0
    sample_index: int = 0
    label: Label = Label.GENUINE

    def __post_init__(self):
        if not self.strokes:
            raise EmptyInput("a signature needs at least one stroke")

    @property
    def points(self) -> list[StrokePoint]:
        return [p for s in self.strokes for p in s.points]

    @property
    def key(self) -> str:
        return f"U{self.writer_id}S{self.sample_index}"


@dataclass
class Corpus:
    instances: list[SignatureInstance] = field(default_factory=list)
    source_task: str = "task1"

    def __post_init__(self):
        seen = set()
        for inst in self.instances:
            k = (inst.writer_id, inst.sample_index)
            if k in seen:
                raise ValueError(f"duplicate instance U{k[0]}S{k[1]}")
            seen.add(k)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def __getitem__(self, i):
        return self.instances[i]

    @property
    def labels(self) -> list[int]:
        return [int(inst.label) for inst in self.instances]


def label_for_sample(sample_index: int) -> Label:
    return Label.GENUINE if sample_index <= GENUINE_SAMPLES else Label.FORGERY


def parse_svc_file(content: bytes | str) -> list[StrokePoint]:
    """Parse the text of one SVC2004 file into points, in file order.

    The per-point "index" feature is the line ordinal; files carry no column
    for it.  Decreasing timestamps only raise a warning.
    """
    text = content.decode("ascii") if isinstance(content, (bytes, bytearray)) else content
    lines = [ln.strip() for ln in text.splitlines()]
    while lines and not lines[-1]:
        lines.pop()
    if not lines:
        raise MalformedHeader("empty file")
    try:
        declared = int(lines[0])
    except ValueError:
        raise MalformedHeader(f"first line is not a point count: {lines[0]!r}") from None
    if declared < 0:
        raise MalformedHeader(f"negative point count {declared}")

    body = lines[1:]
    if len(body) != declared:
        raise PointCountMismatch(f"header declares {declared} points, file has {len(body)}")

    points = []
    ncols = None
    last_t = None
    for lineno, line in enumerate(body, start=2):
        parts = line.split()
        if len(parts) not in (4, 7):
            raise ColumnCountMismatch(f"line {lineno}: expected 4 or 7 columns, got {len(parts)}")
        if ncols is None:
            ncols = len(parts)
        elif len(parts) != ncols:
            raise ColumnCountMismatch(f"line {lineno}: {len(parts)} columns after {ncols}-column lines")
        try:
            vals = [int(v) for v in parts]
        except ValueError:
            raise MalformedLine(f"line {lineno}: non-integer field in {line!r}") from None
        x, y, t, button = vals[:4]
        if t < 0:
            raise MalformedLine(f"line {lineno}: negative timestamp {t}")
        if button not in (0, 1):
            raise MalformedLine(f"line {lineno}: button must be 0 or 1, got {button}")
        if last_t is not None and t < last_t:
            warnings.warn(f"line {lineno}: timestamp decreases ({last_t} -> {t})", stacklevel=2)
        last_t = t
        aux = tuple(vals[4:]) if ncols == 7 else None
        points.append(StrokePoint(x, y, t, Pen(button), aux))
    return points


def format_svc(points: Sequence[StrokePoint]) -> str:
    """Inverse of :func:`parse_svc_file`."""
    out = [str(len(points))]
    for p in points:
        cols = [p.x, p.y, p.t, int(p.pen)]
        if p.aux is not None:
            cols.extend(p.aux)
        out.append(" ".join(str(c) for c in cols))
    return "\n".join(out) + "\n"


def segment_strokes(points: Sequence[StrokePoint]) -> list[Stroke]:
    """Split points into strokes; a pen-up point closes the stroke it ends."""
    if not points:
        raise EmptyInput("no points to segment")
    strokes, current = [], []
    for p in points:
        current.append(p)
        if p.pen == Pen.UP:
            strokes.append(Stroke(tuple(current)))
            current = []
    if current:
        strokes.append(Stroke(tuple(current)))
    return strokes


def instance_from_points(points, writer_id=0, sample_index=0, label=None) -> SignatureInstance:
    if label is None:
        label = label_for_sample(sample_index) if sample_index else Label.GENUINE
    return SignatureInstance(tuple(segment_strokes(points)), writer_id, sample_index, Label(label))


def read_instance(path: str | os.PathLike) -> SignatureInstance:
    path = Path(path)
    m = FILENAME_RE.match(path.name)
    writer, sample = (int(m.group(1)), int(m.group(2))) if m else (0, 0)
    return instance_from_points(parse_svc_file(path.read_bytes()), writer, sample)


def corpus_files(root: str | os.PathLike) -> list[tuple[int, int, Path]]:
    root = Path(root)
    found = []
    for entry in root.iterdir() if root.is_dir() else ():
        m = FILENAME_RE.match(entry.name)
        if m and entry.is_file():
            found.append((int(m.group(1)), int(m.group(2)), entry))
    found.sort()
    return found


def load_corpus(root: str | os.PathLike, task: str = "task1", permissive: bool = False) -> Corpus:
    """Load every ``U<w>S<s>.TXT`` file under ``root``.

    Parse failures abort with the filename unless ``permissive`` is set, in
    which case the file is logged and skipped.
    """
    if task not in ("task1", "task2"):
        raise ValueError(f"task must be 'task1' or 'task2', got {task!r}")
    files = corpus_files(root)
    if not files:
        raise NoFilesFound(f"no files found in {root}")
    instances = []
    for writer, sample, path in files:
        try:
            points = parse_svc_file(path.read_bytes())
            instances.append(instance_from_points(points, writer, sample))
        except (InkFormatError, EmptyInput, OSError, UnicodeDecodeError) as exc:
            if not permissive:
                raise CorpusError(path.name, exc) from exc
            logger.warning("skipping %s: %s", path.name, exc)
    return Corpus(instances, task)
