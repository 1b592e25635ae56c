"""Ground-truth labels, detector predictions, and the dataset manifest.

Label files are plain text, one box per line: ``class x_min y_min x_max
y_max`` with inclusive pixel corners and a top-left origin. Prediction
files carry an extra confidence column after the class so detections can
be ranked. The manifest is JSON Lines, one record per composite (or per
failed grid cell).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import LabelFormatError, ManifestError


@dataclass(frozen=True)
class BoundingBox:
    """Labeled axis-aligned box with inclusive corner coordinates."""

    class_name: str
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if not self.class_name or any(c.isspace() for c in self.class_name):
            raise ValueError(f"class name must be a whitespace-free token: {self.class_name!r}")
        for name in ("x_min", "y_min", "x_max", "y_max"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"{name}={v!r} must be a non-negative integer")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(
                f"inverted extents: ({self.x_min},{self.y_min},{self.x_max},{self.y_max})"
            )

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    @property
    def area(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class Detection:
    """Confidence-scored predicted box."""

    box: BoundingBox
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class ManifestEntry:
    """One generated composite: sources, seed, and the sampled transform."""

    image_path: str
    label_path: str
    fg_source: str
    bg_source: str
    seed: int
    rotation: float
    scale: float
    translate: tuple[int, int]


@dataclass(frozen=True)
class FailureRecord:
    """A grid cell that could not be composed."""

    fg_source: str
    bg_source: str
    error: str


@dataclass
class DatasetManifest:
    """Record of a composition run: n x m entries for n fg and m bg."""

    entries: list[ManifestEntry] = field(default_factory=list)
    failures: list[FailureRecord] = field(default_factory=list)


def write_label(
    boxes: list[BoundingBox], path: str | Path, normalized_size: tuple[int, int] | None = None
) -> None:
    """Write one ``class x_min y_min x_max y_max`` line per box.

    With normalized_size=(width, height), writes the normalized
    center-format variant ``class cx cy w h`` instead, for trainers that
    expect fractional coordinates.
    """
    lines = []
    for b in boxes:
        if normalized_size is None:
            lines.append(f"{b.class_name} {b.x_min} {b.y_min} {b.x_max} {b.y_max}\n")
        else:
            iw, ih = normalized_size
            cx = (b.x_min + b.x_max + 1) / 2 / iw
            cy = (b.y_min + b.y_max + 1) / 2 / ih
            lines.append(f"{b.class_name} {cx:.6f} {cy:.6f} {b.width / iw:.6f} {b.height / ih:.6f}\n")
    Path(path).write_text("".join(lines), encoding="ascii")


def _label_lines(path: Path):
    try:
        text = path.read_text(encoding="ascii")
    except FileNotFoundError:
        raise LabelFormatError(f"no such label file: {path}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            yield lineno, line.split()


def parse_label(path: str | Path) -> list[BoundingBox]:
    """Parse a ground-truth label file; blank lines are skipped."""
    path = Path(path)
    boxes = []
    for lineno, fields in _label_lines(path):
        if len(fields) != 5:
            raise LabelFormatError(f"{path}:{lineno}: expected 5 fields, got {len(fields)}")
        try:
            coords = [int(f) for f in fields[1:]]
        except ValueError:
            raise LabelFormatError(f"{path}:{lineno}: non-integer coordinate") from None
        try:
            boxes.append(BoundingBox(fields[0], *coords))
        except ValueError as exc:
            raise LabelFormatError(f"{path}:{lineno}: {exc}") from None
    return boxes


def parse_prediction(path: str | Path) -> list[Detection]:
    """Parse a prediction file: ``class confidence x_min y_min x_max y_max``."""
    path = Path(path)
    detections = []
    for lineno, fields in _label_lines(path):
        if len(fields) != 6:
            raise LabelFormatError(f"{path}:{lineno}: expected 6 fields, got {len(fields)}")
        try:
            confidence = float(fields[1])
        except ValueError:
            raise LabelFormatError(f"{path}:{lineno}: malformed confidence {fields[1]!r}") from None
        try:
            coords = [int(f) for f in fields[2:]]
        except ValueError:
            raise LabelFormatError(f"{path}:{lineno}: non-integer coordinate") from None
        try:
            detections.append(Detection(BoundingBox(fields[0], *coords), confidence))
        except ValueError as exc:
            raise LabelFormatError(f"{path}:{lineno}: {exc}") from None
    return detections


_ENTRY_FIELDS = ("image_path", "label_path", "fg_source", "bg_source", "seed",
                 "rotation", "scale", "translate")
_FAILURE_FIELDS = ("fg_source", "bg_source", "failed")


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Serialize as JSON Lines; failed cells carry a ``failed`` message."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            record = {
                "image_path": e.image_path,
                "label_path": e.label_path,
                "fg_source": e.fg_source,
                "bg_source": e.bg_source,
                "seed": e.seed,
                "rotation": e.rotation,
                "scale": e.scale,
                "translate": list(e.translate),
            }
            fh.write(json.dumps(record) + "\n")
        for f in manifest.failures:
            fh.write(json.dumps(
                {"fg_source": f.fg_source, "bg_source": f.bg_source, "failed": f.error}) + "\n")


def read_manifest(path: str | Path) -> DatasetManifest:
    """Parse a manifest written by write_manifest; lossless round-trip."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ManifestError(f"no such manifest: {path}") from None
    manifest = DatasetManifest()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from None
        if not isinstance(record, dict):
            raise ManifestError(f"{path}:{lineno}: expected an object")
        if "failed" in record:
            for key in _FAILURE_FIELDS:
                if key not in record:
                    raise ManifestError(f"{path}:{lineno}: missing field {key!r}")
            manifest.failures.append(FailureRecord(
                fg_source=record["fg_source"],
                bg_source=record["bg_source"],
                error=record["failed"],
            ))
            continue
        for key in _ENTRY_FIELDS:
            if key not in record:
                raise ManifestError(f"{path}:{lineno}: missing field {key!r}")
        translate = record["translate"]
        if not (isinstance(translate, list) and len(translate) == 2):
            raise ManifestError(f"{path}:{lineno}: field 'translate' must be [x, y]")
        manifest.entries.append(ManifestEntry(
            image_path=record["image_path"],
            label_path=record["label_path"],
            fg_source=record["fg_source"],
            bg_source=record["bg_source"],
            seed=int(record["seed"]),
            rotation=float(record["rotation"]),
            scale=float(record["scale"]),
            translate=(int(translate[0]), int(translate[1])),
        ))
    return manifest
