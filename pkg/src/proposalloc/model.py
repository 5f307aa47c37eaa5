from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, ClassVar, Dict, Final, Iterable, Optional, Set, Tuple

from proposalloc.exceptions import EmptyDataset
from proposalloc.exceptions import InvalidData
from proposalloc.exceptions import MissingInput
from proposalloc.imaging import Box
from proposalloc.imaging import Image
from proposalloc.imaging import read_image
from proposalloc.imaging import read_mask
from proposalloc.proposals import AttentionStack
from proposalloc.proposals import read_attention_stack
from proposalloc.utils import atomic_write
from proposalloc.wsol_eval import GtAnnotation


class Directory:
    """Sub-directories of a dataset root."""

    IMAGES: Final[str] = "images"
    ATTENTION: Final[str] = "attention"
    MASKS: Final[str] = "masks"


class Output:
    """Artifacts written under the output root."""

    CLASSIFIER: Final[str] = "classifier.json"
    SCORER_REPORT: Final[str] = "scorer_report.json"
    PROPOSALS: Final[str] = "proposals.json"
    MAPS: Final[str] = "maps"
    TRACES: Final[str] = "traces"
    REPORT: Final[str] = "report.json"
    CURVE: Final[str] = "curve.csv"

    LIST: Final[Set[str]] = {MAPS, TRACES}

    @staticmethod
    def report(source: str) -> str:
        return REPORT_NAMES[source][0]

    @staticmethod
    def curve(source: str) -> str:
        return REPORT_NAMES[source][1]


REPORT_NAMES: Final[Dict[str, Tuple[str, str]]] = {
    "maps": (Output.REPORT, Output.CURVE),
    "attention": ("report_attention.json", "curve_attention.csv"),
}


@dataclass(frozen=True)
class Record:
    """One line of ``gt.jsonl``."""

    image_id: str
    label: int
    boxes: Tuple[Box, ...]
    mask_path: Optional[str] = None

    def to_json(self) -> Dict[str, Any]:
        value: Dict[str, Any] = {
            "image_id": self.image_id,
            "label": self.label,
            "boxes": [box.to_list() for box in self.boxes],
        }
        if self.mask_path is not None:
            value["mask_path"] = self.mask_path
        return value

    @classmethod
    def from_json(cls, value: Dict[str, Any]) -> Record:
        try:
            return cls(
                image_id=str(value["image_id"]),
                label=int(value["label"]),
                boxes=tuple(Box.from_list(box) for box in value["boxes"]),
                mask_path=value.get("mask_path"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise InvalidData(f"Malformed ground-truth record {value!r}: {e}") from e


def write_records(path: Path, records: Iterable[Record]) -> None:
    lines = [json.dumps(record.to_json(), sort_keys=True) for record in records]
    atomic_write(path, "\n".join(lines) + "\n")


@dataclass(frozen=True)
class Dataset:
    """A dataset root and its ground-truth records, in file order."""

    GT_FILE: ClassVar[str] = "gt.jsonl"

    root: Path
    records: Tuple[Record, ...]

    @classmethod
    def load(cls, root: Path) -> Dataset:
        path = root / cls.GT_FILE
        if not path.exists():
            raise MissingInput(f"Ground truth not found: '{path}'")
        records = []
        for number, line in enumerate(path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                value = json.loads(line)
            except json.JSONDecodeError as e:
                raise InvalidData(f"'{path}' line {number}: {e}") from e
            records.append(Record.from_json(value))
        ids = [record.image_id for record in records]
        if len(set(ids)) != len(ids):
            raise InvalidData(f"'{path}' repeats an image id")
        return cls(root, tuple(records))

    @property
    def num_classes(self) -> int:
        if not self.records:
            raise EmptyDataset(f"No record in '{self.root / self.GT_FILE}'")
        return max(record.label for record in self.records) + 1

    def image_path(self, image_id: str) -> Path:
        return self.root / Directory.IMAGES / f"{image_id}.ppm"

    def attention_path(self, image_id: str) -> Path:
        return self.root / Directory.ATTENTION / f"{image_id}.raw"

    def read_image(self, record: Record) -> Image:
        return read_image(self.image_path(record.image_id))

    def read_attention(self, record: Record) -> AttentionStack:
        return read_attention_stack(self.attention_path(record.image_id))

    def annotation(self, record: Record) -> GtAnnotation:
        mask = None
        if record.mask_path is not None:
            path = self.root / record.mask_path
            if not path.exists():
                raise MissingInput(f"Mask not found: '{path}'")
            mask = read_mask(path)
        return GtAnnotation(record.image_id, record.label, record.boxes, mask)
