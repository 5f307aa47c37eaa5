from __future__ import annotations

from argparse import ArgumentParser
from dataclasses import dataclass
from dataclasses import field
from dataclasses import fields
from pathlib import Path
from typing import Any, ClassVar, Dict, List, Optional, Type, TypeVar

import proposalloc
from proposalloc.utils import EnvironmentDefault
from proposalloc.utils import parse_path

T = TypeVar("T")


def _non_negative(value: str) -> int:
    number = int(value)
    if number < 0:
        raise ValueError(f"{value} is negative")
    return number


@dataclass(frozen=True)
class Arguments:
    command: ClassVar[str] = "init"

    verbose: bool = field(
        metadata={
            "name_or_flags": ["-v", "--verbose"],
            "default": False,
            "required": False,
            "action": "store_true",
            "help": "show verbose output",
        }
    )
    config: Path = field(
        metadata={
            "name_or_flags": ["-c", "--config"],
            "action": EnvironmentDefault,
            "env": "PROPOSALLOC_CONFIG",
            "default": "./config.json",
            "required": False,
            "help": "The path to the config file. (Can also be set via "
            "%(env)s environment variable.) [default: ./config.json]",
            "convert": parse_path,
        }
    )

    @classmethod
    def from_args(cls: Type[T], args: List[str]) -> T:
        """Generate the Settings from parsed arguments."""
        parser = ArgumentParser(prog=f"{proposalloc.__title__} {cls.command}")

        for cls_field in fields(cls):
            metadata = dict(cls_field.metadata)
            metadata.pop("convert", None)
            name_or_flags = tuple(
                metadata.pop("name_or_flags") if "name_or_flags" in metadata else []
            )
            parser.add_argument(*name_or_flags, **metadata)

        parsed = vars(parser.parse_args(args))

        for cls_field in fields(cls):
            metadata = cls_field.metadata
            if "convert" in metadata and (value := parsed[cls_field.name]) is not None:
                parsed[cls_field.name] = metadata["convert"](value)

        return cls._format(parsed)

    @classmethod
    def _format(cls: Type[T], parsed: Dict[str, Any]) -> T:
        return cls(**parsed)


@dataclass(frozen=True)
class RunArgs(Arguments):
    seed: Optional[int] = field(
        metadata={
            "name_or_flags": ["--seed"],
            "type": _non_negative,
            "default": None,
            "required": False,
            "help": "Global random seed. [default: from config]",
        }
    )
    jobs: Optional[int] = field(
        metadata={
            "name_or_flags": ["--jobs"],
            "type": int,
            "default": None,
            "required": False,
            "help": "Images processed in parallel. [default: from config]",
        }
    )
    out: Optional[Path] = field(
        metadata={
            "name_or_flags": ["--out"],
            "default": None,
            "required": False,
            "help": "The output directory. [default: from config]",
            "convert": parse_path,
        }
    )


@dataclass(frozen=True)
class SynthArgs(RunArgs):
    command: ClassVar[str] = "synth"

    num_images: int = field(
        metadata={
            "name_or_flags": ["--num-images"],
            "type": int,
            "default": 100,
            "required": False,
            "help": "Number of images to generate. [default: 100]",
        }
    )
    num_classes: int = field(
        metadata={
            "name_or_flags": ["--num-classes"],
            "type": int,
            "default": 4,
            "required": False,
            "help": "Number of object classes. [default: 4]",
        }
    )
    image_size: int = field(
        metadata={
            "name_or_flags": ["--image-size"],
            "type": int,
            "default": 64,
            "required": False,
            "help": "Side of the square images in pixels. [default: 64]",
        }
    )
    distractors: int = field(
        metadata={
            "name_or_flags": ["--distractors"],
            "type": int,
            "default": 3,
            "required": False,
            "help": "Distractor shapes per image. [default: 3]",
        }
    )
    maps: int = field(
        metadata={
            "name_or_flags": ["--maps"],
            "type": int,
            "default": 6,
            "required": False,
            "help": "Attention maps per image. [default: 6]",
        }
    )
    noise: float = field(
        metadata={
            "name_or_flags": ["--noise"],
            "type": float,
            "default": 0.2,
            "required": False,
            "help": "Attention clutter level in [0, 1]. [default: 0.2]",
        }
    )


@dataclass(frozen=True)
class TrainScorerArgs(RunArgs):
    command: ClassVar[str] = "train-scorer"


@dataclass(frozen=True)
class HarvestArgs(RunArgs):
    command: ClassVar[str] = "harvest"


@dataclass(frozen=True)
class OptimizeArgs(RunArgs):
    command: ClassVar[str] = "optimize"

    no_crf: bool = field(
        metadata={
            "name_or_flags": ["--no-crf"],
            "default": False,
            "required": False,
            "action": "store_true",
            "help": "Drop the CRF term (lambda2 = 0)",
        }
    )


@dataclass(frozen=True)
class EvaluateArgs(RunArgs):
    command: ClassVar[str] = "evaluate"

    source: str = field(
        metadata={
            "name_or_flags": ["--source"],
            "default": "maps",
            "choices": ["maps", "attention"],
            "required": False,
            "help": "Score the optimized maps or the raw attention maps. "
            "[default: maps]",
        }
    )
