from __future__ import annotations

import dataclasses
import functools
import json
import logging
import pprint
from dataclasses import Field
from dataclasses import dataclass
from dataclasses import field
from dataclasses import fields
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Type, TypeVar

import proposalloc
from proposalloc.exceptions import ConfigError
from proposalloc.exceptions import ProposalLocException
from proposalloc.losses import AffinityParams
from proposalloc.mapopt import OptConfig
from proposalloc.pseudolabels import SamplingConfig
from proposalloc.utils import atomic_write

logger = logging.getLogger(proposalloc.__title__)

T = TypeVar("T")


def _raise(field: Field, message: str) -> None:
    attrs = {a: getattr(field, a) for a in field.__slots__}
    raise ConfigError(message.format(**attrs))


def _warn(field: Field, message: str) -> None:
    attrs = {a: getattr(field, a) for a in field.__slots__}
    logger.warning(message.format(**attrs))


def _ignore(field: Field) -> None:
    pass


def _section(cls: Type[T]) -> Callable[[Dict[str, Any]], T]:
    def convert(value: Dict[str, Any]) -> T:
        if not isinstance(value, dict):
            raise ConfigError(f"Section for {cls.__name__} must be an object")
        try:
            return cls(**value)
        except TypeError as e:
            raise ConfigError(f"Unknown key in {cls.__name__} section: {e}") from e
        except ProposalLocException as e:
            raise ConfigError(str(e)) from e

    return convert


def _at_least(minimum: int) -> Callable[[Any], int]:
    def convert(value: Any) -> int:
        if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
            raise ConfigError(f"Expected an integer >= {minimum}, got {value!r}")
        return value

    return convert


def _positive(value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
        raise ConfigError(f"Expected a positive number, got {value!r}")
    return float(value)


def _optional_str(value: Any) -> Optional[str]:
    return None if value is None else str(value)


_MISSING_RAISE = functools.partial(
    _raise, message="Config must specify '{name}'. Default is '{default}'"
)
_MISSING_WARN = functools.partial(
    _warn, message="Config does not specify '{name}'. Using Default: '{default}'"
)
_MISSING_SECTION = functools.partial(
    _warn, message="Config does not specify '{name}'. Using default section"
)


@dataclass(frozen=True)
class ScorerSettings:
    downsample: int = 16
    epochs: int = 60
    learning_rate: float = 0.05
    batch_size: int = 32
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if self.downsample < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError(
                "Scorer downsample, epochs and batch_size must be positive"
            )
        if not self.learning_rate > 0:
            raise ConfigError("Scorer learning_rate must be positive")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class Config:
    """Run configuration, read from JSON.

    Relative paths are taken against the directory holding the file.
    """

    data: str = field(
        default="./data",
        metadata={"on_missing": _MISSING_RAISE, "convert": str},
    )
    output: str = field(
        default="./output",
        metadata={"on_missing": _MISSING_WARN, "convert": str},
    )
    working_size: int = field(
        default=224,
        metadata={"on_missing": _MISSING_WARN, "convert": _at_least(8)},
    )
    k: int = field(
        default=5,
        metadata={"on_missing": _MISSING_WARN, "convert": _at_least(1)},
    )
    blur_sigma: float = field(
        default=10.0,
        metadata={"on_missing": _MISSING_WARN, "convert": _positive},
    )
    min_component_area: int = field(
        default=4,
        metadata={"on_missing": _MISSING_WARN, "convert": _at_least(1)},
    )
    score_cache: Optional[str] = field(
        default=None,
        metadata={"on_missing": _ignore, "convert": _optional_str},
    )
    sampling: SamplingConfig = field(
        default_factory=SamplingConfig,
        metadata={"on_missing": _MISSING_SECTION, "convert": _section(SamplingConfig)},
    )
    optimization: OptConfig = field(
        default_factory=OptConfig,
        metadata={"on_missing": _MISSING_SECTION, "convert": _section(OptConfig)},
    )
    affinity: AffinityParams = field(
        default_factory=AffinityParams,
        metadata={"on_missing": _MISSING_SECTION, "convert": _section(AffinityParams)},
    )
    scorer: ScorerSettings = field(
        default_factory=ScorerSettings,
        metadata={"on_missing": _MISSING_SECTION, "convert": _section(ScorerSettings)},
    )
    seed: int = field(
        default=0,
        metadata={"on_missing": _MISSING_WARN, "convert": _at_least(0)},
    )
    jobs: int = field(
        default=1,
        metadata={"on_missing": _ignore, "convert": _at_least(1)},
    )
    base: Path = field(default=Path("."), metadata={"internal": True})

    @property
    def data_dir(self) -> Path:
        return (self.base / self.data).resolve()

    @property
    def output_dir(self) -> Path:
        return (self.base / self.output).resolve()

    @property
    def score_cache_path(self) -> Optional[Path]:
        if self.score_cache is None:
            return None
        return (self.base / self.score_cache).resolve()

    def opt_config(self, seed: Optional[int] = None, no_crf: bool = False) -> OptConfig:
        """The optimizer settings joined with the sampling and affinity sections."""
        return dataclasses.replace(
            self.optimization,
            sampling=self.sampling,
            affinity=self.affinity,
            seed=self.seed if seed is None else seed,
            lambda2=0.0 if no_crf else self.optimization.lambda2,
        )

    def override(self, **values: Any) -> Config:
        """Copy with every non-``None`` value replaced; command-line flags win."""
        kept = {k: v for k, v in values.items() if v is not None}
        return dataclasses.replace(self, **kept)

    def to_json(self) -> Dict[str, Any]:
        content: Dict[str, Any] = {}
        for cls_field in fields(self):
            if cls_field.metadata.get("internal"):
                continue
            value = getattr(self, cls_field.name)
            if dataclasses.is_dataclass(value):
                value = dataclasses.asdict(value)
                if cls_field.name == "optimization":
                    value = {
                        key: value[key]
                        for key in ("steps", "learning_rate", "lambda1", "lambda2")
                    }
            content[cls_field.name] = value
        return content

    def write(self, file: Path) -> None:
        atomic_write(file, json.dumps(self.to_json(), indent=4))

    @classmethod
    def from_json(cls, loaded: Dict[str, Any], base: Path = Path(".")) -> Config:
        known = {f.name for f in fields(cls) if not f.metadata.get("internal")}
        unknown = set(loaded) - known
        if unknown:
            raise ConfigError(f"Unknown config keys: {sorted(unknown)}")
        values: Dict[str, Any] = {"base": base}
        for cls_field in fields(cls):
            metadata = cls_field.metadata
            if metadata.get("internal"):
                continue
            if cls_field.name not in loaded or loaded[cls_field.name] == "":
                metadata["on_missing"](cls_field)
                continue
            values[cls_field.name] = metadata["convert"](loaded[cls_field.name])
        return cls(**values)

    @classmethod
    def load(cls, file: Path) -> Config:
        if not file.exists():
            logger.info("Generating Default Config")
            cls().write(file)

        try:
            loaded = json.loads(file.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"Malformed config '{file}': {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"Config '{file}' must hold a JSON object")

        config = cls.from_json(loaded, file.parent.resolve())
        logger.info(pprint.pformat(config))
        return config
