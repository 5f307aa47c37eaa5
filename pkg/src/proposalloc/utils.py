import hashlib
import json
import os
import tempfile
from argparse import Action
from argparse import ArgumentParser
from argparse import Namespace
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, List, Optional, Sequence, TypeVar, Union

import numpy as np

from proposalloc.exceptions import InvalidData
from proposalloc.exceptions import MissingInput

T = TypeVar("T")
R = TypeVar("R")


def atomic_write(path: Path, content: Union[str, bytes]) -> None:
    """Write ``content`` to a temporary sibling of ``path`` and rename it over."""
    path.parent.mkdir(parents=True, exist_ok=True)
    data = content.encode("utf-8") if isinstance(content, str) else content
    fd, temp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fp:
            fp.write(data)
        os.replace(temp_name, path)
    except BaseException:
        Path(temp_name).unlink(missing_ok=True)
        raise


def stable_hash(key: str) -> int:
    """64-bit hash of ``key`` that does not depend on PYTHONHASHSEED."""
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little")


def image_rng(seed: int, image_id: str) -> np.random.Generator:
    """Independent random stream for one image: ``seed`` xor hash(image_id)."""
    return np.random.default_rng(seed ^ stable_hash(image_id))


def ordered_map(fn: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> List[R]:
    """Apply ``fn`` to every item, up to ``jobs`` at a time, keeping input order."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(fn, items))


class EnvironmentDefault(Action):
    """Get values from environment variable."""

    def __init__(
        self,
        env: str,
        required: bool = True,
        default: Optional[str] = None,
        **kwargs: Any,
    ) -> None:
        default = os.environ.get(env, default)
        self.env = env
        if default:
            required = False
        super().__init__(default=default, required=required, **kwargs)

    def __call__(
        self,
        parser: ArgumentParser,
        namespace: Namespace,
        values: Union[str, Sequence[Any], None],
        option_string: Optional[str] = None,
    ) -> None:
        setattr(namespace, self.dest, values)


def parse_path(path: str) -> Path:
    return Path(path).expanduser().resolve()


def read_json(path: Path, what: str) -> Any:
    """Parse the JSON file at ``path``; ``what`` names it in errors."""
    if not path.exists():
        raise MissingInput(f"{what} '{path}' does not exist")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise InvalidData(f"{what} '{path}' is not valid JSON: {e}") from e
