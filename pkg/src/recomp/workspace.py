"""On-disk workspace: ``datasets/``, ``history.jsonl``, ``prov/``, ``cache/``, ``config``."""

from __future__ import annotations

import contextlib
import fcntl
import json
from pathlib import Path
from typing import Iterator

from .history import HistoryDB
from .pipeline import CACHE_FULL, CACHE_MODES, Executor, normalize_transparency
from .prov import WHITE_BOX
from .snapshots import codec_for
from .store import Registry

DEFAULT_CONFIG = {"transparency": WHITE_BOX, "cache_mode": CACHE_FULL}


class Workspace:
    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        config_path = self.root / "config"
        if config_path.exists():
            self.config = {**DEFAULT_CONFIG, **json.loads(config_path.read_text())}
        else:
            self.config = dict(DEFAULT_CONFIG)
            config_path.write_text(json.dumps(self.config, indent=1, sort_keys=True) + "\n")
        self.registry = Registry(self.root / "datasets", codec_for)
        self.history = HistoryDB(self.root)

    @property
    def transparency(self) -> str:
        return normalize_transparency(self.config["transparency"])

    @property
    def cache_mode(self) -> str:
        mode = self.config["cache_mode"]
        if mode not in CACHE_MODES:
            raise ValueError(f"config cache_mode must be one of {CACHE_MODES}, got {mode!r}")
        return mode

    def executor(self, cache_mode: str | None = None) -> Executor:
        return Executor(self.history, self.registry, cache_mode or self.cache_mode)


@contextlib.contextmanager
def locked(root: Path | str) -> Iterator[None]:
    """Advisory exclusive lock: one CLI invocation per workspace at a time."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / ".lock", "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)
