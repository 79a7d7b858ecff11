"""Atomic file output and manifest checksums."""
from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from pathlib import Path

from .errors import CorruptStore, StoreIOError


def atomic_write(path, writer, mode: str = "w") -> None:
    """Call ``writer(fh)`` on a temp file next to ``path`` and rename into place."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    except OSError as exc:
        raise StoreIOError(f"cannot write {path}: {exc}") from exc
    try:
        newline = "" if "b" not in mode else None
        with os.fdopen(fd, mode, **({"newline": newline} if "b" not in mode else {})) as fh:
            writer(fh)
        os.replace(tmp, path)
    except BaseException as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        if isinstance(exc, OSError):
            raise StoreIOError(f"cannot write {path}: {exc}") from exc
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    atomic_write(path, lambda fh: fh.write(data), mode="wb")


def atomic_write_json(path, obj) -> None:
    atomic_write(path, lambda fh: fh.write(dumps(obj)))


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class atomic_dir:
    """Context manager yielding a temp directory that replaces ``path`` on success."""

    def __init__(self, path):
        self.path = Path(path)

    def __enter__(self) -> Path:
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.tmp = Path(tempfile.mkdtemp(dir=self.path.parent, prefix=f".{self.path.name}."))
        except OSError as exc:
            raise StoreIOError(f"cannot create {self.path}: {exc}") from exc
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        try:
            if self.path.exists():
                old = self.path.with_name(f".{self.path.name}.old")
                shutil.rmtree(old, ignore_errors=True)
                os.replace(self.path, old)
                os.replace(self.tmp, self.path)
                shutil.rmtree(old, ignore_errors=True)
            else:
                os.replace(self.tmp, self.path)
        except OSError as e:
            raise StoreIOError(f"cannot finalize {self.path}: {e}") from e
        return False


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    with open(path, "rb") as fh:
        return sha256_bytes(fh.read())


def seal(manifest: dict) -> dict:
    """Return a copy of ``manifest`` carrying a checksum of its own content."""
    body = {k: v for k, v in manifest.items() if k != "checksum"}
    return {**body, "checksum": sha256_bytes(dumps(body).encode())}


def load_sealed(path) -> dict:
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise CorruptStore(f"missing manifest {path}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptStore(f"unreadable manifest {path}: {exc}") from exc
    expected = seal(manifest).get("checksum")
    if manifest.get("checksum") != expected:
        raise CorruptStore(f"manifest checksum mismatch in {path}")
    return manifest
