"""Manifest and key=value config files read by the command line.

Manifest: UTF-8 text, one image per line, tab-separated fields::

    image_id <TAB> prediction <TAB> certainty <TAB> annotation [<TAB> annotation ...]

``-`` marks an absent prediction or certainty. Paths are relative to the
manifest's directory. Blank lines and lines starting with ``#`` are ignored.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError, EdgeRankError


class ManifestError(EdgeRankError, OSError):
    """A manifest line is malformed or names a file that does not exist."""


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    prediction_path: Optional[Path]
    certainty_path: Optional[Path]
    annotation_paths: tuple = field(default_factory=tuple)


def _resolve(base: Path, token: str) -> Optional[Path]:
    if token in ("", "-"):
        return None
    p = Path(token)
    return p if p.is_absolute() else base / p


def load_manifest(path, *, need_prediction: bool = False, need_annotations: bool = True) -> list:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    base = path.parent
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) < 3:
            raise ManifestError(f"{path}:{lineno}: expected at least 3 tab-separated fields")
        image_id, pred, cert, *annots = fields
        entry = ManifestEntry(
            image_id=image_id.strip(),
            prediction_path=_resolve(base, pred.strip()),
            certainty_path=_resolve(base, cert.strip()),
            annotation_paths=tuple(_resolve(base, a.strip()) for a in annots if a.strip()),
        )
        if need_prediction and entry.prediction_path is None:
            raise ManifestError(f"{path}:{lineno}: entry {entry.image_id!r} has no prediction")
        if need_annotations and not entry.annotation_paths:
            raise ManifestError(f"{path}:{lineno}: entry {entry.image_id!r} has no annotations")
        for p in (entry.prediction_path, entry.certainty_path, *entry.annotation_paths):
            if p is not None and not p.exists():
                raise ManifestError(f"{path}:{lineno}: missing file {p}")
        entries.append(entry)
    return entries


def write_manifest(path, entries) -> None:
    base = Path(path).parent
    rel = lambda p: "-" if p is None else str(Path(p).relative_to(base) if Path(p).is_absolute() and Path(p).is_relative_to(base) else p)
    lines = []
    for e in entries:
        fields = [e.image_id, rel(e.prediction_path), rel(e.certainty_path), *map(rel, e.annotation_paths)]
        lines.append("\t".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_config(path) -> dict:
    """Parse flat ``key = value`` lines (``#`` comments) into a dict of strings."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out
