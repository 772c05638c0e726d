"""Dataset manifests: loading, validation, score normalization and grouping.

A manifest is a JSON object::

    {
      "dataset": "savoias",
      "score_range": [0, 100],
      "items": [{"id": "ad_01", "category": "Advertisement", "path": "ads/01.png", "score": 42.5}]
    }

Image paths are resolved relative to the manifest's directory. Items may
also carry an optional ``latent`` mapping (principle name -> number) used
only by the simulated judge.
"""

from __future__ import annotations

import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from PIL import Image

from .errors import (
    DegenerateRange,
    DuplicateId,
    ImageTooLarge,
    MissingImageFile,
    ParseError,
    ScoreOutOfRange,
)

DEFAULT_MAX_DIMENSION = 8000


@dataclass(frozen=True)
class ImageItem:
    id: str
    dataset: str
    category: str
    locator: str
    width: int
    height: int
    ground_truth: float | None = None
    ground_truth_norm: float | None = None
    latent: dict[str, float] | None = field(default=None, compare=True, hash=False)
    # Original pixel size when the image was downscaled at ingestion.
    source_size: tuple[int, int] | None = None

    def read_bytes(self) -> bytes:
        """Image bytes as the judge should see them (downscaled if needed)."""
        data = Path(self.locator).read_bytes()
        if self.source_size is None:
            return data
        with Image.open(io.BytesIO(data)) as img:
            fmt = img.format or "PNG"
            small = img.resize((self.width, self.height), Image.LANCZOS)
            out = io.BytesIO()
            small.save(out, format=fmt)
        return out.getvalue()


@dataclass(frozen=True)
class DatasetIndex:
    dataset: str
    score_range: tuple[float, float]
    items: tuple[ImageItem, ...]

    def by_id(self) -> dict[str, ImageItem]:
        return {item.id: item for item in self.items}

    @property
    def categories(self) -> list[str]:
        return sorted({item.category for item in self.items})

    def to_manifest(self, base_dir: str | os.PathLike) -> dict[str, Any]:
        """Manifest dict with paths relative to ``base_dir``."""
        base = Path(base_dir).resolve()
        out_items = []
        for item in self.items:
            entry: dict[str, Any] = {
                "id": item.id,
                "category": item.category,
                "path": os.path.relpath(Path(item.locator).resolve(), base),
            }
            if item.ground_truth is not None:
                entry["score"] = item.ground_truth
            if item.latent is not None:
                entry["latent"] = dict(item.latent)
            out_items.append(entry)
        return {
            "dataset": self.dataset,
            "score_range": list(self.score_range),
            "items": out_items,
        }


def normalize_score(raw: float, score_range: tuple[float, float]) -> float:
    lo, hi = score_range
    if hi == lo:
        raise DegenerateRange(f"score range ({lo}, {hi}) has zero width")
    if hi < lo:
        raise DegenerateRange(f"score range ({lo}, {hi}) is inverted")
    if not lo <= raw <= hi:
        raise ScoreOutOfRange(f"score {raw} outside declared range ({lo}, {hi})")
    return (raw - lo) / (hi - lo)


def image_size(data: bytes) -> tuple[int, int]:
    with Image.open(io.BytesIO(data)) as img:
        return img.size


def _read_size(path: Path) -> tuple[int, int]:
    try:
        with Image.open(path) as img:
            return img.size
    except OSError as exc:
        raise ParseError(f"cannot read image dimensions from {path}: {exc}") from exc


def _number(value: Any, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ParseError(f"{what} must be a finite number, got {value!r}")
    return float(value)


def _fit_within(width: int, height: int, limit: int) -> tuple[int, int]:
    scale = limit / max(width, height)
    return max(1, int(width * scale)), max(1, int(height * scale))


def load_manifest(
    path: str | os.PathLike,
    max_dimension: int | None = DEFAULT_MAX_DIMENSION,
    downscale: bool = False,
) -> DatasetIndex:
    """Parse and validate a manifest file.

    Images larger than ``max_dimension`` on either side raise
    :class:`ImageTooLarge` unless ``downscale`` is set, in which case the
    item is recorded at a proportionally reduced size. Pass
    ``max_dimension=None`` to skip the size check entirely.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ParseError(f"manifest not found: {path}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"manifest {path} is not valid JSON: {exc}") from exc
    return parse_manifest(doc, path.parent, max_dimension=max_dimension, downscale=downscale)


def parse_manifest(
    doc: Any,
    base_dir: str | os.PathLike,
    max_dimension: int | None = DEFAULT_MAX_DIMENSION,
    downscale: bool = False,
) -> DatasetIndex:
    if not isinstance(doc, dict):
        raise ParseError("manifest must be a JSON object")
    for key in ("dataset", "score_range", "items"):
        if key not in doc:
            raise ParseError(f"manifest missing field {key!r}")
    name = doc["dataset"]
    if not isinstance(name, str) or not name:
        raise ParseError("'dataset' must be a non-empty string")
    rng = doc["score_range"]
    if not isinstance(rng, list) or len(rng) != 2:
        raise ParseError("'score_range' must be a [min, max] pair")
    score_range = (_number(rng[0], "score_range[0]"), _number(rng[1], "score_range[1]"))
    if score_range[0] >= score_range[1]:
        raise DegenerateRange(f"score range {score_range} must satisfy min < max")
    if not isinstance(doc["items"], list):
        raise ParseError("'items' must be an array")

    base = Path(base_dir)
    seen: set[str] = set()
    items = []
    for pos, entry in enumerate(doc["items"]):
        if not isinstance(entry, dict):
            raise ParseError(f"items[{pos}] must be an object")
        for key in ("id", "category", "path"):
            if not isinstance(entry.get(key), str) or not entry[key]:
                raise ParseError(f"items[{pos}].{key} must be a non-empty string")
        item_id = entry["id"]
        if item_id in seen:
            raise DuplicateId(f"duplicate item id {item_id!r}")
        seen.add(item_id)

        raw = norm = None
        if entry.get("score") is not None:
            raw = _number(entry["score"], f"items[{pos}].score")
            try:
                norm = normalize_score(raw, score_range)
            except ScoreOutOfRange as exc:
                raise ScoreOutOfRange(f"item {item_id!r}: {exc}") from None

        latent = None
        if entry.get("latent") is not None:
            if not isinstance(entry["latent"], dict):
                raise ParseError(f"items[{pos}].latent must be an object")
            latent = {str(k): _number(v, f"items[{pos}].latent.{k}") for k, v in entry["latent"].items()}

        img_path = base / entry["path"]
        if not img_path.is_file():
            raise MissingImageFile(f"item {item_id!r}: image not found at {img_path}")
        width, height = _read_size(img_path)
        source_size = None
        if max_dimension is not None and max(width, height) > max_dimension:
            if not downscale:
                raise ImageTooLarge(
                    f"item {item_id!r}: {width}x{height} exceeds the {max_dimension}px limit"
                )
            source_size = (width, height)
            width, height = _fit_within(width, height, max_dimension)

        items.append(
            ImageItem(
                id=item_id,
                dataset=name,
                category=entry["category"],
                locator=str(img_path.resolve()),
                width=width,
                height=height,
                ground_truth=raw,
                ground_truth_norm=norm,
                latent=latent,
                source_size=source_size,
            )
        )
    return DatasetIndex(dataset=name, score_range=score_range, items=tuple(items))


def dump_manifest(index: DatasetIndex, path: str | os.PathLike) -> None:
    path = Path(path)
    doc = index.to_manifest(path.parent)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def partition_by_category(index: DatasetIndex | Iterable[ImageItem]) -> list[tuple[str, list[ImageItem]]]:
    items = index.items if isinstance(index, DatasetIndex) else list(index)
    groups: dict[str, list[ImageItem]] = {}
    for item in items:
        groups.setdefault(item.category, []).append(item)
    return [(cat, groups[cat]) for cat in sorted(groups)]


def small_categories(index: DatasetIndex) -> list[str]:
    """Categories holding fewer than two items (no pair can be formed)."""
    return [cat for cat, members in partition_by_category(index) if len(members) < 2]
