"""The eight perception lenses every image pair is compared on."""

from __future__ import annotations

from enum import Enum


class Principle(str, Enum):
    SIMILARITY = "SIMILARITY"
    PROXIMITY = "PROXIMITY"
    SIMPLICITY = "SIMPLICITY"
    CLOSURE = "CLOSURE"
    CONTINUITY = "CONTINUITY"
    FIGURE_GROUND = "FIGURE_GROUND"
    VISUAL_CLUTTER = "VISUAL_CLUTTER"
    VISUAL_SYMMETRY = "VISUAL_SYMMETRY"

    @property
    def label(self) -> str:
        """Row label used in correlation tables."""
        return _LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "Principle":
        for p, text in _LABELS.items():
            if text == label:
                return p
        return cls(label)


_LABELS = {
    Principle.SIMILARITY: "Law of Similarity",
    Principle.PROXIMITY: "Law of Proximity",
    Principle.SIMPLICITY: "Law of Simplicity",
    Principle.CLOSURE: "Law of Closure",
    Principle.CONTINUITY: "Law of Continuity",
    Principle.FIGURE_GROUND: "Law of Figure/Ground",
    Principle.VISUAL_CLUTTER: "Visual Clutter",
    Principle.VISUAL_SYMMETRY: "Visual Symmetry",
}

PRINCIPLES: tuple[Principle, ...] = tuple(Principle)
