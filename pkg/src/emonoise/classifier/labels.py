from __future__ import annotations

from dataclasses import dataclass

LEVELS = ("low", "mid", "high")
AXES = ("activation", "valence")


class LabelError(ValueError):
    pass


def level_index(level: str | int) -> int:
    if isinstance(level, (int,)) and not isinstance(level, bool) and 0 <= level < 3:
        return int(level)
    try:
        return LEVELS.index(str(level).lower())
    except ValueError:
        raise LabelError(f"bin must be one of {LEVELS}, got {level!r}") from None


@dataclass(frozen=True)
class EmotionLabel:
    """Three-bin activation and valence."""

    activation: str
    valence: str

    def __post_init__(self):
        object.__setattr__(self, "activation", LEVELS[level_index(self.activation)])
        object.__setattr__(self, "valence", LEVELS[level_index(self.valence)])

    def axis(self, name: str) -> str:
        if name not in AXES:
            raise LabelError(f"axis must be one of {AXES}, got {name!r}")
        return getattr(self, name)

    def index(self, name: str) -> int:
        return LEVELS.index(self.axis(name))

    def __str__(self) -> str:
        return f"{self.activation}/{self.valence}"
