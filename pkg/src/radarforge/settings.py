"""JSON configuration file: simden, pillars and loss sections merged over defaults."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .core import LossConfig, ParseError, PillarConfig, SimDenConfig, ValidationError, pillar_preset

logger = logging.getLogger(__name__)

SECTIONS = ("simden", "pillars", "loss")


@dataclass(frozen=True)
class Settings:
    simden: SimDenConfig = field(default_factory=SimDenConfig)
    pillars: PillarConfig = field(default_factory=lambda: pillar_preset("vod"))
    loss: LossConfig = field(default_factory=LossConfig)

    def to_dict(self) -> dict[str, Any]:
        return {"simden": self.simden.to_dict(), "pillars": self.pillars.to_dict(), "loss": self.loss.to_dict()}


def _section(cls, defaults: Mapping[str, Any], data: Any, name: str):
    if not isinstance(data, Mapping):
        raise ParseError(f"section {name!r} must be an object", path=f"$.{name}")
    try:
        return cls.from_dict({**defaults, **data})
    except TypeError as exc:
        raise ValidationError(name, str(exc)) from None


def _pillars(data: Any) -> PillarConfig:
    if not isinstance(data, Mapping):
        raise ParseError("section 'pillars' must be an object", path="$.pillars")
    data = dict(data)
    name = data.pop("preset", "vod")
    split = data.pop("split", "test")
    return _section(PillarConfig, pillar_preset(name, split).to_dict(), data, "pillars")


def from_mapping(data: Mapping[str, Any]) -> Settings:
    for key in data:
        if key not in SECTIONS:
            raise ValidationError(key, f"unknown settings section; expected one of {', '.join(SECTIONS)}")
    return Settings(
        simden=_section(SimDenConfig, SimDenConfig().to_dict(), data.get("simden", {}), "simden"),
        pillars=_pillars(data.get("pillars", {})),
        loss=_section(LossConfig, LossConfig().to_dict(), data.get("loss", {}), "loss"),
    )


def loads(text: str) -> Settings:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", offset=exc.pos) from None
    if not isinstance(data, dict):
        raise ParseError("settings must be a JSON object", path="$")
    return from_mapping(data)


def dumps(settings: Settings) -> str:
    return json.dumps(settings.to_dict(), indent=2, sort_keys=True) + "\n"


def load_settings(path: str | Path | None = None) -> Settings:
    """Defaults, or the file at `path` merged over them."""
    if path is None:
        return Settings()
    path = Path(path)
    settings = loads(path.read_text(encoding="utf-8"))
    logger.info("settings loaded from %s", path)
    return settings
