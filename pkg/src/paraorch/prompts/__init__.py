"""Shipped system-prompt assets for every model-facing role, with loading."""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, fields
from pathlib import Path


@dataclass(frozen=True)
class PromptSet:
    """System prompts keyed by role. The ensemble solver reuses the standard
    reasoner prompt."""

    manager: str
    standard_reasoner: str
    critical_reviewer: str
    code_reasoner: str
    knowledge_searcher: str
    final_answer_generator: str


def load_prompts(overrides_dir: str | Path | None = None) -> PromptSet:
    """Load the shipped prompt assets; files in ``overrides_dir`` with the
    same stem (e.g. ``manager.txt``) take precedence."""
    root = importlib.resources.files(__name__)
    values = {}
    for f in fields(PromptSet):
        name = f.name
        text = (root / f"{name}.txt").read_text(encoding="utf-8")
        if overrides_dir is not None:
            candidate = Path(overrides_dir) / f"{name}.txt"
            if candidate.exists():
                text = candidate.read_text(encoding="utf-8")
        values[name] = text
    return PromptSet(**values)
