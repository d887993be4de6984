"""Versioned prompt assets.

Prompts are data, not code: each lives in ``assets/prompts/<name>-v<N>.txt``
and the version is part of the request text, so changing a prompt loudly
invalidates stale replays instead of silently matching them.
"""

from __future__ import annotations

from pathlib import Path

PROMPT_DIR = Path(__file__).parent / "assets" / "prompts"

PROMPT_VERSIONS = {
    "paraphrase": 1,
    "decompose": 1,
    "generate": 1,
    "compress": 1,
}


def load_prompt(name: str) -> str:
    version = PROMPT_VERSIONS[name]
    path = PROMPT_DIR / f"{name}-v{version}.txt"
    return path.read_text().strip()
