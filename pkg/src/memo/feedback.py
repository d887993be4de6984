"""Turning raw human corrections into skillbook entries.

The model paraphrases each correction into task-specific guidance and, when
the correction is task-invariant, an additional global statement.  Guidance
is keyed by the action/object(s) of the subtask the human interrupted;
global statements go under the shared global key.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import dsl
from .config import MemoConfig
from .embedding import embed_key, global_key
from .modelclient import ModelError, ModelRequest
from .prompts import load_prompt
from .skillbook import GlobalGuidance, Guidance, Provenance, Skillbook


@dataclass
class FeedbackContext:
    task_name: str
    action_label: str
    object_labels: tuple
    scene: object  # SceneGraph
    failed_program: Optional[dsl.SkillProgram] = None
    iteration: int = 0

    def __post_init__(self):
        if not self.action_label:
            raise ValueError("action_label must be non-empty")
        if self.scene is None:
            raise ValueError("feedback needs the scene it was given in")


@dataclass(frozen=True)
class ParsedFeedback:
    local_text: str
    general_text: Optional[str]
    raw_text: str
    fallback: bool = False  # model unavailable or repeatedly invalid


def _scene_label_in(text: str, scene) -> Optional[str]:
    lowered = text.lower()
    for label in scene.labels():
        if label.lower() in lowered:
            return label
    return None


def _try_parse_response(text: str) -> Optional[tuple]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        return None
    if not isinstance(data, dict) or not data.get("local"):
        return None
    general = data.get("general") or None
    return (str(data["local"]), None if general is None else str(general))


def parse_feedback(raw: str, ctx: FeedbackContext, model) -> ParsedFeedback:
    """Paraphrase a correction; extract a task-invariant statement when the
    model marks one.

    The model must answer ``{"local": ..., "general": ...|null}``; a general
    statement naming any current scene object violates task invariance.  One
    retry on violation, then fall back to the verbatim correction with no
    general statement.
    """
    if not raw:
        raise ValueError("raw feedback must be non-empty")
    prompt = load_prompt("paraphrase")
    base_messages = [
        ("system", prompt),
        (
            "user",
            json.dumps(
                {
                    "feedback": raw,
                    "task": ctx.task_name,
                    "action": ctx.action_label,
                    "objects": list(ctx.object_labels),
                },
                sort_keys=True,
            ),
        ),
    ]
    messages = list(base_messages)
    for _round in range(2):
        try:
            resp = model.complete(ModelRequest("paraphrase", tuple(messages)))
        except ModelError:
            break
        parsed = _try_parse_response(resp.text)
        problem = None
        if parsed is None:
            problem = 'answer must be JSON {"local": ..., "general": ...|null} with non-empty local'
        else:
            local, general = parsed
            if general is not None:
                label = _scene_label_in(general, ctx.scene)
                if label is not None:
                    problem = (
                        f"the general statement mentions the scene object {label!r}; "
                        "general guidance must not reference current scene objects"
                    )
        if problem is None:
            local, general = parsed
            return ParsedFeedback(local, general, raw)
        messages = list(base_messages) + [("user", f"Invalid answer: {problem}. Try again.")]
    return ParsedFeedback(raw, None, raw, fallback=True)


def ingest(
    parsed: ParsedFeedback,
    ctx: FeedbackContext,
    book: Skillbook,
    embedder,
    config: Optional[MemoConfig] = None,
) -> list:
    """Append skillbook entries for one parsed correction.

    One guidance entry keyed by the subtask context; one extra global entry
    when a general statement is present.  Exact duplicates (identical key
    vectors and identical text) are skipped.  Never mutates existing
    entries.
    """
    config = config or MemoConfig()
    note = "fallback-verbatim" if parsed.fallback else ""
    prov = Provenance(ctx.task_name, "human", ctx.iteration, note)
    new_ids = []
    key = embed_key(
        embedder,
        ctx.action_label,
        ctx.object_labels,
        ctx.scene if config.use_scene_key else None,
    )
    payload = Guidance(parsed.local_text)
    if book.find_active_duplicate(key, payload) is None:
        new_ids.append(book.insert(key, payload, prov))
    if parsed.general_text:
        label = _scene_label_in(parsed.general_text, ctx.scene)
        if label is not None:
            raise ValueError(
                f"general guidance mentions scene object {label!r}; refusing insert"
            )
        gkey = global_key(book.dim)
        gpayload = GlobalGuidance(parsed.general_text)
        if book.find_active_duplicate(gkey, gpayload) is None:
            new_ids.append(book.insert(gkey, gpayload, prov))
    return new_ids


@dataclass
class IngestReport:
    entries_added: int = 0
    skipped: int = 0
    errors: int = 0

    def to_dict(self) -> dict:
        return {
            "entries_added": self.entries_added,
            "skipped": self.skipped,
            "errors": self.errors,
        }


def ingest_corpus(
    path,
    book: Skillbook,
    embedder,
    model,
    config: Optional[MemoConfig] = None,
    task_dir=None,
) -> IngestReport:
    """Replay a recorded feedback corpus (JSON-Lines) in file order.

    Each record: ``{raw_text, task_name, action_label, object_labels,
    scene_file, iteration}`` where ``scene_file`` names a task file whose
    initial world supplies the scene.  Malformed records are counted and
    skipped.  With the scripted model this replay is bit-reproducible.
    """
    from . import simenv

    config = config or MemoConfig()
    path = Path(path)
    report = IngestReport()
    scene_cache: dict = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            scene_file = rec["scene_file"]
            if scene_file not in scene_cache:
                task_path = Path(scene_file)
                if not task_path.is_absolute():
                    # corpus-relative (or explicit task_dir) first, packaged
                    # task files as the fallback
                    base = Path(task_dir) if task_dir else path.parent
                    task_path = base / scene_file
                    if not task_path.exists():
                        task_path = simenv.DEFAULT_TASK_DIR / scene_file
                scene_cache[scene_file] = simenv.reset(
                    simenv.load_task(task_path)
                ).scene_graph()
            ctx = FeedbackContext(
                task_name=rec["task_name"],
                action_label=rec["action_label"],
                object_labels=tuple(rec["object_labels"]),
                scene=scene_cache[scene_file],
                iteration=int(rec.get("iteration", 0)),
            )
            parsed = parse_feedback(rec["raw_text"], ctx, model)
            added = ingest(parsed, ctx, book, embedder, config)
        except Exception:  # noqa: BLE001 - malformed records must not stop replay
            report.errors += 1
            continue
        if added:
            report.entries_added += len(added)
        else:
            report.skipped += 1
    return report
