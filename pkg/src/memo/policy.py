"""The neuro-symbolic episode loop.

Per task: decompose into subtasks; per subtask attempt: retrieve skillbook
context, generate a skill program (possibly by instantiating a retrieved
template), execute it step by step, templatize on success, and ingest
teacher feedback on failure before resetting to the subtask start.

Everything the policy conditioned on is logged — retrieval ids and
generation, program text, step outcomes, feedback events — so an episode
re-run against a replay model reproduces the identical log.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from . import dsl, simenv
from .config import MemoConfig
from .embedding import embed_key
from .feedback import FeedbackContext, ingest, parse_feedback
from .modelclient import ModelError, ModelRequest
from .prompts import load_prompt
from .skillbook import (
    Guidance,
    GlobalGuidance,
    Provenance,
    RetrievalQuery,
    Skillbook,
    TemplateEntry,
    retrieve_with_config,
)


class PolicyError(Exception):
    pass


class DecomposeError(PolicyError):
    pass


class GenerationError(PolicyError):
    pass


@dataclass(frozen=True)
class Subtask:
    description: str
    action_label: str
    object_labels: tuple
    unresolved: tuple = ()  # labels not found in the scene vocabulary


@dataclass(frozen=True)
class Prior:
    system_prompt: str
    registry: dsl.SkillRegistry


def build_prior(registry: dsl.SkillRegistry) -> Prior:
    """Task-invariant system prompt listing every registered skill."""
    lines = [load_prompt("generate"), "", "Available skills:"]
    for name in registry.names():
        sig = registry.signature(name)
        kinds = ", ".join(k.value for k in sig.params)
        lines.append(f"- {name}({kinds}): {sig.description}")
    return Prior("\n".join(lines), registry)


# ---------------------------------------------------------------------------
# Decomposition


def decompose(task: str, scene, model) -> list:
    """Split a task command into subtasks, validated against the scene
    vocabulary.  One retry on invalid output, then abort with diagnostics."""
    base = [
        ("system", load_prompt("decompose")),
        ("user", f"Task: {task}\n{scene.render()}"),
    ]
    vocabulary = set(scene.labels())
    messages = list(base)
    problem = "model unavailable"
    for _round in range(2):
        try:
            resp = model.complete(ModelRequest("decompose", tuple(messages)))
        except ModelError as exc:
            raise DecomposeError(f"decomposition failed: {exc}") from exc
        subtasks, problem = _parse_subtasks(resp.text, vocabulary)
        if subtasks is not None:
            return subtasks
        messages = list(base) + [("user", f"Invalid answer: {problem}. Try again.")]
    raise DecomposeError(f"decomposition failed after retry: {problem}")


def _parse_subtasks(text: str, vocabulary: set):
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        return None, "answer must be a JSON list of subtasks"
    if not isinstance(data, list) or not data:
        return None, "at least one subtask is required"
    subtasks = []
    for item in data:
        if not isinstance(item, dict) or not item.get("action"):
            return None, "each subtask needs a non-empty action"
        objects = tuple(item.get("objects", []))
        unresolved = tuple(o for o in objects if o not in vocabulary)
        if unresolved:
            return None, f"labels not present in the scene: {list(unresolved)}"
        subtasks.append(
            Subtask(
                description=str(item.get("description", item["action"])),
                action_label=str(item["action"]),
                object_labels=objects,
            )
        )
    return subtasks, None


def build_query(subtask: Subtask, scene, embedder, config: MemoConfig) -> RetrievalQuery:
    key = embed_key(
        embedder,
        subtask.action_label,
        subtask.object_labels,
        scene if config.use_scene_key else None,
    )
    return RetrievalQuery.from_key(key)


# ---------------------------------------------------------------------------
# Program generation

_USE_TEMPLATE_RE = re.compile(
    r'^\s*use_template\(\s*"([^"]+)"\s*(?:,\s*(\{.*\}))?\s*\)\s*$'
)


def _assemble_generation_messages(subtask, scene, retrieved, book, prior):
    sections = [f"Subtask: {subtask.description}"]
    sections.append(
        f"(action: {subtask.action_label}; objects: {', '.join(subtask.object_labels) or 'none'})"
    )
    sections.append(scene.render())
    guidance_texts = []
    template_sources = []
    if retrieved is not None:
        for gid in retrieved.globals:
            entry = book.get(gid)
            sections_global = entry.payload.text
            guidance_texts.append(f"[general] {sections_global}")
        for eid, _score in retrieved.ranked:
            entry = book.get(eid)
            if isinstance(entry.payload, (Guidance, GlobalGuidance)):
                guidance_texts.append(entry.payload.text)
            elif isinstance(entry.payload, TemplateEntry):
                template_sources.append(dsl.render_template(entry.payload.template))
    if guidance_texts:
        sections.append("Retrieved guidance:")
        sections.extend(f"- {t}" for t in guidance_texts)
    if template_sources:
        sections.append("Retrieved templates:")
        sections.extend(template_sources)
    return [("system", prior.system_prompt), ("user", "\n".join(sections))]


def _retrieved_templates(retrieved, book) -> dict:
    templates = {}
    if retrieved is None:
        return templates
    for eid, _score in retrieved.ranked:
        entry = book.get(eid)
        if isinstance(entry.payload, TemplateEntry):
            templates.setdefault(entry.payload.template.name, entry.payload.template)
    return templates


def _interpret_model_program(text: str, scene, templates: dict, registry) -> dsl.SkillProgram:
    """Model output is either a use_template directive or raw DSL."""
    lines = [l for l in text.strip().splitlines() if l.strip()]
    if lines:
        m = _USE_TEMPLATE_RE.match(lines[0])
        if m is not None:
            name = m.group(1)
            if name not in templates:
                raise GenerationError(
                    f"no retrieved template named {name!r}; available: {sorted(templates)}"
                )
            object_map = json.loads(m.group(2)) if m.group(2) else {}
            template = templates[name]
            args = template.default_args()
            if len(lines) > 1:
                overrides = json.loads("\n".join(lines[1:]))
                for pname, value in overrides.items():
                    args[pname] = (
                        dsl.Pose(tuple(value)) if isinstance(value, list) else dsl.Num(float(value))
                    )
            try:
                program = dsl.instantiate(template, scene, args, object_map)
            except dsl.DslError as exc:
                raise GenerationError(f"template instantiation failed: {exc}") from exc
        else:
            try:
                program = dsl.parse(text)
            except dsl.DslSyntaxError as exc:
                raise GenerationError(f"syntax error: {exc}") from exc
    else:
        raise GenerationError("empty program")
    issues = dsl.validate(program, registry)
    if issues:
        raise GenerationError("; ".join(str(i) for i in issues))
    return program


def generate_program(
    subtask: Subtask,
    scene,
    retrieved,
    prior: Prior,
    model,
    book: Optional[Skillbook] = None,
    config: Optional[MemoConfig] = None,
) -> dsl.SkillProgram:
    """Prompt the model for a program; feed parse/validate errors back for
    up to ``config.repair_rounds`` repair rounds, then fail with
    diagnostics."""
    config = config or MemoConfig()
    base = _assemble_generation_messages(subtask, scene, retrieved, book, prior)
    templates = _retrieved_templates(retrieved, book)
    messages = list(base)
    last_error = "model unavailable"
    for _round in range(1 + config.repair_rounds):
        try:
            resp = model.complete(ModelRequest("generate", tuple(messages)))
        except ModelError as exc:
            raise GenerationError(f"generation failed: {exc}") from exc
        try:
            return _interpret_model_program(resp.text, scene, templates, prior.registry)
        except (GenerationError, ValueError) as exc:
            last_error = str(exc)
            messages = list(base) + [
                ("user", f"That program is invalid: {last_error}. Write a corrected program.")
            ]
    raise GenerationError(f"no valid program after repairs: {last_error}")


# ---------------------------------------------------------------------------
# Teachers


class NullTeacher:
    """No human in the loop: never interrupts, never overrides verdicts."""

    def wants_interrupt(self) -> bool:
        return False

    def feedback(self, subtask_name, trace, program, subtask_ok):
        return None

    def verdict(self, subtask_name, computed_ok: bool) -> bool:
        return computed_ok


# ---------------------------------------------------------------------------
# Episode


@dataclass
class EpisodeResult:
    task_name: str
    outcome: str  # success | failure | aborted
    subtask_log: list
    feedback_count: int
    config: dict
    diagnostics: str = ""

    def to_json(self) -> dict:
        return {
            "task_name": self.task_name,
            "outcome": self.outcome,
            "subtask_log": self.subtask_log,
            "feedback_count": self.feedback_count,
            "config": self.config,
            "diagnostics": self.diagnostics,
        }


def on_success_templatize(
    program: dsl.SkillProgram,
    scene,
    subtask: Subtask,
    book: Skillbook,
    embedder,
    task_name: str = "",
    config: Optional[MemoConfig] = None,
) -> Optional[int]:
    """Store the executed program as a reusable template keyed by the
    subtask's action and objects.  Duplicate templates are skipped."""
    config = config or MemoConfig()
    primary_cls = "object"
    for label in subtask.object_labels:
        if label in scene.world.objects:
            primary_cls = scene.world.objects[label].cls
            break
    name = f"{subtask.action_label}_{primary_cls}".replace(" ", "_")
    template = dsl.templatize(program, scene, name)
    key = embed_key(
        embedder,
        subtask.action_label,
        subtask.object_labels,
        scene if config.use_scene_key else None,
    )
    payload = TemplateEntry(template)
    if book.find_active_duplicate(key, payload) is not None:
        return None
    return book.insert(key, payload, Provenance(task_name, "success"))


class _Interrupted(Exception):
    pass


def run_episode(
    spec: simenv.TaskSpec,
    book: Skillbook,
    model,
    embedder,
    teacher=None,
    config: Optional[MemoConfig] = None,
    prior: Optional[Prior] = None,
    no_retrieval: bool = False,
    events: Optional[Callable] = None,
) -> EpisodeResult:
    """Run one full task episode.  Limit exhaustion is a failure outcome,
    never an exception; only decomposition problems abort."""
    config = config or MemoConfig()
    teacher = teacher or NullTeacher()
    prior = prior or build_prior(dsl.default_registry())
    emit = events or (lambda event: None)

    world = simenv.reset(spec)
    feedback_budget = config.max_feedback_per_attempt
    feedback_count = 0
    subtask_log: list = []

    try:
        subtasks = decompose(spec.command, world.scene_graph(), model)
    except DecomposeError as exc:
        return EpisodeResult(
            spec.name, "aborted", [], 0, config.to_dict(), diagnostics=str(exc)
        )
    emit({"type": "decomposed", "subtasks": [s.description for s in subtasks]})

    all_ok = True
    diagnostics = ""
    for subtask in subtasks:
        checkpoint = world.checkpoint()
        attempts: list = []
        subtask_done = False
        emit({"type": "subtask_started", "subtask": subtask.description})

        for _attempt in range(config.max_attempts):
            scene = world.scene_graph()
            attempt_rec: dict = {"retrieval": None, "program": None, "steps": []}

            retrieved = None
            if not no_retrieval:
                query = build_query(subtask, scene, embedder, config)
                retrieved = retrieve_with_config(book, query, config)
                attempt_rec["retrieval"] = {
                    "ranked": [[eid, score] for eid, score in retrieved.ranked],
                    "globals": list(retrieved.globals),
                    "generation": retrieved.generation,
                }
                emit({"type": "retrieval", **attempt_rec["retrieval"]})

            program = None
            trace: list = []
            try:
                program = generate_program(
                    subtask, scene, retrieved, prior, model, book, config
                )
                attempt_rec["program"] = dsl.render(program)
                emit({"type": "program", "text": attempt_rec["program"]})
            except GenerationError as exc:
                attempt_rec["generation_error"] = str(exc)
                emit({"type": "generation_error", "error": str(exc)})

            if program is not None:
                def on_step(record):
                    emit({"type": "step", **record.to_json(), "world": world.to_json()})
                    if teacher.wants_interrupt():
                        raise _Interrupted()

                try:
                    trace = world.run_program(program, on_step)
                except _Interrupted:
                    trace = []  # step records already emitted; teacher takes over
                attempt_rec["steps"] = [r.to_json() for r in trace]

            computed_ok = False
            try:
                computed_ok = program is not None and all(
                    r.ok for r in trace
                ) and simenv.check_subtask(spec, subtask.description, world)
            except simenv.UnknownPredicateError:
                computed_ok = False
            subtask_ok = teacher.verdict(subtask.description, computed_ok)
            attempt_rec["subtask_ok"] = subtask_ok

            if subtask_ok:
                template_id = on_success_templatize(
                    program, scene, subtask, book, embedder, spec.name, config
                )
                attempt_rec["template_id"] = template_id
                attempts.append(attempt_rec)
                emit({"type": "subtask_result", "subtask": subtask.description, "ok": True})
                subtask_done = True
                break

            fb_text = None
            if feedback_budget > 0:
                fb_text = teacher.feedback(subtask.description, trace, program, subtask_ok)
            if fb_text:
                ctx = FeedbackContext(
                    task_name=spec.name,
                    action_label=subtask.action_label,
                    object_labels=subtask.object_labels,
                    scene=scene,
                    failed_program=program,
                    iteration=len(attempts),
                )
                parsed = parse_feedback(fb_text, ctx, model)
                new_ids = ingest(parsed, ctx, book, embedder, config)
                feedback_count += 1
                feedback_budget -= 1
                attempt_rec["feedback"] = {
                    "raw": fb_text,
                    "local": parsed.local_text,
                    "general": parsed.general_text,
                    "entry_ids": new_ids,
                }
                emit({"type": "feedback", **attempt_rec["feedback"]})
                attempts.append(attempt_rec)
                world.restore(checkpoint)
                continue

            attempts.append(attempt_rec)
            emit({"type": "subtask_result", "subtask": subtask.description, "ok": False})
            break

        subtask_log.append(
            {
                "subtask": {
                    "description": subtask.description,
                    "action": subtask.action_label,
                    "objects": list(subtask.object_labels),
                },
                "attempts": attempts,
                "succeeded": subtask_done,
            }
        )
        if not subtask_done:
            all_ok = False
            diagnostics = (
                f"subtask {subtask.description!r} not achieved after "
                f"{len(attempts)} attempt(s)"
            )
            break

    outcome = "failure"
    if all_ok and simenv.check_success(spec, world):
        outcome = "success"
    result = EpisodeResult(
        spec.name, outcome, subtask_log, feedback_count, config.to_dict(),
        diagnostics=diagnostics,
    )
    emit({"type": "episode_result", **result.to_json()})
    return result
