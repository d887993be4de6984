"""HTTP service for the web console.

Episodes run on a worker thread; the console steers them through plain
POSTs (interrupt / feedback / verdict) and watches a server-sent event
stream.  A disconnected console never blocks progress: the interactive
teacher waits at most ``heartbeat_timeout`` seconds for feedback, then
resumes autonomously.
"""

from __future__ import annotations

import json
import queue
import threading
from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.responses import StreamingResponse
from pydantic import BaseModel

from . import cluster as cluster_mod
from . import dsl, policy, simenv
from .config import MemoConfig
from .embedding import embed_key
from .skillbook import (
    SCHEMA_VERSION,
    RetrievalQuery,
    Skillbook,
    TemplateEntry,
    retrieve_with_config,
)


class InteractiveTeacher:
    """Bridges HTTP steering into the episode loop.

    ``wants_interrupt`` consumes one pending interrupt; ``feedback`` waits
    up to the heartbeat timeout for a POSTed correction; ``verdict``
    consumes a pending human override if one was posted, else keeps the
    computed result.
    """

    def __init__(self, heartbeat_timeout: float):
        self.heartbeat_timeout = heartbeat_timeout
        self._interrupt = threading.Event()
        self._feedback: "queue.Queue[str]" = queue.Queue()
        self._verdicts: "queue.Queue[bool]" = queue.Queue()
        self.awaiting_feedback = False

    # console-facing -------------------------------------------------------

    def post_interrupt(self):
        self._interrupt.set()

    def post_feedback(self, text: str) -> bool:
        if not self.awaiting_feedback:
            return False
        self._feedback.put(text)
        return True

    def post_verdict(self, subtask_ok: bool):
        self._verdicts.put(subtask_ok)

    # episode-facing -------------------------------------------------------

    def wants_interrupt(self) -> bool:
        if self._interrupt.is_set():
            self._interrupt.clear()
            return True
        return False

    def feedback(self, subtask_name, trace, program, subtask_ok) -> Optional[str]:
        self.awaiting_feedback = True
        try:
            return self._feedback.get(timeout=self.heartbeat_timeout)
        except queue.Empty:
            return None  # console silent: resume autonomously
        finally:
            self.awaiting_feedback = False

    def verdict(self, subtask_name, computed_ok: bool) -> bool:
        try:
            return self._verdicts.get_nowait()
        except queue.Empty:
            return computed_ok


class EpisodeSession:
    """One sequential episode: worker thread, event buffer, SSE fan-out."""

    def __init__(self, episode_id: int, spec, teacher: InteractiveTeacher):
        self.id = episode_id
        self.spec = spec
        self.teacher = teacher
        self.events: list = []
        self.result = None
        self.done = threading.Event()
        self._lock = threading.Lock()
        self._subscribers: list = []
        self.last_program: Optional[str] = None
        self.current_subtask: Optional[str] = None
        self.last_world: Optional[dict] = None

    def emit(self, event: dict):
        with self._lock:
            self.events.append(event)
            if event.get("type") == "program":
                self.last_program = event["text"]
            if event.get("type") == "subtask_started":
                self.current_subtask = event["subtask"]
            if event.get("type") == "step":
                self.last_world = event.get("world")
            subscribers = list(self._subscribers)
        for q in subscribers:
            q.put(event)

    def subscribe(self) -> "queue.Queue":
        q: "queue.Queue" = queue.Queue()
        with self._lock:
            for event in self.events:
                q.put(event)
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q):
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)


class EpisodeRequest(BaseModel):
    task: str
    no_retrieval: bool = False


class FeedbackRequest(BaseModel):
    text: str


class VerdictRequest(BaseModel):
    subtask_ok: bool


def create_app(
    book: Skillbook,
    model,
    embedder,
    config: Optional[MemoConfig] = None,
    task_dir=None,
) -> FastAPI:
    config = config or MemoConfig()
    app = FastAPI(title="memo service")
    sessions: dict = {}
    state = {"next_id": 1, "running": None}
    lock = threading.Lock()

    def versioned(payload: dict) -> dict:
        return {"schema_version": SCHEMA_VERSION, **payload}

    def entry_json(e, score=None) -> dict:
        if isinstance(e.payload, TemplateEntry):
            text = dsl.render_template(e.payload.template)
        else:
            text = e.payload.text
        data = {
            "id": e.id,
            "kind": e.payload.type,
            "active": e.active,
            "text": text,
            "task": e.provenance.task_name,
            "source": e.provenance.source,
            "created_at": e.created_at,
        }
        if score is not None:
            data["score"] = score
        return data

    @app.get("/skillbook/entries")
    def skillbook_entries(active: Optional[bool] = None, query: Optional[str] = None):
        view = book.snapshot()
        if query:
            action, _, objects = query.partition("|")
            labels = tuple(o.strip() for o in objects.split(",") if o.strip())
            key = embed_key(embedder, action.strip() or "none", labels)
            result = retrieve_with_config(book, RetrievalQuery.from_key(key), config)
            entries = [
                entry_json(view.get(eid), score) for eid, score in result.ranked
            ] + [entry_json(view.get(gid)) for gid in result.globals]
        else:
            entries = [entry_json(e) for e in view.entries(active=active)]
        return versioned({"generation": view.generation, "entries": entries})

    @app.get("/skillbook/stats")
    def skillbook_stats():
        return versioned(book.stats())

    @app.post("/cluster")
    def run_cluster():
        try:
            report = cluster_mod.run_offline(book, model, config)
        except RuntimeError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return versioned(report.to_dict())

    @app.post("/episodes")
    def start_episode(req: EpisodeRequest):
        try:
            spec = simenv.find_task(req.task, task_dir)
        except simenv.SimError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        with lock:
            running = state["running"]
            if running is not None and not running.done.is_set():
                raise HTTPException(status_code=409, detail="an episode is already running")
            episode_id = state["next_id"]
            state["next_id"] += 1
            teacher = InteractiveTeacher(config.heartbeat_timeout)
            session = EpisodeSession(episode_id, spec, teacher)
            sessions[episode_id] = session
            state["running"] = session

        def work():
            result = policy.run_episode(
                spec, book, model, embedder,
                teacher=teacher, config=config,
                no_retrieval=req.no_retrieval, events=session.emit,
            )
            session.result = result
            session.done.set()
            session.emit({"type": "closed"})

        threading.Thread(target=work, daemon=True).start()
        return versioned({"episode_id": episode_id, "task": spec.name})

    def get_session(episode_id: int) -> EpisodeSession:
        session = sessions.get(episode_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"no episode {episode_id}")
        return session

    @app.get("/episodes/{episode_id}/state")
    def episode_state(episode_id: int):
        session = get_session(episode_id)
        return versioned(
            {
                "episode_id": session.id,
                "task": session.spec.name,
                "done": session.done.is_set(),
                "outcome": session.result.outcome if session.result else None,
                "current_subtask": session.current_subtask,
                "last_program": session.last_program,
                "awaiting_feedback": session.teacher.awaiting_feedback,
                "world": session.last_world,
                "generation": book.generation,
            }
        )

    @app.post("/episodes/{episode_id}/interrupt")
    def episode_interrupt(episode_id: int):
        session = get_session(episode_id)
        if session.done.is_set():
            raise HTTPException(status_code=409, detail="episode already finished")
        session.teacher.post_interrupt()
        return versioned({"interrupted": True})

    @app.post("/episodes/{episode_id}/feedback")
    def episode_feedback(episode_id: int, req: FeedbackRequest):
        session = get_session(episode_id)
        if not req.text.strip():
            raise HTTPException(status_code=422, detail="feedback text must be non-empty")
        if not session.teacher.post_feedback(req.text):
            raise HTTPException(status_code=409, detail="episode is not awaiting feedback")
        return versioned({"accepted": True})

    @app.post("/episodes/{episode_id}/verdict")
    def episode_verdict(episode_id: int, req: VerdictRequest):
        session = get_session(episode_id)
        if session.done.is_set():
            raise HTTPException(status_code=409, detail="episode already finished")
        session.teacher.post_verdict(req.subtask_ok)
        return versioned({"accepted": True})

    @app.get("/episodes/{episode_id}/events")
    def episode_events(episode_id: int):
        session = get_session(episode_id)

        def stream():
            q = session.subscribe()
            try:
                while True:
                    event = q.get()
                    yield f"data: {json.dumps(event, sort_keys=True)}\n\n"
                    if event.get("type") == "closed":
                        return
            finally:
                session.unsubscribe(q)

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app
