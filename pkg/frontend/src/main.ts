// DOM wiring for the console. All state changes flow through the HTTP API;
// this file only renders the view model and forwards user intent.

import { ApiError, ConsoleClient, subscribeEpisode, type StreamHandle } from "./api.js";
import { drawScene, jointSummaries, type Viewport } from "./render.js";
import {
  applyEvent,
  applyPolledState,
  clusterDiff,
  initialView,
  setAwaiting,
  setStale,
  type EpisodeView,
} from "./state.js";
import type { SkillbookEntry } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const client = new ConsoleClient("");
const vp: Viewport = { width: 640, height: 480, worldSpan: 1.6 };

let view: EpisodeView = initialView();
let episodeId: number | null = null;
let stream: StreamHandle | null = null;

function status(text: string): void {
  $("status").textContent = text;
}

function render(): void {
  $("subtasks").textContent = view.subtasks
    .map((s) => (s === view.currentSubtask ? `> ${s}` : `  ${s}`))
    .join("\n");
  $("program").textContent = view.program ?? "(no program yet)";
  $("outcome").textContent = view.done
    ? `finished: ${view.outcome ?? "unknown"}`
    : view.currentSubtask
      ? `running: ${view.currentSubtask}`
      : "idle";
  $("stale-banner").hidden = !view.stale;
  ($("feedback-text") as HTMLTextAreaElement).disabled = !view.awaitingFeedback;
  ($("feedback-send") as HTMLButtonElement).disabled = !view.awaitingFeedback;
  $("feedback-log").textContent = view.feedback
    .map((f) => `you: ${f.raw}\n  -> ${f.local}${f.general ? `\n  -> [global] ${f.general}` : ""}`)
    .join("\n");
  if (view.world) {
    const canvas = $("scene") as HTMLCanvasElement;
    const ctx = canvas.getContext("2d");
    if (ctx) drawScene(ctx, view.world, vp);
    $("joints").textContent = jointSummaries(view.world).join("\n");
  }
}

function update(next: EpisodeView): void {
  view = next;
  render();
}

async function refreshSkillbook(): Promise<void> {
  const showInactive = ($("show-inactive") as HTMLInputElement).checked;
  const query = ($("book-query") as HTMLInputElement).value.trim();
  const resp = await client.entries({
    active: showInactive ? undefined : true,
    query: query || undefined,
  });
  const rows = resp.entries
    .map((e: SkillbookEntry) => {
      const score = e.score !== undefined ? e.score.toFixed(4) : "      ";
      const flag = e.active ? " " : "x";
      return `${score} ${flag} #${e.id} ${e.kind.padEnd(8)} ${e.text}`;
    })
    .join("\n");
  $("book-table").textContent = rows || "(empty skillbook)";
  $("book-gen").textContent = `generation ${resp.generation}`;
}

async function startEpisode(): Promise<void> {
  const task = ($("task-input") as HTMLInputElement).value.trim();
  if (!task) return;
  try {
    const { episode_id } = await client.startEpisode(
      task,
      ($("no-retrieval") as HTMLInputElement).checked,
    );
    episodeId = episode_id;
    stream?.stop();
    update(initialView());
    status(`episode ${episode_id} started`);
    stream = subscribeEpisode(client, (u, i) => fetch(u, i), episode_id, {
      onEvent: (event) => {
        update(applyEvent(view, event));
        if (event.type === "feedback" || event.type === "closed") void refreshSkillbook();
      },
      onFallback: (active) => update(setStale(view, active)),
      onState: (state) => update(applyPolledState(view, state)),
    });
    pollAwaiting();
  } catch (err) {
    status(err instanceof ApiError ? err.friendly : String(err));
  }
}

// awaiting_feedback lives in /state, not the event stream; poll it lightly
function pollAwaiting(): void {
  const timer = setInterval(async () => {
    if (episodeId === null || view.done) {
      clearInterval(timer);
      return;
    }
    try {
      const state = await client.episodeState(episodeId);
      update(setAwaiting(view, state.awaiting_feedback));
    } catch {
      // transient; the stream fallback owns the stale banner
    }
  }, 500);
}

function wire(): void {
  $("start").addEventListener("click", () => void startEpisode());
  $("interrupt").addEventListener("click", () => {
    if (episodeId === null) return;
    client
      .interrupt(episodeId)
      .then(() => status("interrupt sent"))
      .catch((err) => status(err instanceof ApiError ? err.friendly : String(err)));
  });
  $("feedback-send").addEventListener("click", () => {
    if (episodeId === null) return;
    const box = $("feedback-text") as HTMLTextAreaElement;
    client
      .feedback(episodeId, box.value)
      .then(() => {
        box.value = "";
        status("feedback accepted");
      })
      .catch((err) => status(err instanceof ApiError ? err.friendly : String(err)));
  });
  for (const [id, ok] of [
    ["verdict-ok", true],
    ["verdict-fail", false],
  ] as const) {
    $(id).addEventListener("click", () => {
      if (episodeId === null) return;
      client
        .verdict(episodeId, ok)
        .then(() => status(`verdict ${ok ? "success" : "failure"} sent`))
        .catch((err) => status(err instanceof ApiError ? err.friendly : String(err)));
    });
  }
  $("book-refresh").addEventListener("click", () => void refreshSkillbook());
  $("book-query").addEventListener("change", () => void refreshSkillbook());
  $("show-inactive").addEventListener("change", () => void refreshSkillbook());
  $("cluster").addEventListener("click", async () => {
    try {
      const diff = clusterDiff(await client.cluster());
      $("cluster-diff").textContent =
        `clusters ${diff.clusters}; entries ${diff.entries.before} -> ${diff.entries.after}; ` +
        `chars ${diff.chars.before} -> ${diff.chars.after}; pruned [${diff.pruned.join(", ")}]`;
      void refreshSkillbook();
    } catch (err) {
      status(err instanceof ApiError ? err.friendly : String(err));
    }
  });
  void refreshSkillbook();
}

wire();
