// Thin typed client over the service HTTP API, plus the event stream with
// a 1 s polling fallback. Everything is injectable (fetch, timers) so the
// client is fully testable without a browser.

import type {
  ClusterReport,
  EntriesResponse,
  EpisodeEvent,
  EpisodeStateResponse,
  SkillbookStats,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }

  /** Human wording for the console's status line. */
  get friendly(): string {
    if (this.status === 409 && this.detail.includes("feedback")) {
      return "robot is not awaiting feedback";
    }
    return this.detail;
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = (await resp.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body: keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class ConsoleClient {
  constructor(
    private readonly base: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private get(url: string): Promise<Response> {
    return this.fetchImpl(this.base + url);
  }

  private post(url: string, body?: unknown): Promise<Response> {
    return this.fetchImpl(this.base + url, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
  }

  entries(opts: { active?: boolean; query?: string } = {}): Promise<EntriesResponse> {
    const params = new URLSearchParams();
    if (opts.active !== undefined) params.set("active", String(opts.active));
    if (opts.query) params.set("query", opts.query);
    const qs = params.toString();
    return this.get(`/skillbook/entries${qs ? `?${qs}` : ""}`).then((r) =>
      asJson<EntriesResponse>(r),
    );
  }

  stats(): Promise<SkillbookStats> {
    return this.get("/skillbook/stats").then((r) => asJson<SkillbookStats>(r));
  }

  cluster(): Promise<ClusterReport> {
    return this.post("/cluster").then((r) => asJson<ClusterReport>(r));
  }

  startEpisode(task: string, noRetrieval = false): Promise<{ episode_id: number }> {
    return this.post("/episodes", { task, no_retrieval: noRetrieval }).then((r) =>
      asJson<{ episode_id: number }>(r),
    );
  }

  episodeState(id: number): Promise<EpisodeStateResponse> {
    return this.get(`/episodes/${id}/state`).then((r) =>
      asJson<EpisodeStateResponse>(r),
    );
  }

  interrupt(id: number): Promise<void> {
    return this.post(`/episodes/${id}/interrupt`).then((r) => asJson(r)).then(() => {});
  }

  /** Rejects locally on empty text; the service would answer 422 anyway. */
  feedback(id: number, text: string): Promise<void> {
    if (!text.trim()) {
      return Promise.reject(new ApiError(422, "feedback text must be non-empty"));
    }
    return this.post(`/episodes/${id}/feedback`, { text }).then((r) => asJson(r)).then(() => {});
  }

  verdict(id: number, subtaskOk: boolean): Promise<void> {
    return this.post(`/episodes/${id}/verdict`, { subtask_ok: subtaskOk })
      .then((r) => asJson(r))
      .then(() => {});
  }

  eventStreamUrl(id: number): string {
    return `${this.base}/episodes/${id}/events`;
  }
}

/** Parse server-sent-event frames out of a text chunk stream. Returns a
 * feeder: call it with each chunk; complete `data:` payloads are emitted
 * through onEvent in arrival order. */
export function sseParser(onEvent: (event: EpisodeEvent) => void): (chunk: string) => void {
  let buffer = "";
  return (chunk: string) => {
    buffer += chunk;
    let sep: number;
    while ((sep = buffer.indexOf("\n\n")) >= 0) {
      const frame = buffer.slice(0, sep);
      buffer = buffer.slice(sep + 2);
      for (const line of frame.split("\n")) {
        if (line.startsWith("data: ")) {
          onEvent(JSON.parse(line.slice(6)) as EpisodeEvent);
        }
      }
    }
  };
}

export interface StreamHandle {
  stop(): void;
}

export interface StreamCallbacks {
  onEvent(event: EpisodeEvent): void;
  /** Entered polling-fallback or recovered; drives the stale-state banner. */
  onFallback(active: boolean): void;
  onState?(state: EpisodeStateResponse): void;
}

/** Subscribe to an episode's event stream; on stream failure fall back to
 * polling /state every `pollMs` (default 1000) with a visible-stale flag. */
export function subscribeEpisode(
  client: ConsoleClient,
  fetchImpl: FetchLike,
  episodeId: number,
  callbacks: StreamCallbacks,
  pollMs = 1000,
  setIntervalImpl: typeof setInterval = setInterval,
  clearIntervalImpl: typeof clearInterval = clearInterval,
): StreamHandle {
  let stopped = false;
  let poller: ReturnType<typeof setInterval> | null = null;

  const startPolling = () => {
    if (stopped || poller !== null) return;
    callbacks.onFallback(true);
    poller = setIntervalImpl(() => {
      client
        .episodeState(episodeId)
        .then((state) => {
          callbacks.onState?.(state);
          if (state.done && poller !== null) {
            clearIntervalImpl(poller);
            poller = null;
          }
        })
        .catch(() => {
          // keep polling; the banner is already up
        });
    }, pollMs);
  };

  const run = async () => {
    try {
      const resp = await fetchImpl(client.eventStreamUrl(episodeId));
      if (!resp.ok || !resp.body) throw new ApiError(resp.status, "stream unavailable");
      callbacks.onFallback(false);
      const reader = resp.body.getReader();
      const decoder = new TextDecoder();
      const feed = sseParser((event) => {
        if (!stopped) callbacks.onEvent(event);
      });
      for (;;) {
        const { done, value } = await reader.read();
        if (done || stopped) break;
        feed(decoder.decode(value, { stream: true }));
      }
    } catch {
      if (!stopped) startPolling();
    }
  };
  void run();

  return {
    stop() {
      stopped = true;
      if (poller !== null) {
        clearIntervalImpl(poller);
        poller = null;
      }
    },
  };
}
