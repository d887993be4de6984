// Pure episode-view state: events (or polled state) in, view model out.
// Keeping this a reducer makes the steering workflow testable end to end
// without a DOM.

import type { EpisodeEvent, EpisodeStateResponse, WorldState, ClusterReport } from "./types.js";

export interface FeedbackRecord {
  raw: string;
  local: string;
  general: string | null;
  entryIds: number[];
}

export interface EpisodeView {
  subtasks: string[];
  currentSubtask: string | null;
  program: string | null;
  world: WorldState | null;
  stepCount: number;
  feedback: FeedbackRecord[];
  subtaskResults: { subtask: string; ok: boolean }[];
  outcome: string | null;
  done: boolean;
  awaitingFeedback: boolean;
  stale: boolean;
  lastError: string | null;
}

export function initialView(): EpisodeView {
  return {
    subtasks: [],
    currentSubtask: null,
    program: null,
    world: null,
    stepCount: 0,
    feedback: [],
    subtaskResults: [],
    outcome: null,
    done: false,
    awaitingFeedback: false,
    stale: false,
    lastError: null,
  };
}

export function applyEvent(view: EpisodeView, event: EpisodeEvent): EpisodeView {
  const next = { ...view };
  switch (event.type) {
    case "decomposed":
      next.subtasks = event.subtasks as string[];
      break;
    case "subtask_started":
      next.currentSubtask = event.subtask as string;
      next.program = null;
      break;
    case "program":
      next.program = event.text as string;
      break;
    case "step":
      next.stepCount = view.stepCount + 1;
      if (event.world) next.world = event.world as WorldState;
      break;
    case "feedback":
      next.feedback = [
        ...view.feedback,
        {
          raw: event.raw as string,
          local: event.local as string,
          general: (event.general as string | null) ?? null,
          entryIds: (event.entry_ids as number[]) ?? [],
        },
      ];
      next.awaitingFeedback = false;
      break;
    case "subtask_result":
      next.subtaskResults = [
        ...view.subtaskResults,
        { subtask: event.subtask as string, ok: event.ok as boolean },
      ];
      break;
    case "generation_error":
      next.lastError = event.error as string;
      break;
    case "episode_result":
      next.outcome = event.outcome as string;
      break;
    case "closed":
      next.done = true;
      break;
    default:
      break; // unknown event types are forward-compatible no-ops
  }
  return next;
}

/** Merge a polled /state response (fallback path) into the view. */
export function applyPolledState(view: EpisodeView, state: EpisodeStateResponse): EpisodeView {
  return {
    ...view,
    currentSubtask: state.current_subtask,
    program: state.last_program,
    world: state.world ?? view.world,
    awaitingFeedback: state.awaiting_feedback,
    outcome: state.outcome,
    done: state.done,
  };
}

export function setStale(view: EpisodeView, stale: boolean): EpisodeView {
  return { ...view, stale };
}

export function setAwaiting(view: EpisodeView, awaiting: boolean): EpisodeView {
  return { ...view, awaitingFeedback: awaiting };
}

// ---------------------------------------------------------------------------
// Cluster diff view

export interface ClusterDiff {
  entries: { before: number; after: number };
  chars: { before: number; after: number };
  pruned: number[];
  clusters: number;
  shrankOrEqual: boolean;
}

export function clusterDiff(report: ClusterReport): ClusterDiff {
  return {
    entries: { before: report.entries_before, after: report.entries_after },
    chars: { before: report.char_before, after: report.char_after },
    pruned: report.pruned,
    clusters: report.clusters,
    shrankOrEqual:
      report.entries_after <= report.entries_before &&
      report.char_after <= report.char_before,
  };
}
