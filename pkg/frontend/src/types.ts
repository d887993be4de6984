// Shapes mirrored from the service's JSON responses (docs/api.md).

export interface WorldObject {
  label: string;
  cls: string;
  pose: number[]; // x y z roll pitch yaw
  dims: number[]; // dx dy dz
  graspable?: boolean;
  container?: boolean;
}

export interface WorldJoint {
  name: string;
  type: string;
  position: number;
  range: number[];
}

export interface WorldState {
  objects: WorldObject[];
  joints: WorldJoint[];
  gripper: { pose: number[]; held: string | null };
}

export interface EpisodeEvent {
  type: string;
  [key: string]: unknown;
}

export interface EpisodeStateResponse {
  schema_version: number;
  episode_id: number;
  task: string;
  done: boolean;
  outcome: string | null;
  current_subtask: string | null;
  last_program: string | null;
  awaiting_feedback: boolean;
  world: WorldState | null;
  generation: number;
}

export interface SkillbookEntry {
  id: number;
  kind: "guidance" | "global" | "template";
  active: boolean;
  text: string;
  task: string;
  source: string;
  created_at: number;
  score?: number;
}

export interface EntriesResponse {
  schema_version: number;
  generation: number;
  entries: SkillbookEntry[];
}

export interface ClusterReport {
  schema_version: number;
  clusters: number;
  sizes: number[];
  pruned: number[];
  char_before: number;
  char_after: number;
  entries_before: number;
  entries_after: number;
  generation: number;
}

export interface SkillbookStats {
  schema_version: number;
  generation: number;
  [counter: string]: number;
}
