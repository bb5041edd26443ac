/** Wire types for the control-service JSON protocol (schema version 1). */

export type RunState = "paused" | "running" | "terminal";

export interface AgentView {
  id: number;
  position: number[];
  alive: boolean;
  mode: string;
  assigned_target: number | null;
  reference: number[] | null;
}

export interface TargetView {
  id: number;
  position: number[];
  seen: boolean;
  escaped: boolean;
}

export interface ObstacleView {
  id: number;
  center: number[];
  half_extent: number;
  safety_margin: number;
}

export interface GridView {
  width: number;
  height: number;
  depth: number;
  margin: number;
}

export interface SceneDelta {
  seq: number;
  type: "scene_delta";
  cycle: number;
  outcome: string;
  agents: AgentView[];
  targets: TargetView[];
}

export interface SavedState {
  index: number;
  label: string;
  cycle: number;
}

export interface SessionInfo {
  cycle: number;
  outcome: string;
  run_state: RunState;
  grid: GridView;
  obstacles: ObstacleView[];
  agents: AgentView[];
  targets_seen: number;
  targets_total: number;
  saved_states: SavedState[];
}

export interface Explanation {
  agent_id: number;
  method: "LIME" | "SHAP";
  shape: number[];
  n_samples: number;
  greedy_action: number;
  probs: number[];
  fidelity: number[];
  per_action: number[][];
}

export type ServiceEvent = { seq: number; type: string } & Record<string, unknown>;

export interface CommandRequest {
  type: string;
  n?: number;
  label?: string;
  index?: number;
  agent_id?: number;
  position?: number[];
  target_id?: number;
  method?: string;
}

export interface CommandAck {
  ok: boolean;
  type: string;
  result: Record<string, unknown>;
}

export interface ServiceRejection {
  code: string;
  message: string;
}
