/** Operator gestures -> protocol commands, with paused-only gating.
 *
 * Mutating gestures made while the session is running produce no command
 * at all; the toolbar run/pause toggles are always allowed. Server
 * rejections surface as toasts and never change local state.
 */

import type { CommandRequest, RunState } from "./protocol.js";

export type Gesture =
  | { kind: "drag_agent"; agentId: number; to: number[] }
  | { kind: "retarget"; agentId: number; targetId: number }
  | { kind: "retarget_cell"; agentId: number; cell: number[] }
  | { kind: "toolbar"; button: "pause" | "resume" | "save" }
  | { kind: "step"; n: number }
  | { kind: "timeline"; index: number; direction: "rewind" | "forward" }
  | { kind: "explain"; agentId: number; method: "lime" | "shap" };

const ALWAYS_ALLOWED = new Set(["pause", "resume"]);

export interface GestureOutcome {
  command: CommandRequest | null;
  blocked: string | null; // reason shown as a toast when no command is sent
}

export function gestureToCommand(
  gesture: Gesture,
  runState: RunState,
): GestureOutcome {
  const mutating = !(
    gesture.kind === "toolbar" && ALWAYS_ALLOWED.has(gesture.button)
  );
  if (mutating && runState === "running") {
    return { command: null, blocked: "pause the session first" };
  }
  switch (gesture.kind) {
    case "drag_agent":
      return {
        command: { type: "move_agent", agent_id: gesture.agentId, position: gesture.to },
        blocked: null,
      };
    case "retarget":
      return {
        command: {
          type: "set_agent_target",
          agent_id: gesture.agentId,
          target_id: gesture.targetId,
        },
        blocked: null,
      };
    case "retarget_cell":
      return {
        command: {
          type: "set_agent_target",
          agent_id: gesture.agentId,
          position: gesture.cell,
        },
        blocked: null,
      };
    case "toolbar":
      if (gesture.button === "save") {
        return { command: { type: "save_state" }, blocked: null };
      }
      return { command: { type: gesture.button }, blocked: null };
    case "step":
      return { command: { type: "step", n: gesture.n }, blocked: null };
    case "timeline":
      return {
        command: {
          type: gesture.direction === "rewind" ? "rewind" : "forward_to",
          index: gesture.index,
        },
        blocked: null,
      };
    case "explain":
      return {
        command: { type: "explain", agent_id: gesture.agentId, method: gesture.method },
        blocked: null,
      };
  }
}
