import { gestureToCommand, type Gesture } from "../src/gestures";
import type { RunState } from "../src/protocol";

const MUTATING: Gesture[] = [
  { kind: "drag_agent", agentId: 0, to: [5, 6] },
  { kind: "retarget", agentId: 0, targetId: 2 },
  { kind: "retarget_cell", agentId: 1, cell: [9, 9] },
  { kind: "toolbar", button: "save" },
  { kind: "step", n: 5 },
  { kind: "timeline", index: 0, direction: "rewind" },
  { kind: "timeline", index: 1, direction: "forward" },
  { kind: "explain", agentId: 0, method: "lime" },
];

describe("paused-only gating", () => {
  it("blocks every mutating gesture while running", () => {
    for (const gesture of MUTATING) {
      const outcome = gestureToCommand(gesture, "running");
      expect(outcome.command).toBeNull();
      expect(outcome.blocked).toMatch(/pause/);
    }
  });

  it("allows every mutating gesture while paused", () => {
    for (const gesture of MUTATING) {
      const outcome = gestureToCommand(gesture, "paused");
      expect(outcome.command).not.toBeNull();
      expect(outcome.blocked).toBeNull();
    }
  });

  it("always allows pause and resume", () => {
    const states: RunState[] = ["paused", "running", "terminal"];
    for (const state of states) {
      expect(gestureToCommand({ kind: "toolbar", button: "pause" }, state).command)
        .toEqual({ type: "pause" });
      expect(gestureToCommand({ kind: "toolbar", button: "resume" }, state).command)
        .toEqual({ type: "resume" });
    }
  });
});

describe("command mapping", () => {
  it("maps a drag to move_agent", () => {
    expect(
      gestureToCommand({ kind: "drag_agent", agentId: 3, to: [7, 8] }, "paused").command,
    ).toEqual({ type: "move_agent", agent_id: 3, position: [7, 8] });
  });

  it("maps retargeting by target id and by cell", () => {
    expect(
      gestureToCommand({ kind: "retarget", agentId: 0, targetId: 2 }, "paused").command,
    ).toEqual({ type: "set_agent_target", agent_id: 0, target_id: 2 });
    expect(
      gestureToCommand({ kind: "retarget_cell", agentId: 0, cell: [4, 5] }, "paused")
        .command,
    ).toEqual({ type: "set_agent_target", agent_id: 0, position: [4, 5] });
  });

  it("maps stepping with a count", () => {
    expect(gestureToCommand({ kind: "step", n: 5 }, "paused").command).toEqual({
      type: "step",
      n: 5,
    });
  });

  it("maps timeline moves to rewind and forward_to", () => {
    expect(
      gestureToCommand({ kind: "timeline", index: 2, direction: "rewind" }, "paused")
        .command,
    ).toEqual({ type: "rewind", index: 2 });
    expect(
      gestureToCommand({ kind: "timeline", index: 2, direction: "forward" }, "paused")
        .command,
    ).toEqual({ type: "forward_to", index: 2 });
  });

  it("maps save and explanation requests", () => {
    expect(gestureToCommand({ kind: "toolbar", button: "save" }, "paused").command)
      .toEqual({ type: "save_state" });
    expect(
      gestureToCommand({ kind: "explain", agentId: 1, method: "shap" }, "paused").command,
    ).toEqual({ type: "explain", agent_id: 1, method: "shap" });
  });
});
