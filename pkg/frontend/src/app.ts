/** Browser wiring: canvas scene, toolbar, timeline strip, heatmap panel.
 *
 * All logic that warrants tests lives in the pure modules (scene, heatmap,
 * gestures, timeline, client); this file only binds them to the DOM.
 */

import { CommandRejected, SessionClient } from "./client.js";
import { gestureToCommand, type Gesture } from "./gestures.js";
import { buildHeatmaps, panelOrder } from "./heatmap.js";
import type {
  Explanation,
  RunState,
  SceneDelta,
  SessionInfo,
} from "./protocol.js";
import { acceptDelta, buildScene, type Glyph } from "./scene.js";
import { Timeline } from "./timeline.js";

const CELL = 4; // canvas pixels per grid cell

interface AppState {
  client: SessionClient;
  info: SessionInfo;
  runState: RunState;
  lastDelta: SceneDelta | null;
  lastCycle: number | null;
  justRestored: boolean;
  selectedAgent: number | null;
  timeline: Timeline;
}

function toast(message: string): void {
  const el = document.getElementById("toasts")!;
  const node = document.createElement("div");
  node.className = "toast";
  node.textContent = message;
  el.appendChild(node);
  setTimeout(() => node.remove(), 4000);
}

function drawScene(state: AppState, canvas: HTMLCanvasElement): void {
  if (!state.lastDelta) return;
  const ctx = canvas.getContext("2d")!;
  const { width, height } = state.info.grid;
  canvas.width = width * CELL;
  canvas.height = height * CELL;
  ctx.fillStyle = "#ffffff";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  const glyphs = buildScene(state.lastDelta, state.info.grid, state.info.obstacles);
  for (const glyph of glyphs) drawGlyph(ctx, glyph, state.selectedAgent);
  document.getElementById("cycle")!.textContent =
    `cycle ${state.lastDelta.cycle} (${state.lastDelta.outcome})`;
}

function drawGlyph(
  ctx: CanvasRenderingContext2D,
  glyph: Glyph,
  selected: number | null,
): void {
  ctx.fillStyle = glyph.color;
  const px = glyph.x * CELL;
  const py = glyph.y * CELL;
  if (glyph.kind === "obstacle") {
    const r = glyph.size * CELL;
    ctx.fillRect(px - r, py - r, 2 * r + CELL, 2 * r + CELL);
  } else {
    ctx.beginPath();
    ctx.arc(px + CELL / 2, py + CELL / 2, 1.6 * CELL, 0, 2 * Math.PI);
    ctx.fill();
    if (glyph.kind === "agent" && glyph.id === selected) {
      ctx.strokeStyle = "#e8a000";
      ctx.lineWidth = 2;
      ctx.stroke();
    }
  }
  if (glyph.zLabel) {
    ctx.fillStyle = "#000000";
    ctx.font = "10px monospace";
    ctx.fillText(glyph.zLabel, px + 2 * CELL, py);
  }
  if (glyph.badge) {
    ctx.fillStyle = glyph.grayed ? "#9a9a9a" : "#333333";
    ctx.font = "10px monospace";
    ctx.fillText(glyph.badge, px + 2 * CELL, py + 3 * CELL);
  }
}

function drawHeatmaps(explanation: Explanation): void {
  const panel = document.getElementById("heatmaps")!;
  panel.innerHTML = "";
  const layers = buildHeatmaps(explanation);
  const [w, h] = explanation.shape;
  for (const action of panelOrder(explanation)) {
    const layer = layers[action];
    const box = document.createElement("div");
    box.className = "heatmap" + (action === explanation.greedy_action ? " greedy" : "");
    const title = document.createElement("div");
    title.textContent =
      `action ${action} p=${explanation.probs[action].toFixed(3)} ` +
      `fidelity=${explanation.fidelity[action].toFixed(3)}`;
    box.appendChild(title);
    if (layer.empty) {
      const note = document.createElement("div");
      note.textContent = "no signal";
      box.appendChild(note);
    } else {
      const canvas = document.createElement("canvas");
      canvas.width = w * 8;
      canvas.height = h * 8;
      const ctx = canvas.getContext("2d")!;
      layer.cells.forEach((rgba, i) => {
        const x = Math.floor(i / h);
        const y = i % h;
        ctx.fillStyle = `rgba(${rgba[0]},${rgba[1]},${rgba[2]},${rgba[3] / 255})`;
        ctx.fillRect(x * 8, y * 8, 8, 8);
      });
      box.appendChild(canvas);
    }
    panel.appendChild(box);
  }
}

async function send(state: AppState, gesture: Gesture): Promise<void> {
  const { command, blocked } = gestureToCommand(gesture, state.runState);
  if (!command) {
    if (blocked) toast(blocked);
    return;
  }
  try {
    const ack = await state.client.command(command);
    if (command.type === "resume") state.runState = "running";
    if (command.type === "pause") state.runState = "paused";
    if (command.type === "rewind" || command.type === "forward_to") {
      state.justRestored = true;
      state.timeline.seek(command.index!);
    }
    if (command.type === "save_state") {
      const result = ack.result as { index: number; cycle: number };
      state.timeline.record({ index: result.index, label: "", cycle: result.cycle });
      renderTimeline(state);
    }
  } catch (err) {
    if (err instanceof CommandRejected) toast(err.message);
    else throw err;
  }
}

function renderTimeline(state: AppState): void {
  const strip = document.getElementById("timeline")!;
  strip.innerHTML = "";
  for (const snap of state.timeline.entries) {
    const chip = document.createElement("button");
    chip.textContent = `#${snap.index} @${snap.cycle}`;
    chip.onclick = () => {
      void send(state, { kind: "timeline", index: snap.index, direction: "rewind" });
    };
    strip.appendChild(chip);
  }
}

async function pump(state: AppState, canvas: HTMLCanvasElement): Promise<void> {
  for (;;) {
    const events = await state.client.pollEvents();
    for (const event of events) {
      if (event.type === "scene_delta") {
        const delta = event as unknown as SceneDelta;
        if (acceptDelta(state.lastCycle, delta, state.justRestored)) {
          state.lastDelta = delta;
          state.lastCycle = delta.cycle;
          state.justRestored = false;
          drawScene(state, canvas);
        }
      } else if (event.type === "explanation_ready") {
        drawHeatmaps(event as unknown as Explanation);
      } else if (event.type === "terminal") {
        state.runState = "terminal";
        toast(`episode ended: ${event["outcome"]}`);
      }
    }
    state.info = await state.client.info();
    state.runState = state.info.run_state;
    await new Promise((resolve) => setTimeout(resolve, 150));
  }
}

export async function start(base: string, scenario: object, seed: number): Promise<void> {
  const client = await SessionClient.create(base, { scenario, seed }, fetch as never);
  const state: AppState = {
    client,
    info: await client.info(),
    runState: "paused",
    lastDelta: null,
    lastCycle: null,
    justRestored: false,
    selectedAgent: null,
    timeline: new Timeline(),
  };
  const canvas = document.getElementById("scene") as HTMLCanvasElement;

  canvas.addEventListener("mousedown", (ev) => {
    const cell = [Math.floor(ev.offsetX / CELL), Math.floor(ev.offsetY / CELL)];
    if (ev.button === 2 && state.selectedAgent !== null) {
      const target = state.lastDelta?.targets.find(
        (t) => t.position[0] === cell[0] && t.position[1] === cell[1],
      );
      void send(
        state,
        target
          ? { kind: "retarget", agentId: state.selectedAgent, targetId: target.id }
          : { kind: "retarget_cell", agentId: state.selectedAgent, cell },
      );
      return;
    }
    const agent = state.lastDelta?.agents.find(
      (a) =>
        Math.abs(a.position[0] - cell[0]) <= 1 && Math.abs(a.position[1] - cell[1]) <= 1,
    );
    state.selectedAgent = agent ? agent.id : null;
    drawScene(state, canvas);
  });
  canvas.addEventListener("contextmenu", (ev) => ev.preventDefault());
  canvas.addEventListener("mouseup", (ev) => {
    if (ev.button !== 0 || state.selectedAgent === null) return;
    const cell = [Math.floor(ev.offsetX / CELL), Math.floor(ev.offsetY / CELL)];
    const agent = state.lastDelta?.agents.find((a) => a.id === state.selectedAgent);
    if (agent && (agent.position[0] !== cell[0] || agent.position[1] !== cell[1])) {
      void send(state, { kind: "drag_agent", agentId: state.selectedAgent, to: cell });
    }
  });

  const bind = (id: string, gesture: () => Gesture) => {
    document.getElementById(id)!.onclick = () => void send(state, gesture());
  };
  bind("btn-run", () => ({ kind: "toolbar", button: "resume" }));
  bind("btn-pause", () => ({ kind: "toolbar", button: "pause" }));
  bind("btn-save", () => ({ kind: "toolbar", button: "save" }));
  bind("btn-step", () => ({ kind: "step", n: 1 }));
  bind("btn-step5", () => ({ kind: "step", n: 5 }));
  bind("btn-lime", () => ({
    kind: "explain",
    agentId: state.selectedAgent ?? 0,
    method: "lime",
  }));
  bind("btn-shap", () => ({
    kind: "explain",
    agentId: state.selectedAgent ?? 0,
    method: "shap",
  }));

  await send(state, { kind: "toolbar", button: "pause" });
  void pump(state, canvas);
}
