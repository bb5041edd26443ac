/** Scene view model: the latest scene delta mapped to drawable glyphs.
 *
 * Strictly server-authoritative: glyphs reflect the last received delta,
 * never a locally simulated position.
 */

import type { GridView, ObstacleView, SceneDelta } from "./protocol.js";

export interface Glyph {
  kind: "agent" | "target" | "obstacle";
  id: number;
  x: number;
  y: number;
  zLabel: string | null; // shown in 3D scenes
  color: string;
  grayed: boolean;
  badge: string | null; // agent mode badge
  size: number; // half extent in cells (point glyphs: 0)
}

export const AGENT_COLOR = "#1f6fd6";
export const AGENT_DEAD_COLOR = "#9a9a9a";
export const TARGET_UNSEEN_COLOR = "#2fa840";
export const TARGET_SEEN_COLOR = "#8fd49a";
export const TARGET_ESCAPED_COLOR = "#d7d7d7";
export const OBSTACLE_COLOR = "#000000";

export function buildScene(
  delta: SceneDelta,
  grid: GridView,
  obstacles: ObstacleView[],
): Glyph[] {
  const is3d = grid.depth > 1;
  const glyphs: Glyph[] = [];
  for (const ob of obstacles) {
    glyphs.push({
      kind: "obstacle",
      id: ob.id,
      x: ob.center[0],
      y: ob.center[1],
      zLabel: is3d ? `z=${ob.center[2]}` : null,
      color: OBSTACLE_COLOR,
      grayed: false,
      badge: null,
      size: ob.half_extent + ob.safety_margin,
    });
  }
  for (const target of delta.targets) {
    glyphs.push({
      kind: "target",
      id: target.id,
      x: target.position[0],
      y: target.position[1],
      zLabel: is3d ? `z=${target.position[2]}` : null,
      color: target.escaped
        ? TARGET_ESCAPED_COLOR
        : target.seen
          ? TARGET_SEEN_COLOR
          : TARGET_UNSEEN_COLOR,
      grayed: target.escaped,
      badge: null,
      size: 0,
    });
  }
  for (const agent of delta.agents) {
    glyphs.push({
      kind: "agent",
      id: agent.id,
      x: agent.position[0],
      y: agent.position[1],
      zLabel: is3d ? `z=${agent.position[2]}` : null,
      color: agent.alive ? AGENT_COLOR : AGENT_DEAD_COLOR,
      grayed: !agent.alive,
      badge: agent.mode,
      size: 0,
    });
  }
  return glyphs;
}

/** Deltas must arrive with strictly increasing cycles between restores. */
export function acceptDelta(
  lastCycle: number | null,
  delta: SceneDelta,
  restored: boolean,
): boolean {
  if (restored || lastCycle === null) return true;
  return delta.cycle > lastCycle;
}
