/** Contribution maps -> RGBA heatmap cells.
 *
 * LIME: green supports the action, red opposes. SHAP: pink supports, blue
 * opposes. Alpha scales linearly with |contribution| relative to the
 * strongest cell of the map.
 */

import type { Explanation } from "./protocol.js";

export type RGBA = [number, number, number, number];

export const PALETTES: Record<string, { positive: RGBA; negative: RGBA }> = {
  LIME: { positive: [0, 200, 0, 0], negative: [220, 0, 0, 0] },
  SHAP: { positive: [255, 105, 180, 0], negative: [30, 100, 255, 0] },
};

export interface HeatmapLayer {
  action: number;
  cells: RGBA[]; // row-major over the window shape
  empty: boolean; // all-zero map: render a "no signal" note instead
}

export function colorFor(method: string, value: number, maxAbs: number): RGBA {
  const palette = PALETTES[method];
  if (!palette) throw new Error(`unknown method ${method}`);
  if (maxAbs <= 0 || value === 0) return [0, 0, 0, 0];
  const base = value > 0 ? palette.positive : palette.negative;
  const alpha = Math.round(255 * Math.min(1, Math.abs(value) / maxAbs));
  return [base[0], base[1], base[2], alpha];
}

export function buildHeatmaps(explanation: Explanation): HeatmapLayer[] {
  const layers: HeatmapLayer[] = [];
  for (let action = 0; action < explanation.per_action.length; action++) {
    const values = explanation.per_action[action];
    const maxAbs = values.reduce((m, v) => Math.max(m, Math.abs(v)), 0);
    layers.push({
      action,
      cells: values.map((v) => colorFor(explanation.method, v, maxAbs)),
      empty: maxAbs === 0,
    });
  }
  return layers;
}

/** Action panels ordered most-to-least probable, greedy action first. */
export function panelOrder(explanation: Explanation): number[] {
  return explanation.probs
    .map((p, action) => ({ p, action }))
    .sort((a, b) => b.p - a.p || a.action - b.action)
    .map((x) => x.action);
}
