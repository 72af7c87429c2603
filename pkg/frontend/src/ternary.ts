/**
 * Ternary projection helpers: pairing enumeration, triangle coordinates for
 * SVG, the jet color gradient, and deterministic downsampling for display.
 */

import { StudyMeta, TernaryPayload } from "./types.js";
import { mixtureFactors } from "./state.js";

export function ternaryPairings(study: StudyMeta): [string, string][] {
  const names = mixtureFactors(study).map((f) => f.name);
  const pairs: [string, string][] = [];
  for (let i = 0; i < names.length; i += 1) {
    for (let j = i + 1; j < names.length; j += 1) {
      pairs.push([names[i], names[j]]);
    }
  }
  return pairs;
}

/** Barycentric (a, b, others) to unit-triangle x/y screen coordinates. */
export function toTriangleXY(a: number, b: number): { x: number; y: number } {
  // vertices: a -> (0,0), b -> (1,0), others -> (0.5, sqrt(3)/2)
  const others = 1 - a - b;
  const x = b + 0.5 * others;
  const y = (Math.sqrt(3) / 2) * others;
  return { x, y };
}

/** Classic jet gradient over [0, 1] as rgb components in [0, 255]. */
export function jetColor(t: number): [number, number, number] {
  const v = Math.min(Math.max(t, 0), 1);
  const channel = (x: number) =>
    Math.round(255 * Math.min(Math.max(1.5 - Math.abs(4 * v - x), 0), 1));
  return [channel(3), channel(2), channel(1)];
}

export function jetCss(t: number): string {
  const [r, g, b] = jetColor(t);
  return `rgb(${r},${g},${b})`;
}

/** Every ceil(n/max)-th point; server downsamples too, this is a guard. */
export function downsampleIndices(n: number, max = 10_000): number[] {
  const stride = Math.max(1, Math.ceil(n / max));
  const out: number[] = [];
  for (let i = 0; i < n; i += stride) out.push(i);
  return out;
}

export interface TernaryPanel {
  pair: [string, string];
  points: { x: number; y: number; color: string; value: number }[];
}

/** Panels straight from the service payload; the color scale normalizes the
 * chosen column to [0,1] for the gradient (display scaling only). */
export function buildPanels(payload: TernaryPayload, colorColumn: string,
                            maxPoints = 10_000): TernaryPanel[] {
  const colors = payload.color?.[colorColumn];
  const panels: TernaryPanel[] = [];
  for (const key of Object.keys(payload.pairs)) {
    const coords = payload.pairs[key];
    const [a, b] = key.split("|");
    const idx = downsampleIndices(coords.a.length, maxPoints);
    let lo = Infinity;
    let hi = -Infinity;
    if (colors) {
      for (const i of idx) {
        lo = Math.min(lo, colors[i]);
        hi = Math.max(hi, colors[i]);
      }
    }
    const span = hi > lo ? hi - lo : 1;
    panels.push({
      pair: [a, b],
      points: idx.map((i) => {
        const value = colors ? colors[i] : 0;
        const { x, y } = toTriangleXY(coords.a[i], coords.b[i]);
        return { x, y, value, color: jetCss(colors ? (value - lo) / span : 0.5) };
      }),
    });
  }
  return panels;
}
