/**
 * Profiler view state: factor settings, desirability weights/goals, locks,
 * and remembered candidates. All response numbers come from service payloads;
 * the only client-side arithmetic is the mixture-slider renormalization that
 * keeps the displayed lipid ratios summing to 100%.
 */

import { CandidatePayload, FactorMeta, StudyMeta } from "./types.js";

export type Settings = Record<string, number | string>;

export interface RememberedCandidate {
  label: string;
  settings: Settings;
  predictions: Record<string, number>;
  desirability: number;
  modelTag: string;
}

export class StaleRevisionState {
  current: number | null = null;
  stale = false;

  observe(revision: number): void {
    if (this.current !== null && revision !== this.current) {
      this.stale = true;
    }
    this.current = revision;
  }
}

export function mixtureFactors(study: StudyMeta): FactorMeta[] {
  return study.factors.filter((f) => f.role === "mixture");
}

/**
 * Hold `name` at `value` and rescale the companion mixture factors
 * proportionally, clipping to their bounds and redistributing the remainder.
 * Returns null when the move is infeasible.
 */
export function renormalizeMixture(
  study: StudyMeta,
  settings: Settings,
  name: string,
  value: number,
): Settings | null {
  const factor = study.factors.find((f) => f.name === name);
  if (!factor || factor.role !== "mixture") return null;
  if (value < (factor.low ?? 0) - 1e-12 || value > (factor.high ?? 1) + 1e-12) {
    return null;
  }
  const companions = mixtureFactors(study).filter((f) => f.name !== name);
  const target = 1.0 - value;
  const lows = companions.map((f) => f.low ?? 0);
  const highs = companions.map((f) => f.high ?? 1);
  const lowSum = lows.reduce((s, v) => s + v, 0);
  const highSum = highs.reduce((s, v) => s + v, 0);
  if (target < lowSum - 1e-12 || target > highSum + 1e-12) return null;

  let current = companions.map((f) => Number(settings[f.name]));
  const total = current.reduce((s, v) => s + v, 0);
  if (total <= 0) current = lows.map((v) => v + 1e-9);
  let scaled = current.map((v) => (v * target) / current.reduce((s, x) => s + x, 0));
  for (let pass = 0; pass < 8 * companions.length; pass += 1) {
    scaled = scaled.map((v, i) => Math.min(Math.max(v, lows[i]), highs[i]));
    const resid = target - scaled.reduce((s, v) => s + v, 0);
    if (Math.abs(resid) < 1e-12) break;
    const room = scaled.map((v, i) => (resid > 0 ? highs[i] - v : v - lows[i]));
    const free = room.reduce((s, v) => s + (v > 1e-15 ? v : 0), 0);
    if (free <= 0) return null;
    scaled = scaled.map((v, i) =>
      room[i] > 1e-15 ? v + (resid * room[i]) / free : v,
    );
  }
  const out: Settings = { ...settings, [name]: value };
  companions.forEach((f, i) => {
    out[f.name] = scaled[i];
  });
  return out;
}

export function mixtureSumPercent(study: StudyMeta, settings: Settings): number {
  return mixtureFactors(study).reduce((s, f) => s + Number(settings[f.name]), 0) * 100;
}

export class ProfilerViewState {
  readonly study: StudyMeta;
  settings: Settings;
  weights: Record<string, number> = {};
  goals: Record<string, string> = {};
  locks: Record<string, number | string> = {};
  remembered: RememberedCandidate[] = [];
  colorColumn = "CumulativeProbability";
  lastOptimum: RememberedCandidate | null = null;
  revision = new StaleRevisionState();

  constructor(study: StudyMeta, initial: Settings) {
    this.study = study;
    this.settings = { ...initial };
    for (const r of study.responses) {
      this.weights[r.name] = r.importance;
      this.goals[r.name] = r.goal;
    }
  }

  /** Slider drag on any factor; mixture factors renormalize companions. */
  setFactor(name: string, value: number | string): boolean {
    const factor = this.study.factors.find((f) => f.name === name);
    if (!factor) return false;
    if (factor.role === "mixture") {
      const next = renormalizeMixture(this.study, this.settings, name, Number(value));
      if (next === null) return false;
      this.settings = next;
      return true;
    }
    this.settings = { ...this.settings, [name]: value };
    return true;
  }

  /** Negative weights are rejected client-side. */
  setWeight(response: string, weight: number): boolean {
    if (!(weight >= 0)) return false;
    this.weights = { ...this.weights, [response]: weight };
    return true;
  }

  setGoal(response: string, goal: string): void {
    this.goals = { ...this.goals, [response]: goal };
  }

  /** Responses with goal "none" drop out of the desirability. */
  activeResponses(): string[] {
    return this.study.responses
      .map((r) => r.name)
      .filter((name) => this.goals[name] !== "none" && this.weights[name] > 0);
  }

  lockFactor(name: string, value: number | string): void {
    this.locks = { ...this.locks, [name]: value };
  }

  unlockFactor(name: string): void {
    const { [name]: _dropped, ...rest } = this.locks;
    this.locks = rest;
  }

  optimizeRequestBody(seed = 0): object {
    return {
      weights: this.weights,
      goals: this.goals,
      locks: this.locks,
      seed,
    };
  }

  /** Apply a /profiler/optimize payload verbatim; no recomputation. */
  applyOptimum(payload: CandidatePayload): RememberedCandidate {
    this.revision.observe(payload.revision);
    const c = payload.candidate;
    const applied: RememberedCandidate = {
      label: c.label,
      settings: { ...c.settings },
      predictions: { ...c.predictions },
      desirability: c.desirability,
      modelTag: c.model_tag,
    };
    this.settings = { ...this.settings, ...c.settings };
    this.lastOptimum = applied;
    return applied;
  }

  remember(candidate: RememberedCandidate, label?: string): void {
    const name = label ?? candidate.label;
    if (this.remembered.some((r) => r.label === name)) {
      throw new Error(`duplicate remembered-setting label: ${name}`);
    }
    this.remembered = [...this.remembered, { ...candidate, label: name }];
  }

  /** Preset weighting plus a 1:1 .. 1:5 sensitivity sweep for the secondary. */
  sensitivityWeightGrid(primary: string, secondary: string, points = 3): Record<string, number>[] {
    const grid: Record<string, number>[] = [];
    for (let k = 0; k < points; k += 1) {
      const ratio = 1 + (4 * k) / Math.max(points - 1, 1); // 1 .. 5
      grid.push({ [primary]: 1.0, [secondary]: 1.0 / ratio });
    }
    return grid;
  }
}

/** Display rounding is the only arithmetic applied to service numbers. */
export function displayNumber(value: number, digits = 4): string {
  return value.toFixed(digits);
}

export function displayPercent(value: number, digits = 2): string {
  return `${(value * 100).toFixed(digits)}%`;
}
