import { describe, expect, it } from "vitest";

import {
  ProfilerViewState,
  mixtureSumPercent,
  renormalizeMixture,
} from "../src/state.js";
import type { StudyMeta } from "../src/types.js";
import session from "./fixtures/session.json";

const study = (session as any).study.study as StudyMeta;

function benchmarkSettings() {
  return {
    PEG: 0.01, Helper: 0.33, Ionizable: 0.33, Cholesterol: 0.33,
    "Ionizable Lipid Type": "H101", N_P_ratio: 10, "flow rate": 1,
  };
}

describe("mixture slider renormalization", () => {
  it("keeps the displayed lipid sum at 100% across drags", () => {
    const state = new ProfilerViewState(study, benchmarkSettings());
    for (const value of [0.2, 0.45, 0.6, 0.1, 0.37]) {
      expect(state.setFactor("Ionizable", value)).toBe(true);
      expect(mixtureSumPercent(study, state.settings)).toBeCloseTo(100, 8);
      expect(state.settings["Ionizable"]).toBeCloseTo(value, 12);
    }
  });

  it("scales companions proportionally when no bound binds", () => {
    const next = renormalizeMixture(study, benchmarkSettings(), "PEG", 0.02)!;
    const scale = (1 - 0.02) / (1 - 0.01);
    expect(next["Helper"]).toBeCloseTo(0.33 * scale, 12);
    expect(next["Ionizable"]).toBeCloseTo(0.33 * scale, 12);
    expect(next["Cholesterol"]).toBeCloseTo(0.33 * scale, 12);
  });

  it("clips companions to their bounds and redistributes", () => {
    const settings = { ...benchmarkSettings(), Helper: 0.55, Ionizable: 0.2,
                       Cholesterol: 0.2, PEG: 0.05 };
    const next = renormalizeMixture(study, settings, "Ionizable", 0.55)!;
    const total = ["PEG", "Helper", "Ionizable", "Cholesterol"]
      .reduce((s, k) => s + (next[k] as number), 0);
    expect(total).toBeCloseTo(1, 10);
    expect(next["Helper"]).toBeGreaterThanOrEqual(0.1 - 1e-12);
    expect(next["PEG"]).toBeGreaterThanOrEqual(0.01 - 1e-12);
  });

  it("rejects infeasible drags", () => {
    expect(renormalizeMixture(study, benchmarkSettings(), "PEG", 0.2)).toBeNull();
    const state = new ProfilerViewState(study, benchmarkSettings());
    expect(state.setFactor("PEG", 0.2)).toBe(false);
    expect(state.settings["PEG"]).toBe(0.01);
  });
});

describe("desirability editor", () => {
  it("rejects negative weights client-side", () => {
    const state = new ProfilerViewState(study, benchmarkSettings());
    expect(state.setWeight("Size", -0.5)).toBe(false);
    expect(state.weights["Size"]).toBe(0.2);
    expect(state.setWeight("Size", 0.4)).toBe(true);
    expect(state.weights["Size"]).toBe(0.4);
  });

  it("drops goal=none responses from the active set", () => {
    const state = new ProfilerViewState(study, benchmarkSettings());
    expect(state.activeResponses()).toEqual(["Potency", "Size"]);
    state.setGoal("Size", "none");
    expect(state.activeResponses()).toEqual(["Potency"]);
  });

  it("builds the default preset weighting into the optimize request", () => {
    const state = new ProfilerViewState(study, benchmarkSettings());
    const body = state.optimizeRequestBody(5) as any;
    expect(body.weights).toEqual({ Potency: 1.0, Size: 0.2 });
  });

  it("produces one candidate weighting per sensitivity grid point", () => {
    const state = new ProfilerViewState(study, benchmarkSettings());
    const grid = state.sensitivityWeightGrid("Potency", "Size", 3);
    expect(grid).toHaveLength(3);
    expect(grid[0]).toEqual({ Potency: 1.0, Size: 1.0 });
    expect(grid[2].Size).toBeCloseTo(0.2, 12);
  });
});

describe("remembered settings", () => {
  it("rejects duplicate labels", () => {
    const state = new ProfilerViewState(study, benchmarkSettings());
    const candidate = {
      label: "opt", settings: benchmarkSettings(),
      predictions: { Potency: 90 }, desirability: 0.9, modelTag: "svem-forward",
    };
    state.remember(candidate);
    expect(() => state.remember(candidate)).toThrow(/duplicate/);
    state.remember(candidate, "opt 2");
    expect(state.remembered).toHaveLength(2);
  });
});

describe("revision staleness", () => {
  it("flags a revision change", () => {
    const state = new ProfilerViewState(study, benchmarkSettings());
    state.revision.observe(4);
    expect(state.revision.stale).toBe(false);
    state.revision.observe(4);
    expect(state.revision.stale).toBe(false);
    state.revision.observe(5);
    expect(state.revision.stale).toBe(true);
  });
});
