/** Application wiring: fetch study metadata, build sliders, refresh traces on
 * interaction, and drive the optimize / ternary / violin views. */

import { ServiceClient } from "./api.js";
import {
  ProfilerViewState,
  RememberedCandidate,
  Settings,
  mixtureFactors,
} from "./state.js";
import { buildPanels, ternaryPairings } from "./ternary.js";
import { levelDistributions } from "./violin.js";
import {
  renderMixtureSum,
  renderOptimum,
  renderSliderRow,
  renderStaleBanner,
  renderTernaryPanels,
  renderTracePanel,
  renderViolins,
} from "./panels.js";
import { StudyMeta, TernaryPayload } from "./types.js";

function initialSettings(study: StudyMeta): Settings {
  const settings: Settings = {};
  const mix = mixtureFactors(study);
  const lowSum = mix.reduce((s, f) => s + (f.low ?? 0), 0);
  const slack = 1 - lowSum;
  for (const f of study.factors) {
    if (f.role === "mixture") {
      settings[f.name] = (f.low ?? 0) + slack / mix.length;
    } else if (f.role === "categorical" || f.role === "blocking") {
      settings[f.name] = (f.levels ?? [""])[0];
    } else {
      settings[f.name] = ((f.low ?? 0) + (f.high ?? 1)) / 2;
    }
  }
  return settings;
}

export async function startApp(root: HTMLElement, base = ""): Promise<void> {
  const client = new ServiceClient(base);
  const studyPayload = await client.getStudy();
  const models = await client.getModels();
  if (Object.keys(models.models).length === 0) {
    root.textContent = "No fitted models in the archive; fit models first.";
    return;
  }
  const state = new ProfilerViewState(studyPayload.study, initialSettings(studyPayload.study));
  state.revision.observe(studyPayload.revision);

  root.innerHTML = `
    <div id="stale-banner" hidden></div>
    <section id="sliders"><h2>Factors</h2><div id="slider-rows"></div>
      <p>Lipid sum: <span id="mixture-sum"></span></p></section>
    <section id="traces"><h2>Response traces</h2><div id="trace-panels"></div></section>
    <section id="optimize"><h2>Optimization</h2>
      <div id="weight-editor"></div>
      <button id="maximize">Maximize desirability</button>
      <div id="optimum"></div></section>
    <section id="ternary"><h2>Ternary views</h2>
      <select id="color-column"></select>
      <div id="ternary-panels"></div></section>
    <section id="violins"><h2>Desirability by level</h2><div id="violin-panels"></div></section>
  `;

  const bannerEl = root.querySelector<HTMLElement>("#stale-banner")!;
  const sumEl = root.querySelector<HTMLElement>("#mixture-sum")!;
  const tracePanelEl = root.querySelector<HTMLElement>("#trace-panels")!;
  const optimumEl = root.querySelector<HTMLElement>("#optimum")!;
  const ternaryEl = root.querySelector<HTMLElement>("#ternary-panels")!;
  const violinEl = root.querySelector<HTMLElement>("#violin-panels")!;
  const colorEl = root.querySelector<HTMLSelectElement>("#color-column")!;

  let traceToken = 0;
  async function refreshTraces(): Promise<void> {
    renderMixtureSum(sumEl, state);
    const token = ++traceToken;  // in-flight de-duplication per interaction
    const factors = state.study.factors.filter((f) => f.role !== "blocking");
    const blocks: HTMLElement[] = [];
    for (const factor of factors) {
      try {
        const payload = await client.trace(state.settings, factor.name);
        if (token !== traceToken) return;
        state.revision.observe(payload.revision);
        for (const response of Object.keys(payload.trace.responses)) {
          const el = document.createElement("div");
          el.className = "trace-panel";
          renderTracePanel(el, payload, response);
          blocks.push(el);
        }
      } catch {
        // keep earlier panels on transient errors
      }
    }
    if (token === traceToken) {
      tracePanelEl.replaceChildren(...blocks);
      renderStaleBanner(bannerEl, state);
    }
  }

  const sliderRows = root.querySelector<HTMLElement>("#slider-rows")!;
  for (const factor of state.study.factors) {
    if (factor.role === "blocking") continue;
    sliderRows.appendChild(renderSliderRow(state, factor.name, () => {
      void refreshTraces();
    }));
  }

  const weightEditor = root.querySelector<HTMLElement>("#weight-editor")!;
  for (const response of state.study.responses) {
    const row = document.createElement("div");
    const label = document.createElement("label");
    label.textContent = `${response.name} importance`;
    const input = document.createElement("input");
    input.type = "number";
    input.min = "0";
    input.step = "0.1";
    input.value = String(state.weights[response.name]);
    input.addEventListener("change", () => {
      if (!state.setWeight(response.name, Number(input.value))) {
        input.value = String(state.weights[response.name]);
      }
    });
    row.append(label, input);
    weightEditor.appendChild(row);
  }

  root.querySelector<HTMLButtonElement>("#maximize")!.addEventListener("click", async () => {
    const payload = await client.optimize(state.optimizeRequestBody());
    state.applyOptimum(payload);
    renderOptimum(optimumEl, state);
    renderStaleBanner(bannerEl, state);
    void refreshTraces();
  });

  let ternaryPayload: TernaryPayload | null = null;
  async function refreshTernary(): Promise<void> {
    try {
      ternaryPayload = await client.ternary();
    } catch {
      ternaryEl.textContent = "Generate a random table to populate the ternary views.";
      return;
    }
    state.revision.observe(ternaryPayload.revision);
    const columns = Object.keys(ternaryPayload.color ?? {});
    colorEl.replaceChildren(...columns.map((c) => {
      const option = document.createElement("option");
      option.value = c;
      option.textContent = c;
      return option;
    }));
    if (columns.includes(state.colorColumn)) colorEl.value = state.colorColumn;
    renderTernaryPanels(ternaryEl, buildPanels(ternaryPayload, colorEl.value));
    const levels = ternaryPayload.levels ?? {};
    const firstCategorical = Object.keys(levels)[0];
    if (firstCategorical && ternaryPayload.color) {
      violinEl.replaceChildren();
      renderViolins(violinEl, levelDistributions(
        levels[firstCategorical], ternaryPayload.color["Desirability"] ?? []));
    }
  }

  colorEl.addEventListener("change", () => {
    state.colorColumn = colorEl.value;
    if (ternaryPayload) {
      renderTernaryPanels(ternaryEl, buildPanels(ternaryPayload, colorEl.value));
    }
  });

  await refreshTraces();
  await refreshTernary();
  void ternaryPairings(state.study);
}

declare global {
  interface Window {
    formoptStart?: typeof startApp;
  }
}

if (typeof window !== "undefined") {
  window.formoptStart = startApp;
}

export type { RememberedCandidate };
