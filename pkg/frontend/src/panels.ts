/** Thin DOM rendering over the pure view-model modules. Numbers rendered here
 * are payload values passed through display rounding only. */

import { ProfilerViewState, displayNumber, displayPercent, mixtureSumPercent } from "./state.js";
import { TernaryPanel } from "./ternary.js";
import { LevelDistribution } from "./violin.js";
import { TracePayload } from "./types.js";

export function renderMixtureSum(el: HTMLElement, state: ProfilerViewState): void {
  el.textContent = `${mixtureSumPercent(state.study, state.settings).toFixed(2)}%`;
}

export function renderTracePanel(el: HTMLElement, payload: TracePayload,
                                 response: string): void {
  const trace = payload.trace;
  const values = trace.responses[response] ?? trace.desirability;
  const rows = trace.grid.map((g, i) => {
    const value = values[i];
    const text = value === null ? "infeasible" : displayNumber(value);
    const cls = trace.feasible[i] ? "feasible" : "infeasible";
    return `<tr class="${cls}"><td>${String(g)}</td><td>${text}</td></tr>`;
  });
  el.innerHTML = `<table><thead><tr><th>${trace.factor}</th><th>${response}</th>`
    + `</tr></thead><tbody>${rows.join("")}</tbody></table>`;
}

export function renderOptimum(el: HTMLElement, state: ProfilerViewState): void {
  const opt = state.lastOptimum;
  if (!opt) {
    el.textContent = "no optimum yet";
    return;
  }
  const settings = Object.entries(opt.settings)
    .map(([k, v]) => `<li>${k}: ${typeof v === "number" ? displayNumber(v) : v}</li>`)
    .join("");
  const predictions = Object.entries(opt.predictions)
    .map(([k, v]) => `<li>${k}: ${displayNumber(v)}</li>`)
    .join("");
  el.innerHTML = `<h3>${opt.label}</h3><ul>${settings}</ul><ul>${predictions}</ul>`
    + `<p>Desirability ${displayNumber(opt.desirability, 6)}</p>`;
}

export function renderTernaryPanels(el: HTMLElement, panels: TernaryPanel[],
                                    size = 260): void {
  const blocks = panels.map((panel) => {
    const h = (Math.sqrt(3) / 2) * size;
    const dots = panel.points
      .map((p) => `<circle cx="${(p.x * size).toFixed(1)}"`
        + ` cy="${(h - p.y * h / (Math.sqrt(3) / 2)).toFixed(1)}" r="1.5"`
        + ` fill="${p.color}"/>`)
      .join("");
    return `<figure class="ternary-panel">`
      + `<svg width="${size}" height="${h.toFixed(0)}" viewBox="0 0 ${size} ${h.toFixed(0)}">`
      + `<polygon points="0,${h.toFixed(0)} ${size},${h.toFixed(0)} ${size / 2},0"`
      + ` fill="none" stroke="#888"/>${dots}</svg>`
      + `<figcaption>${panel.pair[0]} vs ${panel.pair[1]} vs Others</figcaption></figure>`;
  });
  el.innerHTML = blocks.join("");
}

export function renderViolins(el: HTMLElement, distributions: LevelDistribution[],
                              width = 120, height = 200): void {
  const blocks = distributions.map((dist) => {
    const bars = dist.bins
      .map((bin) => {
        const w = Math.max(bin.density * width, 0.5);
        const y = height - bin.center * height;
        return `<rect x="${(width - w) / 2}" y="${y - 3}" width="${w}" height="6"`
          + ` fill="#4477aa" opacity="0.75"/>`;
      })
      .join("");
    return `<figure class="violin"><svg width="${width}" height="${height}">${bars}</svg>`
      + `<figcaption>${dist.level} (${dist.count})</figcaption></figure>`;
  });
  el.innerHTML = blocks.join("");
}

export function renderStaleBanner(el: HTMLElement, state: ProfilerViewState): void {
  el.hidden = !state.revision.stale;
  if (state.revision.stale) {
    el.textContent = "Archive changed on the server; reload to continue.";
  }
}

export function renderSliderRow(state: ProfilerViewState, name: string,
                                onChange: () => void): HTMLElement {
  const factor = state.study.factors.find((f) => f.name === name)!;
  const row = document.createElement("div");
  row.className = "slider-row";
  const label = document.createElement("label");
  label.textContent = name;
  row.appendChild(label);
  if (factor.role === "categorical" || factor.role === "blocking") {
    const select = document.createElement("select");
    for (const level of factor.levels ?? []) {
      const option = document.createElement("option");
      option.value = level;
      option.textContent = level;
      select.appendChild(option);
    }
    select.value = String(state.settings[name]);
    select.addEventListener("change", () => {
      state.setFactor(name, select.value);
      onChange();
    });
    row.appendChild(select);
  } else {
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = String(factor.low ?? 0);
    slider.max = String(factor.high ?? 1);
    slider.step = String(factor.granularity ?? 0.001);
    slider.value = String(state.settings[name]);
    const readout = document.createElement("span");
    readout.textContent = factor.role === "mixture"
      ? displayPercent(Number(state.settings[name]))
      : displayNumber(Number(state.settings[name]), 3);
    slider.addEventListener("input", () => {
      const accepted = state.setFactor(name, Number(slider.value));
      if (!accepted) slider.value = String(state.settings[name]);
      readout.textContent = factor.role === "mixture"
        ? displayPercent(Number(state.settings[name]))
        : displayNumber(Number(state.settings[name]), 3);
      onChange();
    });
    row.appendChild(slider);
    row.appendChild(readout);
  }
  return row;
}
