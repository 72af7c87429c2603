/** Typed client for the archive service. The UI never mutates archives except
 * through these endpoints and displays only numbers found in the payloads. */

import {
  CandidatePayload,
  ModelsPayload,
  StudyPayload,
  TernaryPayload,
  TracePayload,
} from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export class ServiceClient {
  constructor(private readonly base: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.base + path, {
      headers: { "Content-Type": "application/json" },
      ...init,
    });
    if (!response.ok) {
      const body = await response.text();
      throw new ApiError(response.status, body);
    }
    return (await response.json()) as T;
  }

  getStudy(): Promise<StudyPayload> {
    return this.request("/study");
  }

  getModels(): Promise<ModelsPayload> {
    return this.request("/models");
  }

  trace(settings: object, factor: string, grid = 21,
        weights: Record<string, number> = {}): Promise<TracePayload> {
    return this.request("/profiler/trace", {
      method: "POST",
      body: JSON.stringify({ settings, factor, grid, weights }),
    });
  }

  optimize(body: object): Promise<CandidatePayload> {
    return this.request("/profiler/optimize", {
      method: "POST",
      body: JSON.stringify(body),
    });
  }

  ternary(pair?: string): Promise<TernaryPayload> {
    const query = pair ? `?pair=${encodeURIComponent(pair)}` : "";
    return this.request(`/ternary${query}`);
  }

  generateRandomTable(n: number, seed = 0): Promise<Response> {
    return fetch(`${this.base}/random-table?n=${n}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ seed }),
    });
  }
}
