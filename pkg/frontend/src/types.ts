export interface FactorMeta {
  name: string;
  role: "mixture" | "continuous" | "categorical" | "blocking";
  low?: number;
  high?: number;
  granularity?: number;
  levels?: string[];
}

export interface ResponseMeta {
  name: string;
  goal: "maximize" | "minimize" | "target" | "none";
  importance: number;
  transform: string;
  target?: number;
}

export interface StudyMeta {
  name: string;
  date: string;
  factors: FactorMeta[];
  responses: ResponseMeta[];
}

export interface StudyPayload {
  revision: number;
  study: StudyMeta;
}

export interface TracePayload {
  revision: number;
  trace: {
    factor: string;
    grid: (number | string)[];
    responses: Record<string, (number | null)[]>;
    desirability: (number | null)[];
    feasible: boolean[];
  };
}

export interface CandidatePayload {
  revision: number;
  candidate: {
    label: string;
    settings: Record<string, number | string>;
    predictions: Record<string, number>;
    desirability: number;
    model_tag: string;
    weights: Record<string, number>;
  };
}

export interface ModelsPayload {
  revision: number;
  models: Record<string, { method: string; samples: number; members: number;
                            transform: string; effects: number }>;
}

export interface TernaryPayload {
  revision: number;
  source: string;
  pairs: Record<string, { a: number[]; b: number[]; others: number[] }>;
  color?: Record<string, number[]>;
  levels?: Record<string, string[]>;
}
