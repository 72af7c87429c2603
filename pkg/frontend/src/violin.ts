/**
 * Per-categorical-level desirability distributions for the violin view.
 * Values come from the service's random-table payload; binning here is
 * display aggregation only.
 */

export interface LevelDistribution {
  level: string;
  count: number;
  values: number[];
  bins: { center: number; density: number }[];
}

export function groupByLevel(levels: string[], values: number[]): Map<string, number[]> {
  const groups = new Map<string, number[]>();
  levels.forEach((level, i) => {
    if (!groups.has(level)) groups.set(level, []);
    groups.get(level)!.push(values[i]);
  });
  return groups;
}

export function binDensity(values: number[], nBins = 24,
                           lo = 0, hi = 1): { center: number; density: number }[] {
  const counts = new Array(nBins).fill(0);
  const width = (hi - lo) / nBins;
  for (const v of values) {
    let k = Math.floor((v - lo) / width);
    if (k < 0) k = 0;
    if (k >= nBins) k = nBins - 1;
    counts[k] += 1;
  }
  const peak = Math.max(...counts, 1);
  return counts.map((c, k) => ({
    center: lo + (k + 0.5) * width,
    density: c / peak,
  }));
}

export function levelDistributions(levels: string[], desirability: number[],
                                   filter?: Set<string>): LevelDistribution[] {
  const groups = groupByLevel(levels, desirability);
  const out: LevelDistribution[] = [];
  for (const [level, values] of groups) {
    if (filter && !filter.has(level)) continue;
    out.push({ level, count: values.length, values,
               bins: binDensity(values) });
  }
  out.sort((x, y) => (x.level < y.level ? -1 : 1));
  return out;
}
