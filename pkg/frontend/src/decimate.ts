// Client-side min/max binning for waveform display: raw data is never
// modified server-side, and dropout samples (null) split the trace into
// disconnected segments instead of being interpolated across.

export interface Bin {
  min: number;
  max: number;
}

/** Reduce a series to at most `bins` min/max pairs; null bins mark gaps. */
export function minMaxBins(values: Array<number | null>, bins: number): Array<Bin | null> {
  if (bins < 1) throw new Error("bins must be >= 1");
  const n = values.length;
  if (n === 0) return [];
  const out: Array<Bin | null> = [];
  const per = Math.max(1, Math.ceil(n / bins));
  for (let start = 0; start < n; start += per) {
    let lo = Infinity;
    let hi = -Infinity;
    let any = false;
    let gap = false;
    for (let i = start; i < Math.min(start + per, n); i++) {
      const v = values[i];
      if (v === null || v === undefined || Number.isNaN(v)) {
        gap = true;
        continue;
      }
      any = true;
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
    // a bin touched by any dropout renders as a gap: no interpolation
    out.push(any && !gap ? { min: lo, max: hi } : null);
  }
  return out;
}
