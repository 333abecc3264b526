// Session/cohort summary: renders the analysis report served by the
// backend and offers CSV downloads that pass the service bytes through
// untouched (byte-identical to the command-line report exports).

export interface ContrastRow {
  outcome_name: string;
  unit: string;
  baseline_median: number | null;
  baseline_iqr: [number, number] | null;
  assisted_median: number | null;
  assisted_iqr: [number, number] | null;
  median_delta: number;
  ci_low: number;
  ci_high: number;
  p_exact: number;
  cliffs_delta: number;
  effect_label: string | null;
}

export interface ResponderRowT {
  criterion: string;
  n_responders: number;
  n_total: number;
  proportion_pct: number;
}

export interface ReportDoc {
  n_subjects: number;
  contrasts: ContrastRow[];
  responders: ResponderRowT[];
  trajectories: Array<Record<string, unknown>>;
  excluded_sessions?: Array<{ subject_id: string; task: string; condition: string; reason: string }>;
}

export const OUTCOME_LABELS: Record<string, string> = {
  ti: "Tremor Index (unitless)",
  rom_pct: "ROM (% change)",
  rom_deg: "ROM (deg)",
  reps: "Reps (per min)",
  fmed_slope: "EMG median-frequency slope (Hz/min)",
};

export async function fetchSummary(base = ""): Promise<ReportDoc | null> {
  const resp = await fetch(`${base}/api/summary`);
  if (resp.status === 404) return null; // no analysis yet: export stays disabled
  if (!resp.ok) throw new Error(`summary fetch failed: ${resp.status}`);
  return (await resp.json()) as ReportDoc;
}

/** Fetch an export CSV and hand its bytes through without transformation. */
export async function fetchExportCsv(name: "outcomes" | "trajectories", base = ""): Promise<string | null> {
  const resp = await fetch(`${base}/api/export/${name}.csv`);
  if (resp.status === 404) return null;
  if (!resp.ok) throw new Error(`export fetch failed: ${resp.status}`);
  return await resp.text();
}

export function formatContrastCell(row: ContrastRow): string {
  const delta = `${row.median_delta >= 0 ? "+" : ""}${row.median_delta.toFixed(3)}`;
  const ci = `[${row.ci_low.toFixed(3)}, ${row.ci_high.toFixed(3)}]`;
  const effect = row.effect_label
    ? `${row.effect_label}`
    : `Cliff's delta ${row.cliffs_delta >= 0 ? "+" : ""}${row.cliffs_delta.toFixed(2)}`;
  return `${delta} ${ci}, p=${row.p_exact.toPrecision(2)}, ${effect}`;
}

export function formatMedianIqr(median: number | null, iqr: [number, number] | null): string {
  if (median === null) return "--";
  const m = median.toFixed(2);
  if (!iqr) return m;
  return `${m} [${iqr[0].toFixed(2)}, ${iqr[1].toFixed(2)}]`;
}
