// Tremor-index badge state. The 0.30 cutoff is the prespecified
// "controlled tremor" interpretation threshold used across the reports.

export const TI_CONTROLLED_THRESHOLD = 0.3;

export type BadgeState = "controlled" | "elevated" | "no-data";

export function tiBadgeState(ti: number | null | undefined): BadgeState {
  if (ti === null || ti === undefined || Number.isNaN(ti)) return "no-data";
  return ti <= TI_CONTROLLED_THRESHOLD ? "controlled" : "elevated";
}

export function tiBadgeColor(state: BadgeState): string {
  switch (state) {
    case "controlled":
      return "#2e9e6b"; // green
    case "elevated":
      return "#d9822b"; // amber
    case "no-data":
      return "#8a97a3"; // gray
  }
}

export function tiBadgeLabel(ti: number | null | undefined): string {
  const state = tiBadgeState(ti);
  if (state === "no-data") return "TI --";
  return `TI ${(ti as number).toFixed(3)}`;
}
