/** Display rules for statistics coming back from the service. */

// Rank p-values are never exactly zero (the floor is 1/(m+1)); tiny values
// show as "< 0.001" while the exact rational stays available alongside.
export function formatP(p: number): string {
  if (!Number.isFinite(p)) return "n/a";
  return p < 0.001 ? "< 0.001" : p.toFixed(3);
}

export function formatPExact(p: number): string {
  if (!Number.isFinite(p)) return "n/a";
  return p.toPrecision(6);
}

export function formatAlpha(alpha: number): string {
  return alpha.toFixed(2);
}

export function formatStatistic(s: number): string {
  return s.toFixed(4);
}

export function conclusion(reject: boolean, alpha: number): string {
  return reject
    ? `Likely LLM-generated: the detection statistic is significant at level ${formatAlpha(alpha)} (reject the human-written hypothesis).`
    : `Consistent with human-written text at level ${formatAlpha(alpha)} (fail to reject).`;
}
