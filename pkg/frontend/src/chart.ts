// Inline SVG line chart of per-round query precision, accumulated query
// recall, and model accuracy. Values come straight from the metrics
// endpoint; nothing is recomputed client-side.

import type { RoundRecord } from "./api.js";

export interface Series {
  name: string;
  color: string;
  points: Array<{ round: number; value: number }>;
}

export function seriesFromRounds(rounds: RoundRecord[]): Series[] {
  const pick = (
    name: string,
    color: string,
    value: (r: RoundRecord) => number | null,
  ): Series => ({
    name,
    color,
    points: rounds
      .map((r) => ({ round: r.round, value: value(r) }))
      .filter((p): p is { round: number; value: number } => p.value !== null),
  });
  return [
    pick("qp", "#2a9d8f", (r) => r.qp),
    pick("aqr", "#457b9d", (r) => r.aqr),
    pick("macc", "#e76f51", (r) => r.macc),
  ];
}

export function polylinePoints(
  series: Series,
  maxRound: number,
  width: number,
  height: number,
  pad = 24,
): string {
  const spanX = Math.max(maxRound - 1, 1);
  return series.points
    .map((p) => {
      const x = pad + ((p.round - 1) / spanX) * (width - 2 * pad);
      const y = height - pad - p.value * (height - 2 * pad);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
}

export function metricsChartSvg(rounds: RoundRecord[], width = 420, height = 200): string {
  if (rounds.length === 0) return "";
  const maxRound = Math.max(...rounds.map((r) => r.round));
  const pad = 24;
  const axes =
    `<line x1="${pad}" y1="${height - pad}" x2="${width - pad}" y2="${height - pad}" stroke="#999"/>` +
    `<line x1="${pad}" y1="${pad}" x2="${pad}" y2="${height - pad}" stroke="#999"/>`;
  const parts: string[] = [];
  for (const series of seriesFromRounds(rounds)) {
    if (series.points.length === 0) continue;
    parts.push(
      `<polyline data-series="${series.name}" fill="none" stroke="${series.color}" ` +
        `stroke-width="2" points="${polylinePoints(series, maxRound, width, height, pad)}"/>`,
    );
  }
  const legend = seriesFromRounds(rounds)
    .filter((s) => s.points.length > 0)
    .map(
      (s, i) =>
        `<text x="${pad + i * 70}" y="14" fill="${s.color}" font-size="12">${s.name}</text>`,
    )
    .join("");
  return (
    `<svg role="img" viewBox="0 0 ${width} ${height}" width="${width}" height="${height}">` +
    axes +
    parts.join("") +
    legend +
    `</svg>`
  );
}
