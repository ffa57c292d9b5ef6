// Dependency-free SVG builders. Pure functions from data to markup so they
// are testable without a DOM.

export interface Point {
  x: number;
  y: number;
}

function scale(points: Point[], width: number, height: number, pad = 6) {
  const xs = points.map((p) => p.x);
  const ys = points.map((p) => p.y);
  const xMin = Math.min(...xs);
  const xMax = Math.max(...xs);
  const yMax = Math.max(...ys, 1);
  const sx = (x: number) =>
    xMax === xMin ? width / 2 : pad + ((x - xMin) / (xMax - xMin)) * (width - 2 * pad);
  const sy = (y: number) => height - pad - (y / yMax) * (height - 2 * pad);
  return { sx, sy, yMax };
}

export function lineChart(points: Point[], width = 560, height = 140,
                          stroke = '#2f81f7'): string {
  if (points.length === 0) {
    return `<svg width="${width}" height="${height}" class="chart empty"><text x="12" y="24">no data yet</text></svg>`;
  }
  const { sx, sy, yMax } = scale(points, width, height);
  const d = points.map((p, i) => `${i ? 'L' : 'M'}${sx(p.x).toFixed(1)},${sy(p.y).toFixed(1)}`).join(' ');
  return `<svg width="${width}" height="${height}" class="chart">` +
    `<path d="${d}" fill="none" stroke="${stroke}" stroke-width="1.5"/>` +
    `<text x="4" y="12" class="axis">${fmt(yMax)}</text></svg>`;
}

export function areaPair(points: { x: number; total: number; manager: number; budget?: number | null }[],
                         width = 560, height = 140): string {
  if (points.length === 0) {
    return `<svg width="${width}" height="${height}" class="chart empty"><text x="12" y="24">no data yet</text></svg>`;
  }
  const ceiling = points.map((p) => Math.max(p.total, p.budget ?? 0));
  const { sx, sy, yMax } = scale(points.map((p, i) => ({ x: p.x, y: ceiling[i] })), width, height);
  const area = (ys: number[]) => {
    const top = points.map((p, i) => `${i ? 'L' : 'M'}${sx(p.x).toFixed(1)},${sy(ys[i]).toFixed(1)}`).join(' ');
    const xEnd = sx(points[points.length - 1].x).toFixed(1);
    const xStart = sx(points[0].x).toFixed(1);
    return `${top} L${xEnd},${sy(0).toFixed(1)} L${xStart},${sy(0).toFixed(1)} Z`;
  };
  const budgetPts = points.filter((p) => p.budget !== null && p.budget !== undefined);
  const budgetLine = budgetPts.length
    ? `<path d="${budgetPts.map((p, i) => `${i ? 'L' : 'M'}${sx(p.x).toFixed(1)},${sy(p.budget as number).toFixed(1)}`).join(' ')}" ` +
      `fill="none" stroke="#3fb950" stroke-width="1.2" stroke-dasharray="5,3" class="budget-line"/>`
    : '';
  return `<svg width="${width}" height="${height}" class="chart">` +
    `<path d="${area(points.map((p) => p.total))}" fill="#2f81f733" stroke="#2f81f7" stroke-width="1"/>` +
    `<path d="${area(points.map((p) => p.manager))}" fill="#d2995233" stroke="#d29952" stroke-width="1"/>` +
    budgetLine +
    `<text x="4" y="12" class="axis">${fmt(yMax)} units</text></svg>`;
}

export function gauge(value: number, max: number, label: string, width = 180, height = 60): string {
  const frac = max > 0 ? Math.min(value / max, 1) : 0;
  const bar = (width - 12) * frac;
  const tone = frac > 0.8 ? '#e5534b' : frac > 0.5 ? '#d29952' : '#3fb950';
  return `<svg width="${width}" height="${height}" class="gauge">` +
    `<rect x="6" y="28" width="${width - 12}" height="12" fill="#21262d" rx="3"/>` +
    `<rect x="6" y="28" width="${bar.toFixed(1)}" height="12" fill="${tone}" rx="3"/>` +
    `<text x="6" y="18" class="label">${label}</text>` +
    `<text x="6" y="56" class="value">${fmt(value)}</text></svg>`;
}

function fmt(n: number): string {
  if (n >= 1_000_000) return (n / 1_000_000).toFixed(1) + 'M';
  if (n >= 1_000) return (n / 1_000).toFixed(1) + 'k';
  return Number.isInteger(n) ? String(n) : n.toFixed(1);
}
