// Gantt-style SVG of routine instances over the offset axis. Bars are drawn
// from the engine-reported coverage intervals, one row per instance.

import type { TimelineBar, TimelineModel } from './state.js';

const ROW_H = 26;
const LABEL_W = 210;

const OWNER_COLORS: Record<string, string> = {
  manager: '#d29952',
  user: '#2f81f7',
};

export function timelineSvg(model: TimelineModel, width = 860): string {
  const bars = model.bars;
  const height = Math.max(bars.length, 1) * ROW_H + 26;
  const span = Math.max(model.maxOffset - model.minOffset, 1);
  const plotW = width - LABEL_W - 12;
  const x = (off: number) => LABEL_W + ((off - model.minOffset) / span) * plotW;

  const rows = bars.map((bar, i) => barRow(bar, i, x, plotW)).join('');
  const axis =
    `<text x="${LABEL_W}" y="${height - 6}" class="axis">${model.minOffset}</text>` +
    `<text x="${width - 12}" y="${height - 6}" class="axis" text-anchor="end">${model.maxOffset}</text>`;
  return `<svg width="${width}" height="${height}" class="timeline" role="img">${rows}${axis}</svg>`;
}

function barRow(bar: TimelineBar, row: number, x: (off: number) => number, plotW: number): string {
  const y = row * ROW_H + 4;
  const color = OWNER_COLORS[bar.owner] ?? '#8957e5';
  const label = `${bar.specId} (${bar.owner}${bar.status === 'stopped' ? ', stopped' : ''})`;
  const rects = bar.intervals
    .map(([lo, hi]) => {
      const x0 = x(lo);
      const w = Math.max(x(hi) - x0, 2);
      return `<rect x="${x0.toFixed(1)}" y="${y}" width="${w.toFixed(1)}" height="16" ` +
        `fill="${color}" rx="3" data-instance="${esc(bar.instanceId)}" ` +
        `data-lo="${lo}" data-hi="${hi}"><title>${esc(bar.instanceId)} [${lo}, ${hi})</title></rect>`;
    })
    .join('');
  const openMark = bar.openEnded && bar.intervals.length
    ? `<text x="${(x(bar.intervals[bar.intervals.length - 1][1]) + 3).toFixed(1)}" y="${y + 13}" class="open">&#8594;</text>`
    : '';
  return `<g class="bar-row">` +
    `<text x="4" y="${y + 13}" class="bar-label">${esc(label)}</text>${rects}${openMark}</g>`;
}

/** Coverage intervals read back from rendered markup, for fidelity checks. */
export function intervalsFromSvg(svg: string): Record<string, [number, number][]> {
  const out: Record<string, [number, number][]> = {};
  const re = /data-instance="([^"]+)" data-lo="(\d+)" data-hi="(\d+)"/g;
  let m: RegExpExecArray | null;
  while ((m = re.exec(svg)) !== null) {
    const key = unesc(m[1]);
    (out[key] ??= []).push([Number(m[2]), Number(m[3])]);
  }
  return out;
}

function esc(s: string): string {
  return s.replace(/&/g, '&amp;').replace(/</g, '&lt;').replace(/>/g, '&gt;').replace(/"/g, '&quot;');
}

function unesc(s: string): string {
  return s.replace(/&quot;/g, '"').replace(/&lt;/g, '<').replace(/&gt;/g, '>').replace(/&amp;/g, '&');
}
