/** Deterministic SVG primitives: one fixed style, stable number formatting. */

export const WIDTH = 640;
export const HEIGHT = 420;
export const MARGIN = { top: 42, right: 24, bottom: 52, left: 64 };

export const SERIES_COLORS = ["#2563eb", "#dc2626", "#059669", "#9333ea", "#d97706"];

/** Fixed-precision coordinate formatting keeps output byte-stable. */
export function fmt(value: number): string {
  if (!Number.isFinite(value)) {
    return "0";
  }
  const text = value.toFixed(2);
  return text === "-0.00" ? "0.00" : text;
}

/** Short human label for tick values (6 significant digits, trimmed). */
export function label(value: number): string {
  if (!Number.isFinite(value)) {
    return "nan";
  }
  let text = value.toPrecision(6);
  if (text.includes(".") && !text.includes("e")) {
    text = text.replace(/0+$/, "").replace(/\.$/, "");
  }
  return text;
}

export interface Scale {
  (value: number): number;
  min: number;
  max: number;
}

export function linearScale(min: number, max: number, outMin: number, outMax: number): Scale {
  const span = max - min || 1;
  const scale = ((value: number) =>
    outMin + ((value - min) / span) * (outMax - outMin)) as Scale;
  scale.min = min;
  scale.max = max;
  return scale;
}

export function niceTicks(min: number, max: number, count = 5): number[] {
  if (min === max) {
    return [min];
  }
  const span = max - min;
  const step = Math.pow(10, Math.floor(Math.log10(span / count)));
  const err = (span / count) / step;
  const mult = err >= 7.5 ? 10 : err >= 3.5 ? 5 : err >= 1.5 ? 2 : 1;
  const tick = step * mult;
  const start = Math.ceil(min / tick) * tick;
  const ticks: number[] = [];
  for (let v = start; v <= max + tick * 1e-9; v += tick) {
    ticks.push(Math.abs(v) < tick * 1e-9 ? 0 : v);
  }
  return ticks;
}

export function escapeText(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;");
}

export class SvgBuilder {
  private parts: string[] = [];

  constructor(title: string) {
    this.parts.push(
      `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" ` +
        `viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="Helvetica, Arial, sans-serif">`,
    );
    this.parts.push(`<rect width="${WIDTH}" height="${HEIGHT}" fill="#ffffff"/>`);
    this.text(WIDTH / 2, 22, escapeText(title), 15, "middle", "#111111", "bold");
  }

  line(x1: number, y1: number, x2: number, y2: number, stroke: string, width = 1, dash?: string): void {
    const d = dash ? ` stroke-dasharray="${dash}"` : "";
    this.parts.push(
      `<line x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}" ` +
        `stroke="${stroke}" stroke-width="${width}"${d}/>`,
    );
  }

  polyline(points: Array<[number, number]>, stroke: string, width = 2): void {
    const coords = points.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(" ");
    this.parts.push(
      `<polyline points="${coords}" fill="none" stroke="${stroke}" stroke-width="${width}"/>`,
    );
  }

  circle(x: number, y: number, r: number, fill: string): void {
    this.parts.push(`<circle cx="${fmt(x)}" cy="${fmt(y)}" r="${r}" fill="${fill}"/>`);
  }

  rect(x: number, y: number, w: number, h: number, fill: string): void {
    this.parts.push(
      `<rect x="${fmt(x)}" y="${fmt(y)}" width="${fmt(w)}" height="${fmt(h)}" fill="${fill}"/>`,
    );
  }

  text(x: number, y: number, content: string, size = 11, anchor = "middle",
       fill = "#333333", weight = "normal", rotate?: number): void {
    const transform = rotate !== undefined
      ? ` transform="rotate(${rotate} ${fmt(x)} ${fmt(y)})"`
      : "";
    this.parts.push(
      `<text x="${fmt(x)}" y="${fmt(y)}" font-size="${size}" text-anchor="${anchor}" ` +
        `fill="${fill}" font-weight="${weight}"${transform}>${content}</text>`,
    );
  }

  /** Horizontal axis line, ticks, labels, and axis caption. */
  xAxisLinear(scale: Scale, ticks: number[], caption: string): void {
    const y = HEIGHT - MARGIN.bottom;
    this.line(MARGIN.left, y, WIDTH - MARGIN.right, y, "#444444");
    for (const tick of ticks) {
      const x = scale(tick);
      this.line(x, y, x, y + 5, "#444444");
      this.text(x, y + 18, escapeText(label(tick)));
    }
    this.text((MARGIN.left + WIDTH - MARGIN.right) / 2, HEIGHT - 12, escapeText(caption), 12);
  }

  xAxisCategorical(positions: number[], labels: string[], caption: string, rotate = 0): void {
    const y = HEIGHT - MARGIN.bottom;
    this.line(MARGIN.left, y, WIDTH - MARGIN.right, y, "#444444");
    positions.forEach((x, i) => {
      this.line(x, y, x, y + 5, "#444444");
      if (rotate !== 0) {
        this.text(x, y + 16, escapeText(labels[i]), 11, "end", "#333333", "normal", rotate);
      } else {
        this.text(x, y + 18, escapeText(labels[i]));
      }
    });
    this.text((MARGIN.left + WIDTH - MARGIN.right) / 2, HEIGHT - 12, escapeText(caption), 12);
  }

  yAxis(scale: Scale, ticks: number[], caption: string): void {
    const x = MARGIN.left;
    this.line(x, MARGIN.top, x, HEIGHT - MARGIN.bottom, "#444444");
    for (const tick of ticks) {
      const y = scale(tick);
      this.line(x - 5, y, x, y, "#444444");
      this.text(x - 8, y + 4, escapeText(label(tick)), 11, "end");
      this.line(x, y, WIDTH - MARGIN.right, y, "#eeeeee");
    }
    this.text(18, (MARGIN.top + HEIGHT - MARGIN.bottom) / 2, escapeText(caption), 12,
      "middle", "#333333", "normal", -90);
  }

  legend(entries: Array<[string, string]>): void {
    let y = MARGIN.top + 6;
    for (const [name, color] of entries) {
      this.rect(WIDTH - MARGIN.right - 130, y - 9, 12, 12, color);
      this.text(WIDTH - MARGIN.right - 112, y + 1, escapeText(name), 11, "start");
      y += 18;
    }
  }

  render(): string {
    return this.parts.join("\n") + "\n</svg>\n";
  }
}

/** Mean with min and max, for multi-seed aggregation. */
export interface Aggregate {
  mean: number;
  lo: number;
  hi: number;
}

export function aggregate(values: number[]): Aggregate {
  const mean = values.reduce((a, b) => a + b, 0) / values.length;
  return { mean, lo: Math.min(...values), hi: Math.max(...values) };
}
