/** Stable part-color mapping: label i always renders as color i. */

export interface RGB {
  r: number;
  g: number;
  b: number;
}

// label 0 (padding) is dim gray; real parts get saturated, well-separated hues
const PALETTE: RGB[] = [
  { r: 0.35, g: 0.35, b: 0.35 },
  { r: 0.91, g: 0.30, b: 0.24 },
  { r: 0.18, g: 0.55, b: 0.91 },
  { r: 0.20, g: 0.78, b: 0.35 },
  { r: 0.95, g: 0.71, b: 0.15 },
  { r: 0.61, g: 0.35, b: 0.83 },
  { r: 0.13, g: 0.75, b: 0.75 },
  { r: 0.91, g: 0.45, b: 0.69 },
];

export function partColor(label: number): RGB {
  if (!Number.isInteger(label) || label < 0) {
    throw new Error(`invalid part label ${label}`);
  }
  if (label === 0) return PALETTE[0];
  return PALETTE[1 + ((label - 1) % (PALETTE.length - 1))];
}

export function colorBuffer(labels: number[]): Float32Array {
  const out = new Float32Array(labels.length * 3);
  labels.forEach((label, i) => {
    const { r, g, b } = partColor(label);
    out[i * 3] = r;
    out[i * 3 + 1] = g;
    out[i * 3 + 2] = b;
  });
  return out;
}

export function partColorCss(label: number): string {
  const { r, g, b } = partColor(label);
  const to255 = (v: number) => Math.round(v * 255);
  return `rgb(${to255(r)}, ${to255(g)}, ${to255(b)})`;
}
