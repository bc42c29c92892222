/** Linear-scale heatmap rendering.
 *
 * buildPixels is pure (grid in, RGBA bytes out) so tests can check exact
 * pixel behavior without a canvas; drawHeatmap blits those bytes 1:1 and
 * lets CSS scale the canvas at integer zoom without resampling artifacts.
 */

export interface PixelImage {
  width: number;
  height: number;
  data: Uint8ClampedArray; // RGBA rows, top row first
}

/** Viridis-like ramp, linear in value: dark . bright. */
function colorAt(t: number): [number, number, number] {
  const stops: [number, number, number][] = [
    [68, 1, 84],
    [59, 82, 139],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
  ];
  const x = Math.min(Math.max(t, 0), 1) * (stops.length - 1);
  const i = Math.min(Math.floor(x), stops.length - 2);
  const f = x - i;
  const a = stops[i];
  const b = stops[i + 1];
  return [
    Math.round(a[0] + (b[0] - a[0]) * f),
    Math.round(a[1] + (b[1] - a[1]) * f),
    Math.round(a[2] + (b[2] - a[2]) * f),
  ];
}

/** grid[row][col], row 0 at minimum y; the image's top row is maximum y. */
export function buildPixels(grid: number[][]): PixelImage {
  const height = grid.length;
  const width = height > 0 ? grid[0].length : 0;
  let lo = Infinity;
  let hi = -Infinity;
  for (const row of grid) {
    for (const v of row) {
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
  }
  const span = hi - lo;
  const data = new Uint8ClampedArray(width * height * 4);
  for (let r = 0; r < height; r++) {
    const src = grid[height - 1 - r]; // flip: canvas rows go top-down
    for (let c = 0; c < width; c++) {
      const t = span > 0 ? (src[c] - lo) / span : 0.5;
      const [red, green, blue] = colorAt(t);
      const k = (r * width + c) * 4;
      data[k] = red;
      data[k + 1] = green;
      data[k + 2] = blue;
      data[k + 3] = 255;
    }
  }
  return { width, height, data };
}

export function drawHeatmap(canvas: HTMLCanvasElement, grid: number[][]): void {
  const img = buildPixels(grid);
  canvas.width = img.width;
  canvas.height = img.height;
  const ctx = canvas.getContext('2d');
  if (!ctx || img.width === 0) return;
  const imageData = ctx.createImageData(img.width, img.height);
  imageData.data.set(img.data);
  ctx.putImageData(imageData, 0, 0);
}
