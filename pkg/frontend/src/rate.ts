/** Request pacing during slider drags.
 *
 * Inference-only requests are rate-limited to at most `maxHz` per second
 * while the user drags; the (expensive) evaluate request fires once, a fixed
 * quiet period after the drag ends. The clock and timer functions are
 * injectable so tests can drive time deterministically.
 */

export interface Clock {
  now(): number; // milliseconds
  setTimeout(fn: () => void, ms: number): number;
  clearTimeout(id: number): void;
}

export const realClock: Clock = {
  now: () => Date.now(),
  setTimeout: (fn, ms) => setTimeout(fn, ms) as unknown as number,
  clearTimeout: (id) => clearTimeout(id),
};

export class DragPacer {
  private lastFire = -Infinity;
  private trailingTimer: number | null = null;
  private settleTimer: number | null = null;

  constructor(
    private onInference: () => void,
    private onEvaluate: () => void,
    private clock: Clock = realClock,
    private maxHz = 30,
    private settleMs = 250,
  ) {}

  /** Call on every slider movement. */
  input(): void {
    const interval = 1000 / this.maxHz;
    const now = this.clock.now();
    if (now - this.lastFire >= interval) {
      this.lastFire = now;
      this.onInference();
    } else if (this.trailingTimer === null) {
      // coalesce movements inside the interval into one trailing request
      const wait = interval - (now - this.lastFire);
      this.trailingTimer = this.clock.setTimeout(() => {
        this.trailingTimer = null;
        this.lastFire = this.clock.now();
        this.onInference();
      }, wait);
    }
    if (this.settleTimer !== null) {
      this.clock.clearTimeout(this.settleTimer);
    }
    this.settleTimer = this.clock.setTimeout(() => {
      this.settleTimer = null;
      this.onEvaluate();
    }, this.settleMs);
  }

  dispose(): void {
    if (this.trailingTimer !== null) this.clock.clearTimeout(this.trailingTimer);
    if (this.settleTimer !== null) this.clock.clearTimeout(this.settleTimer);
  }
}
