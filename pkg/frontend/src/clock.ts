/** Game clock: elapsed milliseconds since the annotator pressed start. */

export class GameClock {
  private origin: number | null = null;
  private paused = 0;
  private pauseStarted: number | null = null;

  constructor(private source: () => number = () => performance.now()) {}

  start(): void {
    if (this.origin === null) this.origin = this.source();
    if (this.pauseStarted !== null) {
      this.paused += this.source() - this.pauseStarted;
      this.pauseStarted = null;
    }
  }

  pause(): void {
    if (this.origin !== null && this.pauseStarted === null) {
      this.pauseStarted = this.source();
    }
  }

  get running(): boolean {
    return this.origin !== null && this.pauseStarted === null;
  }

  nowMs(): number {
    if (this.origin === null) return 0;
    const at = this.pauseStarted ?? this.source();
    return Math.max(0, Math.round(at - this.origin - this.paused));
  }

  format(): string {
    const total = Math.floor(this.nowMs() / 1000);
    const minutes = Math.floor(total / 60);
    const seconds = total % 60;
    return `${String(minutes).padStart(2, "0")}:${String(seconds).padStart(2, "0")}`;
  }
}
