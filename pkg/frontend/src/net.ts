/** Debounced fetching with stale-response discipline.
 *
 * Scrubbing a slider fires many state changes; we debounce them, cancel the
 * in-flight request when a newer one starts, and never display a response
 * that is older than the one already shown (monotonic display).
 */

export class Debouncer {
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(private readonly ms: number) {}

  schedule(fn: () => void): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      fn();
    }, this.ms);
  }

  cancel(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = null;
  }
}

export interface FrameResult {
  blob: Blob | Uint8Array;
  millis: number | null;
}

export type Fetcher = (
  url: string,
  signal: AbortSignal,
) => Promise<FrameResult>;

/** Tracks request sequence numbers so only the newest response is shown. */
export class LatestFrame {
  private seq = 0;
  private shown = 0;
  private inflight: AbortController | null = null;

  constructor(
    private readonly fetcher: Fetcher,
    private readonly onShow: (r: FrameResult, url: string) => void,
    private readonly onError: (err: unknown) => void = () => {},
  ) {}

  /** Issue a request for `url`; superseded or out-of-order responses are dropped. */
  request(url: string): number {
    const mySeq = ++this.seq;
    this.inflight?.abort();
    const ctl = new AbortController();
    this.inflight = ctl;
    this.fetcher(url, ctl.signal)
      .then((result) => {
        if (mySeq > this.shown) {
          this.shown = mySeq;
          this.onShow(result, url);
        }
      })
      .catch((err) => {
        if (!ctl.signal.aborted) this.onError(err);
      });
    return mySeq;
  }

  get lastShown(): number {
    return this.shown;
  }
}
