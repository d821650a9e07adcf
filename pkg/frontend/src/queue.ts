// Optimistic submit queue: sends run in order; transport failures keep the
// item queued and schedule a retry; service rejections drop the item and
// surface through onReject (they would fail forever).

import { ServiceRejection } from "./api.js";

export interface QueueOptions<T> {
  send: (item: T) => Promise<void>;
  onReject?: (item: T, detail: string) => void;
  retryDelayMs?: number;
  schedule?: (fn: () => void, ms: number) => void;
}

export class SubmitQueue<T> {
  private readonly items: T[] = [];
  private readonly send: (item: T) => Promise<void>;
  private readonly onReject: (item: T, detail: string) => void;
  private readonly retryDelayMs: number;
  private readonly schedule: (fn: () => void, ms: number) => void;
  private flushing = false;
  private retryScheduled = false;

  constructor(opts: QueueOptions<T>) {
    this.send = opts.send;
    this.onReject = opts.onReject ?? (() => undefined);
    this.retryDelayMs = opts.retryDelayMs ?? 2000;
    this.schedule = opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
  }

  get pending(): number {
    return this.items.length;
  }

  push(item: T): Promise<void> {
    this.items.push(item);
    return this.flush();
  }

  async flush(): Promise<void> {
    if (this.flushing) return;
    this.flushing = true;
    try {
      while (this.items.length > 0) {
        const head = this.items[0] as T;
        try {
          await this.send(head);
          this.items.shift();
        } catch (err) {
          if (err instanceof ServiceRejection) {
            this.items.shift();
            this.onReject(head, err.detail);
            continue;
          }
          this.scheduleRetry();
          return;
        }
      }
    } finally {
      this.flushing = false;
    }
  }

  private scheduleRetry(): void {
    if (this.retryScheduled) return;
    this.retryScheduled = true;
    this.schedule(() => {
      this.retryScheduled = false;
      void this.flush();
    }, this.retryDelayMs);
  }
}
