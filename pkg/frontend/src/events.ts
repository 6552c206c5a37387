/** Single long-poll event subscription with sequence-based resume.
 *
 * The cursor only ever advances past events that were delivered to the
 * handler, so a reconnect can never skip one. When the server reports a
 * gap (the buffer dropped entries older than the cursor) the stream
 * surfaces it so the owner can refetch /state before continuing.
 */

import type { ApiClient } from "./api.js";
import type { ServerEvent } from "./types.js";

export interface EventStreamHandlers {
  onEvent(event: ServerEvent): void;
  onGap(): void;
  /** Connection health updates, for a status indicator. */
  onStatus?(status: "connected" | "retrying"): void;
}

const INITIAL_BACKOFF_MS = 250;
const MAX_BACKOFF_MS = 4000;

export class EventStream {
  private running = false;
  private cursor = 0;
  private controller: AbortController | null = null;
  private loopDone: Promise<void> = Promise.resolve();

  constructor(
    private readonly api: ApiClient,
    private readonly handlers: EventStreamHandlers,
    private readonly waitS = 20,
  ) {}

  get lastSeq(): number {
    return this.cursor;
  }

  start(since = 0): void {
    if (this.running) return;
    this.running = true;
    this.cursor = since;
    this.loopDone = this.loop();
  }

  async stop(): Promise<void> {
    this.running = false;
    this.controller?.abort();
    await this.loopDone;
  }

  private async loop(): Promise<void> {
    let backoff = INITIAL_BACKOFF_MS;
    while (this.running) {
      this.controller = new AbortController();
      try {
        const page = await this.api.events(
          this.cursor,
          this.waitS,
          this.controller.signal,
        );
        backoff = INITIAL_BACKOFF_MS;
        this.handlers.onStatus?.("connected");
        if (page.gap) this.handlers.onGap();
        for (const event of page.events) {
          this.cursor = event.seq;
          if (!this.running) return;
          this.handlers.onEvent(event);
        }
      } catch {
        if (!this.running) return;
        this.handlers.onStatus?.("retrying");
        await sleep(backoff);
        backoff = Math.min(backoff * 2, MAX_BACKOFF_MS);
      }
    }
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
