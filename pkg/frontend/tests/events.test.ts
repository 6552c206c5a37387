/** EventStream behavior against a scripted local HTTP server: cursor
 * resume, gap signaling, retry after failures, and clean shutdown. */

import { createServer, type Server } from "node:http";
import type { AddressInfo } from "node:net";
import { afterEach, describe, expect, test } from "vitest";
import { ApiClient } from "../src/api.js";
import { EventStream } from "../src/events.js";
import type { ServerEvent } from "../src/types.js";

interface ScriptedPage {
  events: ServerEvent[];
  gap: boolean;
  last_seq: number;
  /** Destroy the socket instead of answering. */
  fail?: boolean;
}

function ev(seq: number, kind = "Ping"): ServerEvent {
  return { seq, kind, payload: {}, sim_time: null };
}

class StubEventServer {
  readonly server: Server;
  readonly sinceSeen: number[] = [];
  private pages: ScriptedPage[] = [];

  constructor() {
    this.server = createServer((req, res) => {
      const url = new URL(req.url ?? "/", "http://localhost");
      if (url.pathname !== "/events") {
        res.writeHead(404).end("{}");
        return;
      }
      this.sinceSeen.push(Number(url.searchParams.get("since")));
      const page = this.pages.shift();
      if (!page) {
        // Nothing scripted: long-poll timeout with no news.
        res.setHeader("content-type", "application/json");
        setTimeout(() => {
          res.end(JSON.stringify({ events: [], gap: false, last_seq: 0 }));
        }, 30);
        return;
      }
      if (page.fail) {
        res.destroy();
        return;
      }
      res.setHeader("content-type", "application/json");
      res.end(JSON.stringify(page));
    });
  }

  script(page: ScriptedPage): void {
    this.pages.push(page);
  }

  async start(): Promise<string> {
    await new Promise<void>((resolve) => this.server.listen(0, "127.0.0.1", resolve));
    const { port } = this.server.address() as AddressInfo;
    return `http://127.0.0.1:${port}`;
  }

  async stop(): Promise<void> {
    this.server.closeAllConnections();
    await new Promise((resolve) => this.server.close(resolve));
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

async function until(cond: () => boolean, timeoutMs = 5000): Promise<void> {
  const t0 = Date.now();
  while (!cond()) {
    if (Date.now() - t0 > timeoutMs) throw new Error("condition not reached");
    await sleep(10);
  }
}

describe("EventStream", () => {
  let stub: StubEventServer;
  let stream: EventStream | null = null;

  afterEach(async () => {
    await stream?.stop();
    stream = null;
    await stub.stop();
  });

  test("delivers events in order and resumes from the last seq", async () => {
    stub = new StubEventServer();
    stub.script({ events: [ev(1), ev(2), ev(3)], gap: false, last_seq: 3 });
    stub.script({ events: [ev(4), ev(5)], gap: false, last_seq: 5 });
    const base = await stub.start();

    const seen: number[] = [];
    let gaps = 0;
    stream = new EventStream(
      new ApiClient(base),
      { onEvent: (e) => seen.push(e.seq), onGap: () => gaps++ },
      1,
    );
    stream.start(0);
    await until(() => seen.length === 5);

    expect(seen).toEqual([1, 2, 3, 4, 5]);
    expect(gaps).toBe(0);
    // The second poll resumed from the last delivered event, not from 0.
    expect(stub.sinceSeen.slice(0, 2)).toEqual([0, 3]);
  });

  test("a gap is surfaced before the replacement events", async () => {
    stub = new StubEventServer();
    // Buffer dropped 1..6: server answers since=0 with gap + events from 7.
    stub.script({ events: [ev(7), ev(8)], gap: true, last_seq: 8 });
    const base = await stub.start();

    const order: string[] = [];
    stream = new EventStream(
      new ApiClient(base),
      {
        onEvent: (e) => order.push(`ev${e.seq}`),
        onGap: () => order.push("gap"),
      },
      1,
    );
    stream.start(0);
    await until(() => order.length === 3);

    expect(order).toEqual(["gap", "ev7", "ev8"]);
  });

  test("retries after a connection failure without skipping events", async () => {
    stub = new StubEventServer();
    stub.script({ events: [ev(1)], gap: false, last_seq: 1 });
    stub.script({ events: [], gap: false, last_seq: 1, fail: true });
    stub.script({ events: [ev(2)], gap: false, last_seq: 2 });
    const base = await stub.start();

    const seen: number[] = [];
    const statuses: string[] = [];
    stream = new EventStream(
      new ApiClient(base),
      {
        onEvent: (e) => seen.push(e.seq),
        onGap: () => {},
        onStatus: (s) => statuses.push(s),
      },
      1,
    );
    stream.start(0);
    await until(() => seen.length === 2);

    expect(seen).toEqual([1, 2]);
    expect(statuses).toContain("retrying");
    // The poll after the failure still resumed from seq 1.
    expect(stub.sinceSeen.slice(0, 3)).toEqual([0, 1, 1]);
  });

  test("stop() halts the loop", async () => {
    stub = new StubEventServer();
    stub.script({ events: [ev(1)], gap: false, last_seq: 1 });
    const base = await stub.start();

    const seen: number[] = [];
    stream = new EventStream(
      new ApiClient(base),
      { onEvent: (e) => seen.push(e.seq), onGap: () => {} },
      1,
    );
    stream.start(0);
    await until(() => seen.length === 1);
    await stream.stop();
    stream = null;

    const polls = stub.sinceSeen.length;
    await sleep(150);
    expect(stub.sinceSeen.length).toBe(polls);
    expect(seen).toEqual([1]);
  });
});
