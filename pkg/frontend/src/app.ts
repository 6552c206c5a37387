/** Application assembly: one store, one event stream, wizard + monitor. */

import { ApiClient } from "./api.js";
import { el } from "./dom.js";
import { EventStream } from "./events.js";
import { Monitor } from "./monitor.js";
import { UiStore } from "./store.js";
import { Wizard } from "./wizard.js";

export interface App {
  api: ApiClient;
  store: UiStore;
  stream: EventStream;
  wizard: Wizard;
  monitor: Monitor;
  /** Resolves once the initial snapshot has been loaded. */
  ready: Promise<void>;
  shutdown(): Promise<void>;
}

export function mountApp(root: HTMLElement, api: ApiClient, waitS = 20): App {
  const store = new UiStore(api);
  const wizardRoot = el("main", { id: "wizard" });
  const monitorRoot = el("aside", { id: "monitor" });
  root.append(wizardRoot, monitorRoot);

  const wizard = new Wizard(wizardRoot, api, store);
  const monitor = new Monitor(monitorRoot, api, store);
  const stream = new EventStream(
    api,
    {
      onEvent: (e) => store.applyEvent(e),
      onGap: store.onGap,
      onStatus: (s) => store.setConnection(s),
    },
    waitS,
  );

  // Seed from the snapshot, then replay the server's retained event
  // buffer from the beginning so a mid-acquisition reload reconstructs
  // the same feeds (a gap falls back to the snapshot just loaded).
  const ready = store.refresh().then(() => {
    stream.start(0);
  });

  return {
    api,
    store,
    stream,
    wizard,
    monitor,
    ready,
    shutdown: () => stream.stop(),
  };
}
