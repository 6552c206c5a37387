/** Browser entry point. Pass ?api=http://host:port to point the console
 * at a control service on another origin (CORS is enabled server-side);
 * by default it talks to the origin that served this page. */

import { ApiClient } from "./api.js";
import { mountApp } from "./app.js";

const base = new URLSearchParams(location.search).get("api") ?? "";
const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

const app = mountApp(root, new ApiClient(base));
app.ready.catch((err) => {
  const note = document.createElement("p");
  note.className = "error-box";
  note.textContent = `cannot reach control service: ${String(err)}`;
  root.prepend(note);
});
