import { Client } from "./api.js";
import { App, installKeyboard } from "./ui.js";

function boot(): void {
  const params = new URLSearchParams(window.location.search);
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const client = new Client(params.get("api") ?? "");
  const app = new App(root, client);
  installKeyboard(app, document);
  app
    .start({
      config: params.get("config") ?? undefined,
      data: params.get("data") ?? undefined,
      oracle: params.get("oracle") === "1",
    })
    .catch((error) => {
      root.innerHTML = `<div class="banner">could not start a session: ${String(error)}</div>`;
    });
  // handy for debugging from the console
  (window as unknown as { annotator: App }).annotator = app;
}

boot();
