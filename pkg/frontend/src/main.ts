import { SessionApi } from "./api.js";
import { App } from "./app.js";

/** Page bootstrap: an upload control plus the session root. The session id
 * lands in the URL hash so a reload resumes the same consultation. */
export function bootstrap(document: Document): App {
  const uploadInput = document.querySelector<HTMLInputElement>("#patient-file");
  const root = document.querySelector<HTMLElement>("#session-root");
  if (!uploadInput || !root) throw new Error("expected #patient-file and #session-root");

  const app = new App(root, new SessionApi());

  uploadInput.addEventListener("change", () => {
    const file = uploadInput.files?.[0];
    if (file) {
      void app.createSessionFromFile(file).then(() => {
        const view = app.store.get().view;
        if (view) window.location.hash = view.session_id;
      });
    }
  });

  app.store.subscribe((state) => {
    if (state.view) window.location.hash = state.view.session_id;
  });

  const fromHash = window.location.hash.replace(/^#/, "");
  if (fromHash) void app.resumeSession(fromHash);
  return app;
}

if (typeof window !== "undefined" && document.readyState !== "loading") {
  bootstrap(document);
} else if (typeof window !== "undefined") {
  document.addEventListener("DOMContentLoaded", () => bootstrap(document));
}
