import { ApiError, SessionApi } from "./api.js";
import { Store } from "./store.js";
import type { AnswerSelection } from "./types.js";
import { renderApp } from "./view.js";

/** Blob.text() with a FileReader fallback for DOM implementations without it. */
async function readFileText(file: File): Promise<string> {
  if (typeof file.text === "function") return file.text();
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onerror = () => reject(reader.error);
    reader.onload = () => resolve(String(reader.result));
    reader.readAsText(file);
  });
}

/** Controller wiring the upload form, answer controls, and reload flow.
 *
 * Every render follows a server response; a submit for a stale round gets a
 * conflict from the server and the view refreshes from GET instead of
 * guessing. Reloading mid-session (or another tab asking later) reconstructs
 * the identical view from the session id alone.
 */
export class App {
  readonly store = new Store();
  private root: HTMLElement;

  constructor(
    root: HTMLElement,
    readonly api: SessionApi = new SessionApi(),
  ) {
    this.root = root;
    this.store.subscribe((state) => {
      renderApp(this.root, state);
      this.bindHandlers();
    });
    renderApp(this.root, this.store.get());
  }

  /** Parse an uploaded patient file and open a session. */
  async createSessionFromFile(file: File): Promise<void> {
    let record: unknown;
    try {
      record = JSON.parse(await readFileText(file));
    } catch (exc) {
      this.store.setError(`not a JSON patient record: ${String(exc)}`);
      return;
    }
    await this.createSession(record);
  }

  async createSession(record: unknown): Promise<void> {
    this.store.setBusy(true);
    try {
      const view = await this.api.createSession(record);
      this.store.reset();
      this.store.setView(view);
      await this.refreshTrace();
    } catch (exc) {
      this.store.setError(this.describe(exc));
    }
  }

  /** Reconnect to an existing session (mid-session reload). */
  async resumeSession(sessionId: string): Promise<void> {
    this.store.setBusy(true);
    try {
      const view = await this.api.getSession(sessionId);
      this.store.reset();
      this.store.setView(view);
      await this.refreshTrace();
    } catch (exc) {
      this.store.setError(this.describe(exc));
    }
  }

  /** Submit the structured per-gap selections for the current round. */
  async submitAnswers(selections: AnswerSelection[]): Promise<void> {
    const view = this.store.get().view;
    if (!view || view.terminal) return; // controls are gone once terminal
    this.store.setBusy(true);
    try {
      const next = await this.api.submitAnswers(view.session_id, view.round, selections);
      this.store.setView(next);
      await this.refreshTrace();
    } catch (exc) {
      await this.recoverFromSubmitError(view.session_id, exc);
    }
  }

  async submitFreeText(text: string): Promise<void> {
    const view = this.store.get().view;
    if (!view || view.terminal) return;
    this.store.setBusy(true);
    try {
      const next = await this.api.submitFreeText(view.session_id, view.round, text);
      this.store.setView(next);
      await this.refreshTrace();
    } catch (exc) {
      await this.recoverFromSubmitError(view.session_id, exc);
    }
  }

  /** Stale-round conflicts re-sync from the server; other errors surface inline. */
  private async recoverFromSubmitError(sessionId: string, exc: unknown): Promise<void> {
    if (exc instanceof ApiError && exc.status === 409) {
      try {
        const fresh = await this.api.getSession(sessionId);
        this.store.setView(fresh);
        this.store.setError(`out of date: ${exc.detail}`);
        return;
      } catch {
        /* fall through to the generic path */
      }
    }
    this.store.setError(this.describe(exc));
  }

  private async refreshTrace(): Promise<void> {
    const view = this.store.get().view;
    if (!view) return;
    try {
      this.store.setTrace(await this.api.getTrace(view.session_id));
    } catch {
      /* the trail is auxiliary; the main view stays authoritative */
    }
  }

  /** Read the current per-gap selections out of the rendered form. */
  collectSelections(): AnswerSelection[] {
    const selections: AnswerSelection[] = [];
    const fieldsets = this.root.querySelectorAll<HTMLFieldSetElement>("fieldset[data-gap-id]");
    fieldsets.forEach((fieldset) => {
      const gapId = fieldset.getAttribute("data-gap-id");
      if (!gapId) return;
      const checked = fieldset.querySelector<HTMLInputElement>("input[type=radio]:checked");
      const value = (checked?.value ?? "unknown") as AnswerSelection["value"];
      const selection: AnswerSelection = { gap_id: gapId, value };
      if (value === "yes") {
        const severity = fieldset.querySelector<HTMLSelectElement>("select.severity-select");
        if (severity && severity.value) selection.severity = severity.value;
      }
      selections.push(selection);
    });
    return selections;
  }

  private bindHandlers(): void {
    const form = this.root.querySelector<HTMLFormElement>("form[data-role=question]");
    if (form) {
      form.addEventListener("submit", (event) => {
        event.preventDefault();
        void this.submitAnswers(this.collectSelections());
      });
      const freeButton = form.querySelector<HTMLButtonElement>("[data-role=submit-free-text]");
      const freeInput = form.querySelector<HTMLInputElement>("[data-role=free-text-input]");
      if (freeButton && freeInput) {
        freeButton.addEventListener("click", () => {
          if (freeInput.value.trim()) void this.submitFreeText(freeInput.value.trim());
        });
      }
    }
  }

  private describe(exc: unknown): string {
    if (exc instanceof ApiError) return `server rejected the request (${exc.status}): ${exc.detail}`;
    return String(exc);
  }
}
