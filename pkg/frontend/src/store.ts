import type { SessionTrace, SessionView } from "./types.js";

/** One active session per tab; every state change follows a server response
 * (optimistic updates are deliberately impossible: the only way to change
 * `view` is to store a payload the server returned). */
export interface AppState {
  view: SessionView | null;
  /** masses from the previous render, for highlighting deltas */
  previousMasses: Record<string, number>;
  trace: SessionTrace | null;
  error: string | null;
  busy: boolean;
}

type Listener = (state: AppState) => void;

export class Store {
  private state: AppState = {
    view: null,
    previousMasses: {},
    trace: null,
    error: null,
    busy: false,
  };
  private listeners: Listener[] = [];

  get(): AppState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  setBusy(busy: boolean): void {
    this.state = { ...this.state, busy };
    this.emit();
  }

  setError(error: string | null): void {
    this.state = { ...this.state, error, busy: false };
    this.emit();
  }

  /** Install a server view; remembers the outgoing masses for delta marks. */
  setView(view: SessionView, trace: SessionTrace | null = null): void {
    const previousMasses: Record<string, number> = {};
    const old = this.state.view;
    if (old && old.session_id === view.session_id) {
      for (const entry of old.ranking) previousMasses[entry.disease_id] = entry.mass;
    }
    this.state = { ...this.state, view, previousMasses, trace, error: null, busy: false };
    this.emit();
  }

  setTrace(trace: SessionTrace): void {
    this.state = { ...this.state, trace };
    this.emit();
  }

  reset(): void {
    this.state = { view: null, previousMasses: {}, trace: null, error: null, busy: false };
    this.emit();
  }
}
