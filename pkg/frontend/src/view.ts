import type { AppState } from "./store.js";
import { SEVERITY_LEVELS, type SessionTrace, type SessionView } from "./types.js";

/** Pure DOM projection of the latest server payload. Nothing here computes a
 * score: masses, energies, entropy, priorities, and the terminal verdict are
 * printed exactly as the server sent them. */

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function formatMass(mass: number): string {
  return mass.toFixed(4);
}

export function renderRanking(view: SessionView, previousMasses: Record<string, number>): HTMLElement {
  const box = el("section", "ranking");
  box.setAttribute("data-role", "ranking");
  const heading = el("h2", undefined, "Ranking");
  box.appendChild(heading);
  const survivors = view.ranking.filter((entry) => entry.survivor);
  const list = el("ol", "ranking-list");
  for (const entry of survivors) {
    const item = el("li", "ranking-entry");
    item.setAttribute("data-disease-id", entry.disease_id);
    item.setAttribute("data-mass", String(entry.mass));
    item.setAttribute("data-energy", String(entry.energy));

    const label = el("span", "disease-label", `${entry.name} (${entry.disease_id})`);
    const bar = el("div", "mass-bar");
    const fill = el("div", "mass-fill");
    fill.style.width = `${(entry.mass * 100).toFixed(2)}%`;
    bar.appendChild(fill);
    const numbers = el(
      "span",
      "mass-number",
      `mass ${formatMass(entry.mass)} | energy ${entry.energy.toFixed(4)}`,
    );

    const before = previousMasses[entry.disease_id];
    if (before !== undefined && Math.abs(before - entry.mass) > 5e-5) {
      const direction = entry.mass > before ? "mass-up" : "mass-down";
      item.classList.add(direction);
      const delta = el(
        "span",
        `mass-delta ${direction}`,
        `${entry.mass > before ? "+" : ""}${(entry.mass - before).toFixed(4)}`,
      );
      numbers.appendChild(delta);
    }

    item.append(label, bar, numbers);
    list.appendChild(item);
  }
  box.appendChild(list);

  const total = survivors.reduce((acc, entry) => acc + entry.mass, 0);
  const totalLine = el("p", "mass-total", `survivor mass total: ${total.toFixed(4)}`);
  totalLine.setAttribute("data-role", "mass-total");
  totalLine.setAttribute("data-total", String(total));
  box.appendChild(totalLine);
  return box;
}

export function renderStatus(view: SessionView): HTMLElement {
  const box = el("section", "status");
  box.setAttribute("data-role", "status");
  const round = el("span", "round-counter", `round ${view.round} of ${view.r_max}`);
  round.setAttribute("data-role", "round-counter");
  const entropy = el("span", "entropy", `entropy ${view.entropy.toFixed(4)} nats`);
  entropy.setAttribute("data-role", "entropy");
  entropy.setAttribute("data-entropy", String(view.entropy));
  box.append(round, entropy);
  return box;
}

export function renderTerminalBanner(view: SessionView): HTMLElement | null {
  if (!view.terminal) return null;
  const banner = el("section", "terminal-banner");
  banner.setAttribute("data-role", "terminal-banner");
  banner.setAttribute("data-reason", view.terminal.reason);
  banner.setAttribute("data-uncertainty", String(view.terminal.uncertainty_flag));
  banner.appendChild(el("strong", undefined, `Session complete: ${view.terminal.reason}`));
  banner.appendChild(
    el(
      "p",
      undefined,
      view.terminal.uncertainty_flag
        ? "uncertainty flag set: no candidate reached the confidence gate"
        : "confidence gate reached",
    ),
  );
  return banner;
}

export function renderQuestion(view: SessionView): HTMLElement | null {
  if (!view.question) return null;
  const form = el("form", "question");
  form.setAttribute("data-role", "question");
  form.setAttribute("data-round", String(view.question.round));
  form.appendChild(el("h2", undefined, "Question"));
  form.appendChild(el("p", "question-text", view.question.text));

  for (const gap of view.question.gaps) {
    const fieldset = el("fieldset", "gap-controls");
    fieldset.setAttribute("data-gap-id", gap.finding_id);
    fieldset.appendChild(el("legend", undefined, gap.clause));

    for (const value of ["yes", "no", "unknown"] as const) {
      const label = el("label", "answer-option");
      const radio = el("input");
      radio.type = "radio";
      radio.name = `answer-${gap.finding_id}`;
      radio.value = value;
      if (value === "unknown") radio.checked = true;
      label.append(radio, document.createTextNode(` ${value}`));
      fieldset.appendChild(label);
    }

    if (gap.allows_severity) {
      const select = el("select", "severity-select");
      select.setAttribute("data-severity-for", gap.finding_id);
      const none = el("option", undefined, "(severity)");
      none.setAttribute("value", "");
      select.appendChild(none);
      for (const level of SEVERITY_LEVELS) {
        const option = el("option", undefined, level);
        option.setAttribute("value", level);
        select.appendChild(option);
      }
      fieldset.appendChild(select);
    }
    form.appendChild(fieldset);
  }

  const submit = el("button", "submit-answers", "Submit answers");
  submit.type = "submit";
  submit.setAttribute("data-role", "submit-answers");
  form.appendChild(submit);

  const freeBox = el("div", "free-text");
  const freeInput = el("input", "free-text-input");
  freeInput.type = "text";
  freeInput.placeholder = "...or answer in your own words";
  freeInput.setAttribute("data-role", "free-text-input");
  const freeSubmit = el("button", "submit-free-text", "Send text");
  freeSubmit.type = "button";
  freeSubmit.setAttribute("data-role", "submit-free-text");
  freeBox.append(freeInput, freeSubmit);
  form.appendChild(freeBox);
  return form;
}

export function renderTrace(trace: SessionTrace | null): HTMLElement {
  const details = el("details", "audit-trail");
  details.setAttribute("data-role", "audit-trail");
  details.appendChild(el("summary", undefined, "Audit trail"));
  if (!trace) {
    details.appendChild(el("p", undefined, "(open to load)"));
    return details;
  }
  const list = el("ol", "trail-rounds");
  for (const round of trace.rounds) {
    const item = el("li", "trail-round");
    item.setAttribute("data-round", String(round.round));
    item.appendChild(el("p", "trail-question", round.question ? round.question.text : ""));
    item.appendChild(
      el(
        "p",
        "trail-delta",
        `+${round.delta.add_positive.join(",") || "-"} / -${round.delta.add_negative.join(",") || "-"} / ?${round.delta.add_unresolved.join(",") || "-"}`,
      ),
    );
    const top = round.ranking.entries
      .slice(0, 3)
      .map((entry) => `${entry.disease_id} ${formatMass(entry.mass)}`)
      .join("; ");
    item.appendChild(el("p", "trail-ranking", top));
    list.appendChild(item);
  }
  details.appendChild(list);
  return details;
}

export function renderError(error: string | null): HTMLElement | null {
  if (!error) return null;
  const box = el("p", "error-banner", error);
  box.setAttribute("data-role", "error");
  return box;
}

/** Full projection: everything on screen derives from `state`, which only
 * ever holds payloads the server returned. */
export function renderApp(root: HTMLElement, state: AppState): void {
  root.textContent = "";
  const error = renderError(state.error);
  if (error) root.appendChild(error);

  if (!state.view) {
    const empty = el("p", "empty-state", "Upload a patient record to begin a consultation.");
    empty.setAttribute("data-role", "empty-state");
    root.appendChild(empty);
    return;
  }

  const view = state.view;
  const header = el("header", "session-header");
  const title = el("h1", undefined, `Consultation ${view.session_id}`);
  title.setAttribute("data-role", "session-id");
  title.setAttribute("data-session-id", view.session_id);
  header.appendChild(title);
  header.appendChild(el("p", "config-hash", `config ${view.config_hash}`));
  root.appendChild(header);

  root.appendChild(renderStatus(view));
  const banner = renderTerminalBanner(view);
  if (banner) root.appendChild(banner);
  root.appendChild(renderRanking(view, state.previousMasses));
  if (!view.terminal) {
    const question = renderQuestion(view);
    if (question) root.appendChild(question);
  }
  root.appendChild(renderTrace(state.trace));

  if (state.busy) {
    const busy = el("p", "busy", "waiting for the server...");
    busy.setAttribute("data-role", "busy");
    root.appendChild(busy);
  }
}
