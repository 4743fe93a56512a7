// DOM rendering. No framework: each render function rebuilds one region
// from the session snapshot. main.ts wires them to session.onChange.

import { StudioSession, Tool } from "./session.js";

const TOOLS: Tool[] = ["paint", "paste", "sr", "edit"];

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderBanner(root: HTMLElement, session: StudioSession, onRetry: () => void): void {
  root.innerHTML = "";
  if (!session.retryBanner) {
    root.hidden = true;
    return;
  }
  root.hidden = false;
  root.append(el("span", "banner-text", "server unreachable; your session is saved locally"));
  const button = el("button", "banner-retry", "retry");
  button.onclick = onRetry;
  root.append(button);
}

export function renderStatusLine(root: HTMLElement, session: StudioSession): void {
  const bits = [`phase: ${session.phase}`];
  if (session.jobId) bits.push(`job: ${session.jobId}`);
  if (session.scaleCount > 0) {
    bits.push(`scales ready: ${session.availableScales}/${session.scaleCount}`);
  }
  if (session.bestScale !== null) bits.push(`best scale: ${session.bestScale}`);
  if (session.failure) bits.push(`error: ${session.failure}`);
  root.textContent = bits.join("  |  ");
}

/** One box per scale, filled as scale_ready events land (prefix order). */
export function renderIndicator(root: HTMLElement, session: StudioSession): void {
  root.innerHTML = "";
  for (let i = 0; i < session.scaleCount; i++) {
    const state = session.scaleStates[i] ?? "pending";
    const ready = i < session.availableScales;
    const box = el("span", `scale-box ${ready ? "ready" : state}`, String(i));
    box.title = ready ? `scale ${i} published` : `scale ${i}: ${state}`;
    root.append(box);
  }
}

export interface ToolHandlers {
  onEdit(tool: Tool, atScale: number | undefined): void;
}

export function renderTools(root: HTMLElement, session: StudioSession, handlers: ToolHandlers): void {
  root.innerHTML = "";
  for (const tool of TOOLS) {
    const guard = session.guardFor(tool);
    const row = el("div", "tool-row");
    const button = el("button", "tool-button", tool);
    button.disabled = !guard.enabled;
    button.title = guard.tooltip; // readiness tooltip while disabled, usage hint after
    let scaleInput: HTMLSelectElement | null = null;
    if (guard.enabled && guard.scaleRange) {
      scaleInput = el("select", "tool-scale");
      const [lo, hi] = guard.scaleRange;
      for (let s = lo; s <= hi; s++) {
        const opt = el("option", undefined, String(s));
        opt.value = String(s);
        if (s === guard.defaultScale) opt.selected = true;
        scaleInput.append(opt);
      }
    }
    button.onclick = () => {
      handlers.onEdit(tool, scaleInput ? Number(scaleInput.value) : undefined);
    };
    row.append(button);
    if (scaleInput) row.append(el("label", "tool-label", "scale"), scaleInput);
    if (guard.enabled && guard.recommended) {
      row.append(el("span", "tool-badge", `${guard.recommended[0]}-${guard.recommended[1]} recommended`));
    }
    root.append(row);
  }
}

export function renderHistory(root: HTMLElement, session: StudioSession): void {
  root.innerHTML = "";
  // newest first for display; the underlying list stays append-only
  for (const entry of [...session.history].reverse()) {
    const card = el("div", "history-card");
    const img = el("img", "history-thumb");
    img.src = `data:image/png;base64,${entry.thumbnail_png_b64}`;
    img.width = 96;
    const scale =
      entry.summary.at_scale ?? entry.summary.up_to_scale;
    const label =
      `${entry.summary.tool}` +
      (scale !== undefined ? ` @ scale ${scale}` : "") +
      ` seed ${entry.summary.seed}` +
      (entry.cached ? " (cached)" : "");
    card.append(img, el("div", "history-label", label));
    card.title = `sha256 ${entry.sha256.slice(0, 12)}  dims ${entry.dims[0]}x${entry.dims[1]}`;
    root.append(card);
  }
}

/** Scale chooser with the energy cost of each prefix depth. */
export function renderEdpChooser(
  root: HTMLElement,
  session: StudioSession,
  onPreview: (scale: number) => void,
): void {
  root.innerHTML = "";
  const rows = session.scaleChooserRows();
  if (rows.length === 0) {
    root.append(el("div", "edp-empty", "profile not loaded yet"));
    return;
  }
  const table = el("table", "edp-table");
  const head = el("tr");
  for (const h of ["scale", "model s", "EDP", "EDP (norm)", ""]) {
    head.append(el("th", undefined, h));
  }
  table.append(head);
  for (const row of rows) {
    const tr = el("tr");
    tr.append(el("td", undefined, String(row.scale)));
    tr.append(el("td", undefined, row.modelTime.toFixed(3)));
    tr.append(el("td", undefined, row.edp.toExponential(3)));
    tr.append(el("td", undefined, row.normalizedEdp.toFixed(4)));
    const cell = el("td");
    const go = el("button", "edp-preview", "preview");
    go.onclick = () => onPreview(row.scale);
    cell.append(go);
    tr.append(cell);
    table.append(tr);
  }
  root.append(table);
}
