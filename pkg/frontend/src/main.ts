// Entry point: builds the session (restoring a saved one when present),
// wires the controls, and re-renders on every session change.

import { ApiClient, DeliveryMode } from "./api.js";
import { GuardError, StudioSession, Tool } from "./session.js";
import {
  renderBanner,
  renderEdpChooser,
  renderHistory,
  renderIndicator,
  renderStatusLine,
  renderTools,
} from "./ui.js";

// served statically, so the API origin comes from ?server=... (same origin otherwise)
const serverOrigin = new URLSearchParams(location.search).get("server") ?? "";
const api = new ApiClient(serverOrigin);

const session = StudioSession.restore({ api }) ?? new StudioSession({ api });

const $ = (id: string) => document.getElementById(id)!;

function fileToB64(file: File): Promise<string> {
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onerror = () => reject(reader.error);
    reader.onload = () => {
      const url = reader.result as string; // data:image/png;base64,....
      resolve(url.slice(url.indexOf(",") + 1));
    };
    reader.readAsDataURL(file);
  });
}

function flash(message: string): void {
  $("notice").textContent = message;
  setTimeout(() => {
    if ($("notice").textContent === message) $("notice").textContent = "";
  }, 4000);
}

async function runEdit(tool: Tool, atScale: number | undefined): Promise<void> {
  try {
    await session.interactiveEdit(tool, atScale === undefined ? {} : { atScale });
  } catch (err) {
    flash(err instanceof GuardError ? err.message : String(err));
  }
}

function render(): void {
  renderBanner($("banner"), session, () => void session.retry());
  renderStatusLine($("status"), session);
  renderIndicator($("indicator"), session);
  renderTools($("tools"), session, { onEdit: (tool, atScale) => void runEdit(tool, atScale) });
  renderHistory($("history"), session);
  renderEdpChooser($("edp"), session, (scale) => {
    void session.generatePreview(scale).catch((err) => flash(String(err)));
  });
}

session.onChange(render);

$("upload-button").addEventListener("click", async () => {
  const input = $("image-input") as HTMLInputElement;
  const file = input.files?.[0];
  if (!file) {
    flash("choose an image first");
    return;
  }
  const threshold = Number(($("threshold") as HTMLInputElement).value);
  const mode = ($("mode") as HTMLSelectElement).value as DeliveryMode;
  try {
    await session.uploadAndTrain(await fileToB64(file), threshold, mode);
  } catch (err) {
    flash(String(err));
  }
});

$("threshold").addEventListener("input", () => {
  $("threshold-value").textContent = ($("threshold") as HTMLInputElement).value;
});

for (const layer of ["paint", "paste", "mask"] as const) {
  $(`${layer}-input`).addEventListener("change", async () => {
    const file = ($(`${layer}-input`) as HTMLInputElement).files?.[0];
    if (file) session.setLayer(layer, await fileToB64(file));
  });
}

$("profile-button").addEventListener("click", () => {
  session.refreshProfile().catch((err) => flash(String(err)));
});

// reattach to a live job after a reload
void session.resume().catch(() => undefined);

render();
