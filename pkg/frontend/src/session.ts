// Studio session state machine.
//
// Owns everything the UI renders: job identity, per-scale readiness, the
// append-only edit history, canvas layers, and the edit-result cache. All
// protocol traffic goes through an ApiClient; all rules that the server
// would enforce are mirrored here as guards so the session never issues a
// request the protocol would reject.

import {
  ApiClient,
  ApiError,
  DeliveryMode,
  EditKind,
  EditRequest,
  EditResult,
  ProfileReport,
  ProgressEvent,
  ScaleTrainState,
  UNREACHABLE,
} from "./api.js";

export type Tool = "paint" | "paste" | "sr" | "edit";

export type JobPhase = "idle" | "training" | "done" | "failed" | "unreachable";

export interface ToolGuard {
  enabled: boolean;
  /** readiness text shown as the disabled tooltip, or the badge when enabled */
  tooltip: string;
  defaultScale: number | null;
  scaleRange: [number, number] | null;
  recommended: [number, number] | null;
}

export interface HistorySummary {
  tool: Tool | "generate";
  kind: EditKind;
  seed: number;
  at_scale?: number;
  up_to_scale?: number;
  passes?: number;
  factor?: number;
}

export interface HistoryEntry {
  summary: HistorySummary;
  sha256: string;
  dims: [number, number];
  thumbnail_png_b64: string;
  cached: boolean;
  at: number;
}

export interface CanvasLayers {
  base: string | null;
  paint: string | null;
  paste: string | null;
  mask: string | null;
}

export interface EditOptions {
  atScale?: number;
  seed?: number;
  image?: string;
  mask?: string;
  passes?: number;
  factor?: number;
}

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export interface SessionOptions {
  api: ApiClient;
  storage?: StorageLike;
  storageKey?: string;
  now?: () => number;
}

/** Raised by client-side guards before any request is sent. */
export class GuardError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "GuardError";
  }
}

const STORAGE_KEY = "setgan-studio";
const PERSIST_VERSION = 1;

// ---------------------------------------------------------------------------
// Tool guards
// ---------------------------------------------------------------------------

const clamp = (x: number, lo: number, hi: number) => Math.min(hi, Math.max(lo, x));

/**
 * Availability and scale domain for a tool given the published prefix.
 * Mirrors the edge runtime's own rules: paint injects at a coarse scale
 * (1 is the default, 1..2 recommended), paste harmonizes near the top
 * (S-2 default with an S-3..S-1 range once everything is ready), edit is
 * confined to mid scales, and super-resolution just needs one model.
 */
export function toolGuard(tool: Tool, availableScales: number, scaleCount: number): ToolGuard {
  const ready = `${availableScales} of ${scaleCount} scales ready`;
  const top = availableScales - 1;
  switch (tool) {
    case "paint": {
      if (availableScales < 2) {
        return disabledGuard(`paint needs scale 1 published; ${ready}`);
      }
      return {
        enabled: true,
        tooltip: "paint injects at a coarse scale; 1-2 recommended",
        defaultScale: 1,
        scaleRange: [1, top],
        recommended: [1, 2],
      };
    }
    case "paste": {
      if (availableScales < 2) {
        return disabledGuard(`paste needs scale 1 published; ${ready}`);
      }
      const lo = Math.max(1, top - 2);
      const scaleRange: [number, number] = [lo, top];
      return {
        enabled: true,
        tooltip: "paste harmonizes near the top of the pyramid",
        defaultScale: clamp(scaleCount - 2, lo, top),
        scaleRange,
        recommended: scaleRange,
      };
    }
    case "sr": {
      if (availableScales < 1) {
        return disabledGuard(`super-resolution needs a published scale; ${ready}`);
      }
      return {
        enabled: true,
        tooltip: "refines an upsampled image at the finest ready scale",
        defaultScale: null,
        scaleRange: null,
        recommended: null,
      };
    }
    case "edit": {
      const hi = Math.min(4, top);
      if (availableScales < 2 || hi < 1) {
        return disabledGuard(`edit needs scale 1 published; ${ready}`);
      }
      return {
        enabled: true,
        tooltip: "re-renders a modified image from a mid scale; 2-3 recommended",
        defaultScale: clamp(2, 1, hi),
        scaleRange: [1, hi],
        recommended: [2, 3],
      };
    }
  }
}

function disabledGuard(tooltip: string): ToolGuard {
  return { enabled: false, tooltip, defaultScale: null, scaleRange: null, recommended: null };
}

const TOOL_KIND: Record<Tool, EditKind> = {
  paint: "paint",
  paste: "harmonize",
  sr: "super_resolution",
  edit: "edit",
};

/** Stable cache key: identical requests stringify identically. */
export function canonicalKey(request: EditRequest): string {
  const entries = Object.entries(request)
    .filter(([, v]) => v !== undefined)
    .sort(([a], [b]) => (a < b ? -1 : 1));
  return JSON.stringify(Object.fromEntries(entries));
}

export async function sha256OfBase64(b64: string): Promise<string> {
  const raw = atob(b64);
  const bytes = new Uint8Array(raw.length);
  for (let i = 0; i < raw.length; i++) bytes[i] = raw.charCodeAt(i);
  const digest = await crypto.subtle.digest("SHA-256", bytes);
  return Array.from(new Uint8Array(digest), (b) => b.toString(16).padStart(2, "0")).join("");
}

// ---------------------------------------------------------------------------
// Session
// ---------------------------------------------------------------------------

interface StagedUpload {
  image_png_b64: string;
  threshold: number;
  mode: DeliveryMode;
}

interface PersistedSession {
  version: number;
  job_id: string | null;
  token: string | null;
  mode: DeliveryMode;
  phase: JobPhase;
  scale_count: number;
  available_scales: number;
  best_scale: number | null;
  last_event_seq: number;
  retry_banner: boolean;
  failure: string | null;
  staged: StagedUpload | null;
  layers: CanvasLayers;
  history: HistoryEntry[];
  scale_states: ScaleTrainState[];
  profile: ProfileReport | null;
  cache: [string, EditResult][];
}

export class StudioSession {
  private readonly api: ApiClient;
  private readonly storage: StorageLike | null;
  private readonly storageKey: string;
  private readonly now: () => number;

  private jobIdValue: string | null = null;
  private token: string | null = null;
  private modeValue: DeliveryMode = "progressive";
  private phaseValue: JobPhase = "idle";
  private scaleCountValue = 0;
  private availableScalesValue = 0;
  private bestScaleValue: number | null = null;
  private lastEventSeqValue = 0;
  private retryBannerValue = false;
  private failureValue: string | null = null;
  private staged: StagedUpload | null = null;
  private layersValue: CanvasLayers = { base: null, paint: null, paste: null, mask: null };
  private historyValue: HistoryEntry[] = [];
  private scaleStatesValue: ScaleTrainState[] = [];
  private profileValue: ProfileReport | null = null;

  private readonly cache = new Map<string, EditResult>();
  private readonly listeners = new Set<() => void>();
  private editQueue: Promise<unknown> = Promise.resolve();

  /** Resolves when the current progress stream has been fully consumed. */
  progressDone: Promise<void> | null = null;

  constructor(options: SessionOptions) {
    this.api = options.api;
    this.storage = options.storage ?? defaultStorage();
    this.storageKey = options.storageKey ?? STORAGE_KEY;
    this.now = options.now ?? Date.now;
  }

  // -- read side -----------------------------------------------------------

  get jobId(): string | null {
    return this.jobIdValue;
  }
  get mode(): DeliveryMode {
    return this.modeValue;
  }
  get phase(): JobPhase {
    return this.phaseValue;
  }
  get scaleCount(): number {
    return this.scaleCountValue;
  }
  /** Published prefix length: scales 0..availableScales-1 are usable. */
  get availableScales(): number {
    return this.availableScalesValue;
  }
  get bestScale(): number | null {
    return this.bestScaleValue;
  }
  get lastEventSeq(): number {
    return this.lastEventSeqValue;
  }
  get retryBanner(): boolean {
    return this.retryBannerValue;
  }
  get failure(): string | null {
    return this.failureValue;
  }
  get history(): readonly HistoryEntry[] {
    return this.historyValue;
  }
  get layers(): Readonly<CanvasLayers> {
    return this.layersValue;
  }
  get scaleStates(): readonly ScaleTrainState[] {
    return this.scaleStatesValue;
  }
  get profile(): ProfileReport | null {
    return this.profileValue;
  }

  onChange(listener: () => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  guardFor(tool: Tool): ToolGuard {
    return toolGuard(tool, this.availableScalesValue, this.scaleCountValue);
  }

  // -- training ------------------------------------------------------------

  /**
   * Stage the upload locally, submit it, and start following progress
   * events. If the server is unreachable the staged upload is kept (and
   * persisted) so retry() can resubmit after the banner.
   */
  async uploadAndTrain(
    imagePngB64: string,
    threshold: number,
    mode: DeliveryMode = "progressive",
  ): Promise<void> {
    this.staged = { image_png_b64: imagePngB64, threshold, mode };
    this.modeValue = mode;
    this.persist();
    this.notify();
    await this.submitStaged();
  }

  /** Resubmit a staged upload, or reattach to a dropped event stream. */
  async retry(): Promise<void> {
    if (this.staged) {
      await this.submitStaged();
    } else if (this.jobIdValue && this.token) {
      this.retryBannerValue = false;
      this.phaseValue = "training";
      this.notify();
      this.startProgress();
      await this.progressDone;
    }
  }

  /** Reattach after restore(): sync status and resume the event stream. */
  async resume(): Promise<void> {
    if (!this.jobIdValue || !this.token) return;
    await this.refreshStatus();
    if (this.phaseValue === "training") {
      this.startProgress();
      await this.progressDone;
    }
  }

  private async submitStaged(): Promise<void> {
    const staged = this.staged;
    if (!staged) throw new GuardError("nothing staged to submit");
    try {
      const res = await this.api.submitTrain(staged.image_png_b64, staged.mode, {
        ssim_threshold: staged.threshold,
      });
      this.jobIdValue = res.job_id;
      this.token = res.token;
      this.scaleCountValue = res.scale_count;
      this.scaleStatesValue = new Array(res.scale_count).fill("pending");
      this.availableScalesValue = 0;
      this.lastEventSeqValue = 0;
      this.phaseValue = "training";
      this.retryBannerValue = false;
      this.layersValue.base = staged.image_png_b64;
      this.staged = null;
      this.persist();
      this.notify();
      this.startProgress();
    } catch (err) {
      if (err instanceof ApiError && err.code === UNREACHABLE) {
        // keep the staged upload: the session survives locally
        this.phaseValue = "unreachable";
        this.retryBannerValue = true;
        this.persist();
        this.notify();
        return;
      }
      throw err;
    }
  }

  private startProgress(): void {
    const jobId = this.jobIdValue;
    const token = this.token;
    if (!jobId || !token) return;
    this.progressDone = (async () => {
      try {
        await this.api.events(jobId, token, this.lastEventSeqValue, (e) => this.applyEvent(e));
        await this.refreshStatus();
      } catch (err) {
        if (err instanceof ApiError && err.code === UNREACHABLE) {
          this.phaseValue = "unreachable";
          this.retryBannerValue = true;
          this.persist();
          this.notify();
          return;
        }
        throw err;
      }
    })();
  }

  private applyEvent(event: ProgressEvent): void {
    if (event.seq <= this.lastEventSeqValue) return; // replayed duplicate
    this.lastEventSeqValue = event.seq;
    const data = event.data;
    switch (event.event) {
      case "scale_ready": {
        const scale = data.scale as number;
        this.availableScalesValue = Math.max(this.availableScalesValue, scale + 1);
        if (this.scaleStatesValue[scale] !== undefined) this.scaleStatesValue[scale] = "trained";
        break;
      }
      case "scale_cancelled":
        this.scaleStatesValue[data.scale as number] = "cancelled";
        break;
      case "scale_failed":
        this.scaleStatesValue[data.scale as number] = "failed";
        break;
      case "job_complete":
        this.phaseValue = "done";
        this.bestScaleValue = (data.best_scale as number | null) ?? null;
        break;
      case "job_failed":
        this.phaseValue = "failed";
        this.failureValue = (data.message as string) ?? "training failed";
        break;
      default:
        break;
    }
    this.persist();
    this.notify();
  }

  async refreshStatus(): Promise<void> {
    if (!this.jobIdValue || !this.token) return;
    const status = await this.api.getStatus(this.jobIdValue, this.token);
    this.scaleCountValue = status.scale_count;
    this.availableScalesValue = status.published_scales;
    this.bestScaleValue = status.best_scale;
    this.scaleStatesValue = status.scales.map((s) => s.state);
    if (status.state === "done") this.phaseValue = "done";
    else if (status.state === "failed") this.phaseValue = "failed";
    else this.phaseValue = "training";
    this.persist();
    this.notify();
  }

  // -- editing -------------------------------------------------------------

  setLayer(name: keyof CanvasLayers, pngB64: string | null): void {
    this.layersValue[name] = pngB64;
    this.persist();
    this.notify();
  }

  /**
   * Run a tool against the edge runtime and append the result to history.
   * Edits are serialized per session; an identical request is served from
   * the local cache without touching the network.
   */
  interactiveEdit(tool: Tool, options: EditOptions = {}): Promise<EditResult> {
    const run = this.editQueue.then(() => this.performEdit(tool, options));
    this.editQueue = run.catch(() => undefined); // guard failures do not jam the queue
    return run;
  }

  /** Plain generation preview for the scale chooser's what-if loop. */
  generatePreview(upToScale: number, seed = 0): Promise<EditResult> {
    const run = this.editQueue.then(() => this.performGenerate(upToScale, seed));
    this.editQueue = run.catch(() => undefined);
    return run;
  }

  private async performEdit(tool: Tool, options: EditOptions): Promise<EditResult> {
    this.requireJob();
    const guard = this.guardFor(tool);
    if (!guard.enabled) throw new GuardError(guard.tooltip);
    const request = this.buildRequest(tool, guard, options);
    return this.dispatch(tool, request);
  }

  private async performGenerate(upToScale: number, seed: number): Promise<EditResult> {
    this.requireJob();
    if (this.availableScalesValue < 1) {
      throw new GuardError(`no scales published yet (0 of ${this.scaleCountValue})`);
    }
    if (!Number.isInteger(upToScale) || upToScale < 0 || upToScale >= this.availableScalesValue) {
      throw new GuardError(
        `scale ${upToScale} not published yet; ` +
          `${this.availableScalesValue} of ${this.scaleCountValue} scales ready`,
      );
    }
    return this.dispatch("generate", { kind: "generate", seed, up_to_scale: upToScale });
  }

  private async dispatch(tool: Tool | "generate", request: EditRequest): Promise<EditResult> {
    const key = canonicalKey(request);
    const hit = this.cache.get(key);
    let result: EditResult;
    let cached: boolean;
    if (hit) {
      result = hit;
      cached = true;
    } else {
      result = await this.api.edgeEdit(this.jobIdValue!, this.token!, request);
      this.cache.set(key, result);
      cached = false;
    }
    this.historyValue.push({
      summary: summarize(tool, request),
      sha256: result.sha256,
      dims: result.dims,
      thumbnail_png_b64: result.result_png_b64,
      cached,
      at: this.now(),
    });
    this.persist();
    this.notify();
    return result;
  }

  private buildRequest(tool: Tool, guard: ToolGuard, options: EditOptions): EditRequest {
    const seed = options.seed ?? 0;
    const request: EditRequest = { kind: TOOL_KIND[tool], seed };

    if (guard.scaleRange) {
      const atScale = options.atScale ?? guard.defaultScale!;
      const [lo, hi] = guard.scaleRange;
      if (!Number.isInteger(atScale) || atScale < lo || atScale > hi) {
        throw new GuardError(`${tool} scale ${atScale} outside ${lo}..${hi}`);
      }
      request.at_scale = atScale;
    }

    switch (tool) {
      case "paint": {
        const image = options.image ?? this.layersValue.paint;
        if (!image) throw new GuardError("paint layer is empty");
        request.image_png_b64 = image;
        break;
      }
      case "paste": {
        const image = options.image ?? this.layersValue.paste;
        const mask = options.mask ?? this.layersValue.mask;
        if (!image) throw new GuardError("paste layer is empty");
        if (!mask) throw new GuardError("paste needs a mask layer");
        request.image_png_b64 = image;
        request.mask_png_b64 = mask;
        break;
      }
      case "edit": {
        const image = options.image ?? this.layersValue.base;
        const mask = options.mask ?? this.layersValue.mask;
        if (!image) throw new GuardError("edit needs a base image");
        if (!mask) throw new GuardError("edit needs a mask layer");
        request.image_png_b64 = image;
        request.mask_png_b64 = mask;
        break;
      }
      case "sr": {
        const image = options.image ?? this.layersValue.base;
        if (!image) throw new GuardError("super-resolution needs a base image");
        const passes = options.passes ?? 1;
        if (!Number.isInteger(passes) || passes < 1) {
          throw new GuardError(`super-resolution passes must be a positive integer, got ${passes}`);
        }
        request.image_png_b64 = image;
        request.passes = passes;
        if (options.factor !== undefined) request.factor = options.factor;
        break;
      }
    }
    return request;
  }

  private requireJob(): void {
    if (!this.jobIdValue || !this.token) throw new GuardError("no training job yet");
  }

  // -- profiling -----------------------------------------------------------

  async refreshProfile(): Promise<ProfileReport> {
    this.requireJob();
    if (this.availableScalesValue < 1) {
      throw new GuardError(`no scales published yet (0 of ${this.scaleCountValue})`);
    }
    const report = await this.api.edgeProfile(this.jobIdValue!, this.token!);
    this.profileValue = report;
    this.persist();
    this.notify();
    return report;
  }

  /** Rows for the scale chooser: one per published scale with its EDP. */
  scaleChooserRows(): { scale: number; modelTime: number; edp: number; normalizedEdp: number }[] {
    const report = this.profileValue;
    if (!report) return [];
    return report.entries.map((e, i) => ({
      scale: e.up_to_scale,
      modelTime: e.model_time,
      edp: e.edp,
      normalizedEdp: report.normalized_edp[i],
    }));
  }

  // -- integrity -----------------------------------------------------------

  /** Recompute every history thumbnail's hash and compare with the hash
   *  the server reported when the artifact was produced. */
  async verifyHistoryHashes(): Promise<boolean> {
    for (const entry of this.historyValue) {
      if ((await sha256OfBase64(entry.thumbnail_png_b64)) !== entry.sha256) return false;
    }
    return true;
  }

  // -- persistence ---------------------------------------------------------

  persist(): void {
    if (!this.storage) return;
    const payload: PersistedSession = {
      version: PERSIST_VERSION,
      job_id: this.jobIdValue,
      token: this.token,
      mode: this.modeValue,
      phase: this.phaseValue,
      scale_count: this.scaleCountValue,
      available_scales: this.availableScalesValue,
      best_scale: this.bestScaleValue,
      last_event_seq: this.lastEventSeqValue,
      retry_banner: this.retryBannerValue,
      failure: this.failureValue,
      staged: this.staged,
      layers: this.layersValue,
      history: this.historyValue,
      scale_states: [...this.scaleStatesValue],
      profile: this.profileValue,
      cache: [...this.cache.entries()],
    };
    this.storage.setItem(this.storageKey, JSON.stringify(payload));
  }

  clearPersisted(): void {
    this.storage?.removeItem(this.storageKey);
  }

  /** Rebuild a session from local persistence, or null if none exists. */
  static restore(options: SessionOptions): StudioSession | null {
    const storage = options.storage ?? defaultStorage();
    if (!storage) return null;
    const raw = storage.getItem(options.storageKey ?? STORAGE_KEY);
    if (!raw) return null;
    let payload: PersistedSession;
    try {
      payload = JSON.parse(raw) as PersistedSession;
    } catch {
      return null;
    }
    if (payload.version !== PERSIST_VERSION) return null;
    const session = new StudioSession(options);
    session.jobIdValue = payload.job_id;
    session.token = payload.token;
    session.modeValue = payload.mode;
    session.phaseValue = payload.phase;
    session.scaleCountValue = payload.scale_count;
    session.availableScalesValue = payload.available_scales;
    session.bestScaleValue = payload.best_scale;
    session.lastEventSeqValue = payload.last_event_seq;
    session.retryBannerValue = payload.retry_banner;
    session.failureValue = payload.failure;
    session.staged = payload.staged;
    session.layersValue = payload.layers;
    session.historyValue = payload.history;
    session.scaleStatesValue = payload.scale_states;
    session.profileValue = payload.profile;
    for (const [key, value] of payload.cache) session.cache.set(key, value);
    return session;
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }
}

function summarize(tool: Tool | "generate", request: EditRequest): HistorySummary {
  const summary: HistorySummary = { tool, kind: request.kind, seed: request.seed };
  if (request.at_scale !== undefined) summary.at_scale = request.at_scale;
  if (request.up_to_scale !== undefined) summary.up_to_scale = request.up_to_scale;
  if (request.passes !== undefined) summary.passes = request.passes;
  if (request.factor !== undefined) summary.factor = request.factor;
  return summary;
}

function defaultStorage(): StorageLike | null {
  try {
    return typeof localStorage === "undefined" ? null : localStorage;
  } catch {
    return null;
  }
}
