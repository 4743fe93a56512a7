// Typed client for the bundle server HTTP surface.
//
// Training and delivery go through /jobs; edits and profiling go through
// the edge runtime endpoints under /edge. The transport is injectable so
// tests can script responses; the browser default is plain fetch.

export type DeliveryMode = "baseline_serial" | "parallel_oneshot" | "progressive";

/** Training knobs accepted by the server. Unknown fields are rejected
 *  server-side, so this type deliberately has no index signature. */
export interface TrainConfig {
  iterations_per_scale?: number;
  g_steps?: number;
  d_steps?: number;
  learning_rate?: number;
  lr_decay_factor?: number;
  lr_decay_after?: number;
  adam_beta1?: number;
  adam_beta2?: number;
  alpha_rec?: number;
  gp_weight?: number;
  ssim_threshold?: number;
  worker_count?: number;
  seed?: number;
  max_dim?: number;
  min_dim?: number;
  r_target?: number;
}

export interface SubmitResponse {
  job_id: string;
  token: string;
  scale_count: number;
  content_job_id: string;
}

export type ScaleTrainState = "pending" | "running" | "trained" | "cancelled" | "failed";

export interface ScaleStatus {
  index: number;
  state: ScaleTrainState;
  published: boolean;
  ssim: number | null;
}

export interface JobStatus {
  job_id: string;
  state: "running" | "done" | "failed";
  mode: DeliveryMode;
  best_scale: number | null;
  scale_count: number;
  published_scales: number;
  scales: ScaleStatus[];
}

export type EditKind = "generate" | "paint" | "harmonize" | "edit" | "super_resolution";

export interface EditRequest {
  kind: EditKind;
  seed: number;
  image_png_b64?: string;
  mask_png_b64?: string;
  at_scale?: number;
  up_to_scale?: number;
  passes?: number;
  factor?: number;
}

export interface EditResult {
  result_png_b64: string;
  sha256: string;
  dims: [number, number];
  available_scales: number;
}

export interface ProfileEntry {
  up_to_scale: number;
  wall_time: number;
  model_time: number;
  avg_power: number;
  edp: number;
}

export interface ProfileReport {
  source: string;
  entries: ProfileEntry[];
  normalized_edp: number[];
}

export interface ProgressEvent {
  seq: number;
  event: string;
  data: Record<string, unknown>;
}

/** Error code used when the server cannot be reached at all (as opposed
 *  to reaching it and getting an error body back). */
export const UNREACHABLE = "unreachable";

export class ApiError extends Error {
  constructor(
    readonly code: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

// ---------------------------------------------------------------------------
// SSE parsing
// ---------------------------------------------------------------------------

/**
 * Incremental parser for the server's text/event-stream framing:
 *
 *   id: 3\nevent: scale_ready\ndata: {...}\n\n
 *
 * feed() accepts arbitrary chunk boundaries and returns the events that
 * became complete. Comment lines and unknown fields are ignored.
 */
export class SseParser {
  private buffer = "";

  feed(chunk: string): ProgressEvent[] {
    this.buffer += chunk;
    const out: ProgressEvent[] = [];
    for (;;) {
      const cut = this.buffer.indexOf("\n\n");
      if (cut < 0) break;
      const block = this.buffer.slice(0, cut);
      this.buffer = this.buffer.slice(cut + 2);
      const parsed = parseBlock(block);
      if (parsed) out.push(parsed);
    }
    return out;
  }

  /** Drain a trailing unterminated block, if any. */
  flush(): ProgressEvent[] {
    return this.feed("\n\n");
  }
}

function parseBlock(block: string): ProgressEvent | null {
  let id: number | null = null;
  let event = "message";
  const dataLines: string[] = [];
  for (const line of block.split("\n")) {
    if (line.startsWith(":")) continue;
    if (line.startsWith("id:")) id = Number(line.slice(3).trim());
    else if (line.startsWith("event:")) event = line.slice(6).trim();
    else if (line.startsWith("data:")) dataLines.push(line.slice(5).replace(/^ /, ""));
  }
  if (id === null || !Number.isFinite(id) || dataLines.length === 0) return null;
  return { seq: id, event, data: JSON.parse(dataLines.join("\n")) };
}

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly fetchFn: FetchLike;

  constructor(
    readonly baseUrl: string,
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
  }

  async submitTrain(
    imagePngB64: string,
    mode: DeliveryMode,
    config?: TrainConfig,
  ): Promise<SubmitResponse> {
    const body: Record<string, unknown> = { image_png_b64: imagePngB64, mode };
    if (config !== undefined) body.config = config;
    const res = await this.send("POST", "/jobs", null, body);
    if (res.status !== 201) throw await errorFrom(res);
    return (await res.json()) as SubmitResponse;
  }

  async getStatus(jobId: string, token: string): Promise<JobStatus> {
    const res = await this.send("GET", `/jobs/${jobId}/status`, token);
    if (res.status !== 200) throw await errorFrom(res);
    return (await res.json()) as JobStatus;
  }

  async edgeEdit(jobId: string, token: string, request: EditRequest): Promise<EditResult> {
    const res = await this.send("POST", `/edge/jobs/${jobId}/edits`, token, request);
    if (res.status !== 200) throw await errorFrom(res);
    return (await res.json()) as EditResult;
  }

  async edgeProfile(jobId: string, token: string): Promise<ProfileReport> {
    const res = await this.send("GET", `/edge/jobs/${jobId}/profile`, token);
    if (res.status !== 200) throw await errorFrom(res);
    return (await res.json()) as ProfileReport;
  }

  /**
   * Consume the job's event stream, invoking onEvent per event in order.
   * Resolves when the server closes the stream (it does so once the job
   * is terminal and fully replayed). Pass lastEventId to resume after a
   * reconnect without re-seeing old events.
   */
  async events(
    jobId: string,
    token: string,
    lastEventId: number,
    onEvent: (event: ProgressEvent) => void,
  ): Promise<void> {
    const query = lastEventId > 0 ? `?last_event_id=${lastEventId}` : "";
    const res = await this.send("GET", `/jobs/${jobId}/events${query}`, token);
    if (res.status !== 200) throw await errorFrom(res);
    const parser = new SseParser();
    const body = res.body;
    try {
      if (body) {
        const reader = body.getReader();
        const decoder = new TextDecoder();
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          for (const event of parser.feed(decoder.decode(value, { stream: true }))) {
            onEvent(event);
          }
        }
      } else {
        // transports without streaming bodies deliver the whole thing at once
        for (const event of parser.feed(await res.text())) onEvent(event);
      }
    } catch (err) {
      if (err instanceof ApiError) throw err;
      throw new ApiError(UNREACHABLE, `event stream dropped: ${err}`, 0);
    }
    for (const event of parser.flush()) onEvent(event);
  }

  private async send(
    method: string,
    path: string,
    token: string | null,
    body?: unknown,
  ): Promise<Response> {
    const headers: Record<string, string> = {};
    if (token) headers["Authorization"] = `Bearer ${token}`;
    const init: RequestInit = { method, headers };
    if (body !== undefined) {
      headers["Content-Type"] = "application/json";
      init.body = JSON.stringify(body);
    }
    try {
      return await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(UNREACHABLE, `server unreachable: ${err}`, 0);
    }
  }
}

async function errorFrom(res: Response): Promise<ApiError> {
  let code = "protocol_error";
  let message = `http ${res.status}`;
  try {
    const body = (await res.json()) as { error?: string; message?: string };
    if (body.error) code = body.error;
    if (body.message) message = body.message;
  } catch {
    // non-JSON error body; keep the generic message
  }
  return new ApiError(code, message, res.status);
}
