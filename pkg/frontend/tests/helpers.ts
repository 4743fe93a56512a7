// Shared test doubles: a scripted bundle server behind a FetchLike, plus
// a Map-backed localStorage stand-in.

import { createHash } from "node:crypto";

import { ApiClient, DeliveryMode, EditRequest, FetchLike } from "../src/api.js";
import { canonicalKey, StorageLike } from "../src/session.js";

export const sleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export function b64OfUtf8(text: string): string {
  return Buffer.from(text, "utf-8").toString("base64");
}

export function sha256OfB64(b64: string): string {
  return createHash("sha256").update(Buffer.from(b64, "base64")).digest("hex");
}

// tiny placeholder payloads; the mock never decodes them
export const IMAGE_B64 = b64OfUtf8("source-image-bytes");
export const CLIP_B64 = b64OfUtf8("painted-clipart-bytes");
export const PASTE_B64 = b64OfUtf8("pasted-object-bytes");
export const MASK_B64 = b64OfUtf8("mask-bytes");

export class FakeStorage implements StorageLike {
  private readonly map = new Map<string, string>();
  getItem(key: string): string | null {
    return this.map.has(key) ? this.map.get(key)! : null;
  }
  setItem(key: string, value: string): void {
    this.map.set(key, value);
  }
  removeItem(key: string): void {
    this.map.delete(key);
  }
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

interface EventRecord {
  seq: number;
  event: string;
  data: Record<string, unknown>;
}

function sseBlock(record: EventRecord): string {
  return `id: ${record.seq}\nevent: ${record.event}\ndata: ${JSON.stringify(record.data)}\n\n`;
}

/**
 * Simulates the protocol surface the studio talks to: POST /jobs, the
 * status and event endpoints, and the edge edit/profile endpoints. Edit
 * results are derived deterministically from the canonical request, with
 * a real sha256, so determinism and hash-integrity checks behave exactly
 * like the real server's.
 */
export class MockBundleServer {
  scaleCount = 3;
  jobId = "job4f2a9c01";
  token = "tok-secret-1";
  mode: DeliveryMode = "progressive";

  state: "running" | "done" | "failed" = "running";
  published = 0;
  bestScale: number | null = null;

  unreachable = false;
  editCalls = 0;
  editDelayMs = 0;
  violations = 0; // concurrent edit requests observed
  log: string[] = [];
  editLog: EditRequest[] = [];

  private events: EventRecord[] = [];
  private nextSeq = 1;
  private liveBody: ReadableStream<Uint8Array> | null = null;
  private liveController: ReadableStreamDefaultController<Uint8Array> | null = null;
  private editInFlight = false;

  client(): ApiClient {
    return new ApiClient("http://bundle.test", this.fetch);
  }

  // -- scripting -----------------------------------------------------------

  /** Next /events request gets a held-open stream fed by pushScaleReady(). */
  startLive(): void {
    this.liveBody = new ReadableStream<Uint8Array>({
      start: (controller) => {
        this.liveController = controller;
      },
    });
  }

  pushScaleReady(scale: number): void {
    this.published = Math.max(this.published, scale + 1);
    this.append("scale_ready", { scale, size: 1000, sha256: "ab".repeat(32) });
  }

  pushJobComplete(bestScale: number): void {
    this.state = "done";
    this.bestScale = bestScale;
    this.append("job_complete", { best_scale: bestScale });
  }

  endStream(): void {
    this.liveController?.close();
    this.liveController = null;
  }

  dropStream(): void {
    this.liveController?.error(new Error("connection reset"));
    this.liveController = null;
  }

  /** Preload a completed run: all scales ready, then job_complete. */
  scriptFullRun(bestScale = this.scaleCount - 1): void {
    for (let i = 0; i < this.scaleCount; i++) this.pushScaleReady(i);
    this.pushJobComplete(bestScale);
  }

  private append(event: string, data: Record<string, unknown>): void {
    const record = { seq: this.nextSeq++, event, data };
    this.events.push(record);
    if (this.liveController) {
      this.liveController.enqueue(new TextEncoder().encode(sseBlock(record)));
    }
  }

  // -- transport -----------------------------------------------------------

  fetch: FetchLike = async (url, init) => {
    if (this.unreachable) throw new TypeError("fetch failed");
    const u = new URL(url);
    const method = (init?.method ?? "GET").toUpperCase();
    this.log.push(`${method} ${u.pathname}${u.search}`);

    if (method === "POST" && u.pathname === "/jobs") {
      const body = JSON.parse(init!.body as string) as Record<string, unknown>;
      if (typeof body.image_png_b64 !== "string" || typeof body.mode !== "string") {
        return json(400, { error: "bad_request", message: "missing fields" });
      }
      return json(201, {
        job_id: this.jobId,
        token: this.token,
        scale_count: this.scaleCount,
        content_job_id: "abcdef0123456789",
      });
    }
    if (u.pathname === `/jobs/${this.jobId}/status`) {
      return json(200, this.status());
    }
    if (u.pathname === `/jobs/${this.jobId}/events`) {
      if (this.liveBody) {
        const body = this.liveBody;
        this.liveBody = null;
        return new Response(body, { status: 200, headers: { "Content-Type": "text/event-stream" } });
      }
      const after = Number(u.searchParams.get("last_event_id") ?? "0");
      const text = this.events.filter((e) => e.seq > after).map(sseBlock).join("");
      return new Response(text, { status: 200, headers: { "Content-Type": "text/event-stream" } });
    }
    if (method === "POST" && u.pathname === `/edge/jobs/${this.jobId}/edits`) {
      return this.handleEdit(JSON.parse(init!.body as string) as EditRequest);
    }
    if (u.pathname === `/edge/jobs/${this.jobId}/profile`) {
      return json(200, this.profile());
    }
    return json(404, { error: "unknown_job", message: `no route ${method} ${u.pathname}` });
  };

  private async handleEdit(request: EditRequest): Promise<Response> {
    this.editCalls += 1;
    this.editLog.push(request);
    if (this.editInFlight) this.violations += 1;
    this.editInFlight = true;
    if (this.editDelayMs > 0) await sleep(this.editDelayMs);
    this.editInFlight = false;
    if (this.published === 0) {
      return json(409, { error: "not_ready", message: "no scales published yet" });
    }
    // deterministic artifact per distinct request, like the real edge
    const png = b64OfUtf8(`png:${canonicalKey(request)}`);
    return json(200, {
      result_png_b64: png,
      sha256: sha256OfB64(png),
      dims: [48, 48],
      available_scales: this.published,
    });
  }

  private status() {
    return {
      job_id: this.jobId,
      state: this.state,
      mode: this.mode,
      best_scale: this.bestScale,
      scale_count: this.scaleCount,
      published_scales: this.published,
      scales: Array.from({ length: this.scaleCount }, (_, i) => ({
        index: i,
        state: i < this.published ? "trained" : "pending",
        published: i < this.published,
        ssim: i < this.published ? 0.9 : null,
      })),
    };
  }

  private profile() {
    const entries = Array.from({ length: this.published }, (_, i) => {
      const modelTime = 0.4 * (i + 1);
      return {
        up_to_scale: i,
        wall_time: modelTime,
        model_time: modelTime,
        avg_power: 3.25,
        edp: 3.25 * modelTime * modelTime,
      };
    });
    const last = entries.length > 0 ? entries[entries.length - 1].edp : 1;
    return {
      source: "synthetic_model",
      entries,
      normalized_edp: entries.map((e) => e.edp / last),
    };
  }
}
