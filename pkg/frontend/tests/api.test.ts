import { describe, expect, it } from "vitest";

import {
  ApiClient,
  ApiError,
  ProgressEvent,
  SseParser,
  UNREACHABLE,
} from "../src/api.js";

const STREAM =
  'id: 1\nevent: scale_ready\ndata: {"scale": 0, "size": 9, "sha256": "aa"}\n\n' +
  'id: 2\nevent: scale_ready\ndata: {"scale": 1, "size": 9, "sha256": "bb"}\n\n' +
  'id: 3\nevent: job_complete\ndata: {"best_scale": 1}\n\n';

describe("SseParser", () => {
  it("parses id/event/data framing", () => {
    const events = new SseParser().feed(STREAM);
    expect(events.map((e) => e.seq)).toEqual([1, 2, 3]);
    expect(events[0].event).toBe("scale_ready");
    expect(events[0].data).toEqual({ scale: 0, size: 9, sha256: "aa" });
    expect(events[2].event).toBe("job_complete");
    expect(events[2].data.best_scale).toBe(1);
  });

  it("is insensitive to chunk boundaries", () => {
    const parser = new SseParser();
    const events: ProgressEvent[] = [];
    for (const ch of STREAM) events.push(...parser.feed(ch));
    expect(events.map((e) => e.seq)).toEqual([1, 2, 3]);
    expect(events[1].data.scale).toBe(1);
  });

  it("ignores comments and unknown fields, joins multi-line data", () => {
    const block =
      ": keepalive\nid: 7\nretry: 100\nevent: message\ndata: [1,\ndata: 2]\n\n";
    const events = new SseParser().feed(block);
    expect(events).toHaveLength(1);
    expect(events[0].seq).toBe(7);
    expect(events[0].data).toEqual([1, 2]);
  });

  it("flush drains an unterminated trailing block", () => {
    const parser = new SseParser();
    expect(parser.feed('id: 1\nevent: e\ndata: {"a": 1}')).toEqual([]);
    const rest = parser.flush();
    expect(rest).toHaveLength(1);
    expect(rest[0].data).toEqual({ a: 1 });
  });
});

describe("ApiClient", () => {
  it("shapes the training submission", async () => {
    let seenUrl = "";
    let seenInit: RequestInit | undefined;
    const client = new ApiClient("http://b.test", async (url, init) => {
      seenUrl = url;
      seenInit = init;
      return new Response(
        JSON.stringify({ job_id: "j1", token: "t1", scale_count: 9, content_job_id: "c" }),
        { status: 201 },
      );
    });
    const res = await client.submitTrain("aW1n", "progressive", { ssim_threshold: 0.9 });
    expect(res.job_id).toBe("j1");
    expect(seenUrl).toBe("http://b.test/jobs");
    expect(seenInit?.method).toBe("POST");
    expect((seenInit?.headers as Record<string, string>)["Content-Type"]).toBe("application/json");
    expect(JSON.parse(seenInit?.body as string)).toEqual({
      image_png_b64: "aW1n",
      mode: "progressive",
      config: { ssim_threshold: 0.9 },
    });
  });

  it("maps error bodies onto ApiError", async () => {
    const client = new ApiClient("http://b.test", async () =>
      new Response(JSON.stringify({ error: "bad_config", message: "iterations must be positive" }), {
        status: 400,
      }),
    );
    const err = await client.submitTrain("aW1n", "progressive").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.code).toBe("bad_config");
    expect(err.status).toBe(400);
    expect(err.message).toContain("positive");
  });

  it("maps transport failures onto the unreachable code", async () => {
    const client = new ApiClient("http://b.test", async () => {
      throw new TypeError("fetch failed");
    });
    const err = await client.getStatus("j1", "t1").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.code).toBe(UNREACHABLE);
    expect(err.status).toBe(0);
  });

  it("sends the bearer token and resume offset on the event stream", async () => {
    let seenUrl = "";
    let auth: string | undefined;
    const client = new ApiClient("http://b.test", async (url, init) => {
      seenUrl = url;
      auth = (init?.headers as Record<string, string>)["Authorization"];
      return new Response(STREAM, { status: 200 });
    });
    const seqs: number[] = [];
    await client.events("j1", "tok", 5, (e) => seqs.push(e.seq));
    expect(seenUrl).toBe("http://b.test/jobs/j1/events?last_event_id=5");
    expect(auth).toBe("Bearer tok");
    expect(seqs).toEqual([1, 2, 3]);
  });

  it("omits the resume parameter from a fresh subscription", async () => {
    let seenUrl = "";
    const client = new ApiClient("http://b.test", async (url) => {
      seenUrl = url;
      return new Response("", { status: 200 });
    });
    await client.events("j1", "tok", 0, () => undefined);
    expect(seenUrl).toBe("http://b.test/jobs/j1/events");
  });

  it("surfaces edge conflicts with their protocol code", async () => {
    const client = new ApiClient("http://b.test", async () =>
      new Response(JSON.stringify({ error: "not_ready", message: "no scales published yet" }), {
        status: 409,
      }),
    );
    const err = await client
      .edgeEdit("j1", "t1", { kind: "generate", seed: 0, up_to_scale: 0 })
      .catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.code).toBe("not_ready");
    expect(err.status).toBe(409);
  });
});
