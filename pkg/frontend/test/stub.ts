// In-memory stand-in for the study service, mirroring its validation and
// supersession semantics. Model names exist only here (server side), so
// DOM tests can assert they never leak into anything the UI renders.

import type { FetchLike } from "../src/api.js";
import type { Card, NextSlot, StudyItem } from "../src/schema.js";

export const MODEL_NAMES = ["model-alpha", "model-beta", "model-gamma"];
const ANON_KEYS = ["k1", "k2", "k3"];

interface PostedRecord {
  path: string;
  body: Record<string, unknown>;
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export class StubService {
  readonly posted: PostedRecord[] = [];
  readonly responses = new Map<string, Record<string, unknown>>();
  readonly annotations: Record<string, unknown>[] = [];
  failuresRemaining = 0; // simulate the network dropping the next N posts
  rejectAll: string | null = null; // 400 every post with this detail

  readonly items: StudyItem[] = [
    { item_index: 0, video_id: "va", action: "whisking eggs", frame_uris: ["/media/va0.jpg", "/media/va1.jpg"] },
    { item_index: 1, video_id: "vb", action: "whisking eggs", frame_uris: ["/media/vb0.jpg", "/media/vb1.jpg"] },
  ];

  private cardsFor(itemIndex: number, frameIndex: number): Card[] {
    return ANON_KEYS.map((key, i) => ({
      key,
      text: `style ${i} caption for item ${itemIndex} frame ${frameIndex}`,
    }));
  }

  private nextSlot(participant: string): NextSlot {
    const total = this.items.reduce((n, item) => n + item.frame_uris.length, 0);
    let completed = 0;
    for (const item of this.items) {
      for (let f = 0; f < item.frame_uris.length; f++) {
        const key = `${participant}:${item.item_index}:${f}`;
        if (this.responses.has(key)) {
          completed += 1;
          continue;
        }
        return {
          done: false,
          item_index: item.item_index,
          frame_index: f,
          video_id: item.video_id,
          action: item.action,
          image_uri: item.frame_uris[f],
          sequence_uris: item.frame_uris,
          cards: this.cardsFor(item.item_index, f),
          progress: { completed, total },
        };
      }
    }
    return { done: true, progress: { completed, total } };
  }

  private handleResponse(body: Record<string, unknown>): Response {
    const best = body.best as string;
    const second = body.second as string | null;
    if (best !== "none" && !ANON_KEYS.includes(best)) {
      return jsonResponse(400, { detail: `unknown card key '${best}'` });
    }
    if (second !== null && second !== undefined) {
      if (best === "none") return jsonResponse(400, { detail: '"none" excludes a second pick' });
      if (second === best) return jsonResponse(400, { detail: "best and second must differ" });
      if (!ANON_KEYS.includes(second)) {
        return jsonResponse(400, { detail: `unknown card key '${second}'` });
      }
    }
    const key = `${body.participant}:${body.item_index}:${body.frame_index}`;
    this.responses.set(key, body); // later submission supersedes
    return jsonResponse(200, { status: "ok" });
  }

  private handleAnnotation(body: Record<string, unknown>): Response {
    if (body.label !== "progression" && body.label !== "no_progression") {
      return jsonResponse(400, { detail: `bad label ${String(body.label)}` });
    }
    this.annotations.push(body);
    return jsonResponse(200, { status: "ok" });
  }

  fetch: FetchLike = async (url, init) => {
    const method = init?.method ?? "GET";
    if (method === "POST") {
      if (this.failuresRemaining > 0) {
        this.failuresRemaining -= 1;
        throw new TypeError("network down");
      }
      const body = JSON.parse(String(init?.body)) as Record<string, unknown>;
      this.posted.push({ path: url, body });
      if (this.rejectAll !== null) return jsonResponse(400, { detail: this.rejectAll });
      if (url.endsWith("/responses")) return this.handleResponse(body);
      if (url.endsWith("/annotations")) return this.handleAnnotation(body);
      return jsonResponse(404, { detail: `no such endpoint ${url}` });
    }
    const next = url.match(/\/studies\/([^/]+)\/next\?participant=(.+)$/);
    if (next) return jsonResponse(200, this.nextSlot(decodeURIComponent(next[2] as string)));
    if (/\/studies\/[^/]+\/items$/.test(url)) return jsonResponse(200, { items: this.items });
    return jsonResponse(404, { detail: `no such endpoint ${url}` });
  };
}
