// Thin typed client over the study service HTTP API. fetch is injectable
// so tests run against an in-memory stub.

import {
  AnnotationBody,
  AnnotationBodySchema,
  NextSlot,
  ResponseBody,
  ResponseBodySchema,
  StudyItem,
} from "./schema.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Service said no (HTTP 4xx): permanent, surfaces inline, never retried. */
export class ServiceRejection extends Error {
  constructor(public readonly detail: string, public readonly status: number) {
    super(detail);
    this.name = "ServiceRejection";
  }
}

/** Network trouble or 5xx: worth queueing and retrying. */
export class TransportError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "TransportError";
  }
}

async function rejectionDetail(res: Response): Promise<string> {
  try {
    const body = (await res.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
    return JSON.stringify(body.detail ?? body);
  } catch {
    return `HTTP ${res.status}`;
  }
}

export class StudyClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    let res: Response;
    try {
      res = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new TransportError(String(err));
    }
    if (res.status >= 500) throw new TransportError(`HTTP ${res.status}`);
    if (res.status >= 400) throw new ServiceRejection(await rejectionDetail(res), res.status);
    return res.json();
  }

  async nextSlot(studyId: string, participant: string): Promise<NextSlot> {
    const q = encodeURIComponent(participant);
    return (await this.request(`/studies/${studyId}/next?participant=${q}`)) as NextSlot;
  }

  async items(studyId: string): Promise<StudyItem[]> {
    const data = (await this.request(`/studies/${studyId}/items`)) as { items: StudyItem[] };
    return data.items;
  }

  async submitResponse(body: ResponseBody): Promise<void> {
    const parsed = ResponseBodySchema.parse(body); // never sends an invalid payload
    await this.request("/responses", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(parsed),
    });
  }

  async submitAnnotation(body: AnnotationBody): Promise<void> {
    const parsed = AnnotationBodySchema.parse(body);
    await this.request("/annotations", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(parsed),
    });
  }
}
