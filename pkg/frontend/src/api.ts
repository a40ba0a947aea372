import type {
  AttributionRecord,
  AttributionTask,
  Choice,
  NextResponse,
  SubmitAck,
} from "./types.js";

export class ApiError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
  }
}

type FetchLike = typeof fetch;

/** Thin client for the annotation service HTTP API. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ApiError(`network failure: ${String(err)}`);
    }
    if (!response.ok) {
      const detail = await response.text().catch(() => "");
      throw new ApiError(`request failed (${response.status}): ${detail}`, response.status);
    }
    return (await response.json()) as T;
  }

  nextPair(experimentId: string, annotatorId: string): Promise<NextResponse> {
    const annotator = encodeURIComponent(annotatorId);
    return this.request(`/experiments/${experimentId}/next?annotator=${annotator}`);
  }

  submitPreference(
    experimentId: string,
    pairId: string,
    annotatorId: string,
    choice: Choice,
  ): Promise<SubmitAck> {
    return this.request(`/experiments/${experimentId}/pairs/${pairId}/preference`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ annotator_id: annotatorId, choice }),
    });
  }

  attributionTask(dialogueId: string): Promise<AttributionTask> {
    return this.request(`/attribution/${dialogueId}`);
  }

  attributionRecords(dialogueId: string, annotatorId: string): Promise<AttributionRecord[]> {
    const annotator = encodeURIComponent(annotatorId);
    return this.request<{ records: AttributionRecord[] }>(
      `/attribution/${dialogueId}/records?annotator=${annotator}`,
    ).then((body) => body.records);
  }

  submitAttribution(
    dialogueId: string,
    sentenceIndex: number,
    turnIndices: number[],
    annotatorId: string,
  ): Promise<{ record_id: string }> {
    return this.request(`/attribution/${dialogueId}/sentences/${sentenceIndex}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ annotator_id: annotatorId, turn_indices: turnIndices }),
    });
  }

  coverage(dialogueId: string): Promise<{ coverage: number }> {
    return this.request(`/attribution/${dialogueId}/coverage`);
  }
}
