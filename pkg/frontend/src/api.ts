import type {
  ExportPayload,
  ModelInfo,
  MutateResponse,
  PinOp,
  PinPayload,
  SessionInfo,
  StatePayload,
} from "./types";

export type FetchLike = (
  input: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ ok: boolean; status: number; json(): Promise<unknown> }>;

export class ApiError extends Error {
  constructor(
    readonly code: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
  }
}

async function unwrap<T>(resp: Awaited<ReturnType<FetchLike>>): Promise<T> {
  const body = (await resp.json()) as T & { error?: { code: string; message: string } };
  if (!resp.ok) {
    const err = body?.error ?? { code: "Http" + resp.status, message: "request failed" };
    throw new ApiError(err.code, err.message, resp.status);
  }
  return body;
}

/** Thin typed client for the annotation service endpoints. */
export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch as unknown as FetchLike,
  ) {}

  private get(path: string) {
    return this.fetchImpl(`${this.baseUrl}${path}`);
  }

  private post(path: string, payload: unknown) {
    return this.fetchImpl(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  async health(): Promise<boolean> {
    try {
      const resp = await this.get("/health");
      return resp.ok;
    } catch {
      return false;
    }
  }

  async listModels(): Promise<Record<string, ModelInfo>> {
    const out = await unwrap<{ models: Record<string, ModelInfo> }>(await this.get("/models"));
    return out.models;
  }

  createSession(modelId: string, imageSize: [number, number]): Promise<SessionInfo> {
    return this.post("/sessions", { model_id: modelId, image_size: imageSize }).then((r) =>
      unwrap<SessionInfo>(r),
    );
  }

  mutatePins(
    sessionId: string,
    op: PinOp,
    pin: PinPayload,
    expectedRevision?: number,
  ): Promise<MutateResponse> {
    return this.post(`/sessions/${sessionId}/pins`, {
      op,
      pin,
      expected_revision: expectedRevision,
    }).then((r) => unwrap<MutateResponse>(r));
  }

  getState(sessionId: string, subset: string): Promise<StatePayload> {
    return this.get(`/sessions/${sessionId}/state?subset=${encodeURIComponent(subset)}`).then(
      (r) => unwrap<StatePayload>(r),
    );
  }

  exportAnnotation(sessionId: string): Promise<ExportPayload> {
    return this.get(`/sessions/${sessionId}/export`).then((r) => unwrap<ExportPayload>(r));
  }
}
