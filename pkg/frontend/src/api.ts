/** Typed client for the edit-service HTTP API. */

export interface Cloud {
  points: number[][];
  labels: number[];
}

export interface EncodeResponse {
  model_id: string;
  part_presence: boolean[];
  k: number;
  l: number;
  seed: number;
  checkpoint: string;
}

export interface EditResponse {
  model_id: string;
  cloud: Cloud;
  part_presence?: boolean[];
}

export interface HealthResponse {
  status: string;
  k: number;
  l: number;
  n: number;
  heads: string[];
}

export type EditOp = {
  kind:
    | "exchange"
    | "interpolate-part"
    | "interpolate-global"
    | "compose"
    | "remove"
    | "regenerate-part";
  part_id?: number;
  t?: number;
  sources?: unknown[];
  head?: string;
};

export class ServiceError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, body?: unknown): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      method: body === undefined ? "GET" : "POST",
      headers: { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      const message =
        typeof payload?.error === "string"
          ? payload.error
          : `request failed with status ${resp.status}`;
      throw new ServiceError(resp.status, message);
    }
    return payload as T;
  }

  health(): Promise<HealthResponse> {
    return this.request<HealthResponse>("/health");
  }

  encode(points: number[][], labels?: number[]): Promise<EncodeResponse> {
    return this.request<EncodeResponse>(
      "/encode",
      labels === undefined ? { points } : { points, labels },
    );
  }

  decode(modelId: string): Promise<Cloud> {
    return this.request<Cloud>("/decode", { model_id: modelId });
  }

  edit(op: EditOp): Promise<EditResponse> {
    return this.request<EditResponse>("/edit", { op });
  }

  exchange(targetId: string, donorId: string, partId: number): Promise<EditResponse> {
    return this.edit({ kind: "exchange", part_id: partId, sources: [targetId, donorId] });
  }

  interpolate(
    aId: string,
    bId: string,
    t: number,
    partId: number | null,
  ): Promise<EditResponse> {
    if (partId === null) {
      return this.edit({ kind: "interpolate-global", t, sources: [aId, bId] });
    }
    return this.edit({ kind: "interpolate-part", part_id: partId, t, sources: [aId, bId] });
  }

  compose(slots: Array<[string, number]>): Promise<EditResponse> {
    return this.edit({ kind: "compose", sources: slots });
  }

  regenerate(sourceId: string, partId: number, head: string): Promise<EditResponse> {
    return this.edit({
      kind: "regenerate-part",
      part_id: partId,
      head,
      sources: [sourceId],
    });
  }
}
