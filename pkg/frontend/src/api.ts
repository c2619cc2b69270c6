// Typed client for the annotation service HTTP contract.

export interface SampleDescriptor {
  sample_id: string;
  has_image: boolean;
  coords: [number, number];
  label: string | null;
}

export interface QueryPayload {
  session_id: string;
  state: string;
  round: number;
  remaining: number;
  query: SampleDescriptor[];
}

export interface CreatePayload extends QueryPayload {
  budget: number;
  rounds: number;
  id_class_names: string[];
  pool_scatter: [number, number][];
}

export interface RoundRecord {
  round: number;
  query_ids: string[];
  id_hits: number;
  ood_hits: number;
  qp: number;
  aqr: number | null;
  macc: number | null;
  loss_trace: number[];
}

export interface MetricsPayload {
  session_id: string;
  state: string;
  rounds: RoundRecord[];
}

export interface DonePayload {
  session_id: string;
  state: "done";
  report: RoundRecord[];
}

export type AdvancePayload = QueryPayload | DonePayload;

export interface CreateSessionOptions {
  config?: string;
  data?: string;
  oracle?: boolean;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let detail = response.statusText;
  try {
    const body = (await response.json()) as { detail?: unknown };
    if (typeof body.detail === "string") detail = body.detail;
    else if (body.detail !== undefined) detail = JSON.stringify(body.detail);
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, detail);
}

export class Client {
  constructor(private readonly base: string = "") {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.url(path), init);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  createSession(options: CreateSessionOptions = {}): Promise<CreatePayload> {
    return this.request("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(options),
    });
  }

  getQuery(sessionId: string): Promise<QueryPayload> {
    return this.request(`/sessions/${sessionId}/query`);
  }

  postLabel(sessionId: string, sampleId: string, value: string): Promise<{ remaining: number }> {
    return this.request(`/sessions/${sessionId}/labels`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ [sampleId]: value }),
    });
  }

  advance(sessionId: string): Promise<AdvancePayload> {
    return this.request(`/sessions/${sessionId}/advance`, { method: "POST" });
  }

  getMetrics(sessionId: string): Promise<MetricsPayload> {
    return this.request(`/sessions/${sessionId}/metrics`);
  }

  imageUrl(sessionId: string, sampleId: string): string {
    return this.url(`/sessions/${sessionId}/samples/${sampleId}/image`);
  }
}
