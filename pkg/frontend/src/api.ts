import type {
  ApiErrorBody,
  AssessmentDetail,
  EvidenceRecord,
  RefinementResponse,
  SectionPayload,
} from "./types.js";

export class ApiError extends Error {
  status: number;
  code: string;
  causeCode?: string;

  constructor(status: number, body: ApiErrorBody) {
    super(body.message);
    this.status = status;
    this.code = body.code;
    this.causeCode = body.cause_code;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private base: string;
  private fetchImpl: FetchLike;

  constructor(base: string, fetchImpl?: FetchLike) {
    this.base = base.replace(/\/$/, "");
    // bind so a bare window.fetch keeps its receiver
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: {} };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(this.base + path, init);
    if (!response.ok) {
      let parsed: ApiErrorBody;
      try {
        parsed = (await response.json()) as ApiErrorBody;
      } catch {
        parsed = { code: "http-error", message: response.statusText };
      }
      throw new ApiError(response.status, parsed);
    }
    return (await response.json()) as T;
  }

  createAssessment(target: string, config?: Record<string, unknown>) {
    return this.request<{ assessment_id: string }>("POST", "/assessments", {
      target,
      config,
    });
  }

  getAssessment(id: string) {
    return this.request<AssessmentDetail>("GET", `/assessments/${id}`);
  }

  getSection(id: string, domain: string) {
    return this.request<SectionPayload>("GET", `/assessments/${id}/sections/${domain}`);
  }

  getEvidence(id: string, evidenceId: number) {
    return this.request<EvidenceRecord>(
      "GET",
      `/assessments/${id}/evidence/${evidenceId}`,
    );
  }

  editSection(id: string, domain: string, body: string) {
    return this.request<RefinementResponse>(
      "PATCH",
      `/assessments/${id}/sections/${domain}`,
      { body },
    );
  }

  appendSection(id: string, domain: string, text: string) {
    return this.request<RefinementResponse>(
      "POST",
      `/assessments/${id}/sections/${domain}/append`,
      { text },
    );
  }

  reinvokeSection(id: string, domain: string, instruction: string) {
    return this.request<RefinementResponse>(
      "POST",
      `/assessments/${id}/sections/${domain}/reinvoke`,
      { instruction },
    );
  }

  uploadDocument(id: string, filename: string, content: string, section?: string) {
    return this.request<RefinementResponse>("POST", `/assessments/${id}/uploads`, {
      filename,
      content,
      section,
    });
  }

  resume(id: string) {
    return this.request<{ assessment_id: string; status: string }>(
      "POST",
      `/assessments/${id}/resume`,
    );
  }

  getEvaluation(id: string) {
    return this.request<Record<string, unknown>>("GET", `/assessments/${id}/evaluation`);
  }

  eventsUrl(id: string, after = 0): string {
    const suffix = after > 0 ? `?after=${after}` : "";
    return `${this.base}/assessments/${id}/events${suffix}`;
  }
}
