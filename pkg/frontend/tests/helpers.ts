import { readFileSync, readdirSync } from "node:fs";
import path from "node:path";
import { fileURLToPath } from "node:url";

import type { FetchLike } from "../src/api.js";
import type {
  ApiErrorBody,
  AssessmentDetail,
  EvidenceRecord,
  RefinementResponse,
  SectionPayload,
} from "../src/types.js";

const FIXTURES = path.join(path.dirname(fileURLToPath(import.meta.url)), "fixtures");

export const ASSESSMENT_ID = "tsa-ui-tp53";
export const BASE = "http://svc.test";

export function fixture<T>(name: string): T {
  return JSON.parse(readFileSync(path.join(FIXTURES, name), "utf-8")) as T;
}

export function fixtureText(name: string): string {
  return readFileSync(path.join(FIXTURES, name), "utf-8");
}

function json(payload: unknown, status = 200): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

/** Replays the recorded service responses. State flips (busy, post-reinvoke)
 * swap in other recorded files, the same way the live server's answers
 * change; nothing here invents a payload. */
export class FixtureServer {
  assessment: AssessmentDetail = fixture("assessment.json");
  sections: Record<string, SectionPayload> = {};
  evidence: Record<number, EvidenceRecord> = {};
  notFound: ApiErrorBody = fixture("evidence_404.json");
  busy = false;
  calls: { method: string; url: string }[] = [];

  editResponse: { status: number; body: unknown } | null = null;
  appendResponse: { status: number; body: unknown } | null = null;
  eventsText: string = fixtureText("events.sse");

  constructor() {
    for (const file of readdirSync(path.join(FIXTURES, "sections"))) {
      const payload = fixture<SectionPayload>(path.join("sections", file));
      this.sections[payload.section.section_id.domain] = payload;
    }
    for (const file of readdirSync(path.join(FIXTURES, "evidence"))) {
      const record = fixture<EvidenceRecord>(path.join("evidence", file));
      this.evidence[record.id] = record;
    }
    const invalidated = fixture<EvidenceRecord>("evidence_invalidated.json");
    this.evidence[invalidated.id] = invalidated;
  }

  makeBusy(): void {
    this.busy = true;
    this.assessment = fixture("assessment_running.json");
  }

  makeIdle(): void {
    this.busy = false;
    this.assessment = fixture("assessment.json");
  }

  private applyReinvoke(): RefinementResponse {
    const response = fixture<RefinementResponse>("reinvoke_genetic.json");
    this.assessment = fixture("assessment_refined.json");
    this.sections["genetic"] = fixture("sections_refined/genetic.json");
    this.eventsText = fixtureText("events_refined.sse");
    return response;
  }

  fetch: FetchLike = async (url, init) => {
    const method = (init?.method ?? "GET").toUpperCase();
    this.calls.push({ method, url });
    const route = url.replace(BASE, "").split("?")[0] ?? "";
    const parts = route.split("/").filter(Boolean);
    // parts: ["assessments", id, ...rest]
    if (parts[0] !== "assessments" || parts[1] !== ASSESSMENT_ID) {
      return json({ code: "not-found", message: `no assessment ${parts[1]}` }, 404);
    }
    const rest = parts.slice(2);

    if (rest.length === 0 && method === "GET") return json(this.assessment);

    if (rest[0] === "sections" && rest.length === 2 && method === "GET") {
      const payload = this.sections[rest[1]!];
      return payload
        ? json(payload)
        : json({ code: "not-found", message: `unknown section ${rest[1]}` }, 404);
    }

    if (rest[0] === "sections" && rest[2] === "reinvoke" && method === "POST") {
      if (this.busy) return json(fixture("busy_409.json"), 409);
      return json(this.applyReinvoke());
    }

    if (rest[0] === "sections" && rest.length === 2 && method === "PATCH") {
      if (!this.editResponse) throw new Error("no edit response staged");
      return json(this.editResponse.body, this.editResponse.status);
    }

    if (rest[0] === "sections" && rest[2] === "append" && method === "POST") {
      if (!this.appendResponse) throw new Error("no append response staged");
      return json(this.appendResponse.body, this.appendResponse.status);
    }

    if (rest[0] === "evidence" && method === "GET") {
      const record = this.evidence[Number(rest[1])];
      return record ? json(record) : json(this.notFound, 404);
    }

    if (rest[0] === "events" && method === "GET") {
      return new Response(this.eventsText, {
        status: 200,
        headers: { "Content-Type": "text/event-stream" },
      });
    }

    throw new Error(`unrouted request: ${method} ${url}`);
  };
}
