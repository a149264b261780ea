// Wire types for the assessment service. These mirror the server JSON
// exactly; the UI never derives or recomputes any of these fields.

export type Target = {
  identifier: string;
  identifier_kind: string;
  therapeutic_area: string | null;
  modality: string | null;
  species_context: string[];
  free_text_context: string | null;
};

export type SectionRow = {
  domain: string;
  status: string;
  revision: number;
  stale: boolean;
};

export type AssessmentDetail = {
  assessment_id: string;
  status: string;
  target: Target;
  completed: string[];
  current: string | null;
  failure: Record<string, unknown> | null;
  sections: SectionRow[];
  created_at: string;
  updated_at: string;
};

export type Claim = {
  text: string;
  citation_ids: number[];
  span: [number, number];
};

export type SectionDraft = {
  section_id: { domain: string; kind: string };
  body: string;
  claims: Claim[];
  status: string;
  revision: number;
  produced_by: string;
};

export type Verdict = {
  category: string;
  rationale: string;
  judge: string;
};

export type VerifiedClaim = Claim & { verdict: Verdict };

export type Verification = {
  counts: Record<string, number>;
  claims: VerifiedClaim[];
};

export type SectionMeta = {
  revision: number;
  status: string;
  wall_seconds: number;
  upstream_revisions: Record<string, number>;
};

export type SectionPayload = {
  section: SectionDraft;
  verification: Verification;
  stale: boolean;
  meta: SectionMeta;
};

export type Provenance = {
  invoking_agent: string;
  tool_name: string;
  query: unknown;
  pipeline_stage: string;
  source_database: string;
  retrieved_at: string;
};

export type EvidenceRecord = {
  id: number;
  global_id: string;
  provenance: Provenance;
  payload: Record<string, unknown>;
  content_hash: string;
  created_at: string;
  invalidated: boolean;
  invalidated_reason: string | null;
  revision: number;
  prior_hashes: [number, string][];
};

export type RefinementResponse = {
  section: SectionDraft | null;
  verification: Verification | null;
  stale: Record<string, boolean>;
  evidence_ids?: number[];
};

export type ApiErrorBody = {
  code: string;
  message: string;
  cause_code?: string;
  details?: Record<string, unknown>;
};

// Journal events as streamed over SSE; kinds include section_started,
// section_completed, hook_verdict, refinement_applied, pipeline_completed,
// pipeline_interrupted.
export type ProgressEvent = {
  seq: number;
  ts: string;
  kind: string;
  assessment_id: string;
  section?: string;
  hook?: string;
  outcome?: { verdict: string; violations: { code: string; message: string }[] };
  [key: string]: unknown;
};
