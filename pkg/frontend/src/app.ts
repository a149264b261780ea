import { ApiClient, ApiError } from "./api.js";
import { EventLog, parseStream } from "./events.js";
import { renderEvidencePanel, renderUnresolvable } from "./panel.js";
import { SectionCard } from "./sections.js";
import type {
  AssessmentDetail,
  ProgressEvent,
  RefinementResponse,
  SectionPayload,
} from "./types.js";

export type EditOutcome = "saved" | "noop-client" | "noop-server";

// Single-page review client. One instance per open assessment; all mutation
// results come from server responses (no optimistic updates), and all
// verdicts, staleness flags, and revisions are rendered verbatim.
export class ReviewApp {
  readonly client: ApiClient;
  readonly assessmentId: string;
  readonly log = new EventLog();
  readonly cards = new Map<string, SectionCard>();

  private header: HTMLElement;
  private banner: HTMLElement;
  private sectionsEl: HTMLElement;
  private panel: HTMLElement;
  private timeline: HTMLElement;
  private toasts: HTMLElement;

  constructor(root: HTMLElement, client: ApiClient, assessmentId: string) {
    this.client = client;
    this.assessmentId = assessmentId;

    root.textContent = "";
    this.header = document.createElement("header");
    this.header.id = "app-header";
    this.banner = document.createElement("div");
    this.banner.id = "banner";
    this.banner.hidden = true;
    this.sectionsEl = document.createElement("main");
    this.sectionsEl.id = "sections";
    this.panel = document.createElement("aside");
    this.panel.id = "evidence-panel";
    this.panel.hidden = true;
    const progress = document.createElement("aside");
    progress.id = "progress";
    const progressTitle = document.createElement("h3");
    progressTitle.textContent = "Progress";
    this.timeline = document.createElement("ol");
    this.timeline.id = "timeline";
    progress.append(progressTitle, this.timeline);
    this.toasts = document.createElement("div");
    this.toasts.id = "toasts";
    root.append(this.header, this.banner, this.sectionsEl, this.panel, progress, this.toasts);
  }

  static async boot(
    root: HTMLElement,
    client: ApiClient,
    assessmentId: string,
  ): Promise<ReviewApp> {
    const app = new ReviewApp(root, client, assessmentId);
    const listing = await client.getAssessment(assessmentId);
    app.renderHeader(listing);
    for (const row of listing.sections) {
      const card = new SectionCard(row.domain, (id) => void app.openEvidence(id));
      app.cards.set(row.domain, card);
      app.sectionsEl.appendChild(card.element);
      const payload = await client.getSection(assessmentId, row.domain);
      card.update(payload);
      card.setHistory([{ revision: payload.meta.revision, label: payload.meta.status }]);
    }
    return app;
  }

  private renderHeader(listing: AssessmentDetail): void {
    this.header.textContent = "";
    const title = document.createElement("h1");
    title.textContent = `${listing.target.identifier} safety assessment`;
    const status = document.createElement("span");
    status.className = "badge badge-pipeline";
    status.dataset.status = listing.status;
    status.textContent = listing.status;
    this.header.append(title, status);
    if (listing.failure) {
      const failure = document.createElement("span");
      failure.className = "badge badge-failure";
      failure.textContent = JSON.stringify(listing.failure);
      this.header.appendChild(failure);
    }
  }

  // -- evidence panel --------------------------------------------------------

  async openEvidence(evidenceId: number): Promise<void> {
    this.panel.hidden = false;
    try {
      const record = await this.client.getEvidence(this.assessmentId, evidenceId);
      renderEvidencePanel(this.panel, record);
    } catch (error) {
      if (error instanceof ApiError && error.status === 404) {
        renderUnresolvable(this.panel, evidenceId);
        return;
      }
      throw error;
    }
  }

  // -- refinement ------------------------------------------------------------

  async saveEdit(domain: string, newBody: string): Promise<EditOutcome> {
    const card = this.mustCard(domain);
    if (newBody === card.body) {
      this.toast("no-op", `${domain}: no changes to save`);
      return "noop-client";
    }
    const response = await this.client.editSection(this.assessmentId, domain, newBody);
    if (response.section && response.section.revision === card.revision) {
      this.toast("no-op", `${domain}: server confirmed no changes`);
      return "noop-server";
    }
    this.applyRefinement(domain, response);
    return "saved";
  }

  async append(domain: string, text: string): Promise<void> {
    const response = await this.client.appendSection(this.assessmentId, domain, text);
    this.applyRefinement(domain, response);
  }

  async reinvoke(domain: string, instruction: string): Promise<boolean> {
    this.clearBanner();
    const card = this.mustCard(domain);
    const before = card.body;
    let response: RefinementResponse;
    try {
      response = await this.client.reinvokeSection(
        this.assessmentId,
        domain,
        instruction,
      );
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        await this.showBusy(error);
        return false;
      }
      throw error;
    }
    this.applyRefinement(domain, response);
    if (response.section) card.showDiff(before, response.section.body);
    await this.refreshListing();
    return true;
  }

  async upload(filename: string, content: string, section?: string): Promise<number[]> {
    const response = await this.client.uploadDocument(
      this.assessmentId,
      filename,
      content,
      section,
    );
    this.toast(
      "upload",
      `${filename}: ${response.evidence_ids?.length ?? 0} evidence records`,
    );
    return response.evidence_ids ?? [];
  }

  private applyRefinement(domain: string, response: RefinementResponse): void {
    const card = this.mustCard(domain);
    if (response.section) card.applyDraft(response.section, response.verification);
    for (const [other, stale] of Object.entries(response.stale)) {
      this.cards.get(other)?.setStale(stale);
    }
  }

  async refreshListing(): Promise<void> {
    const listing = await this.client.getAssessment(this.assessmentId);
    this.renderHeader(listing);
    for (const row of listing.sections) {
      this.cards.get(row.domain)?.setListingRow(row.status, row.revision, row.stale);
    }
  }

  // -- live progress ---------------------------------------------------------

  /** Feed a raw SSE body (or partial body) through the log; duplicate seqs
   * from overlapping replays never reach the timeline. */
  ingestStream(text: string): ProgressEvent[] {
    const accepted = this.log.applyAll(parseStream(text));
    for (const event of accepted) this.renderEvent(event);
    return accepted;
  }

  handleEvent(event: ProgressEvent): void {
    this.renderEvent(event);
  }

  private renderEvent(event: ProgressEvent): void {
    const item = document.createElement("li");
    item.dataset.seq = String(event.seq);
    item.dataset.kind = event.kind;
    const where = event.section ? ` ${event.section}` : "";
    item.textContent = `#${event.seq} ${event.kind}${where}`;
    this.timeline.appendChild(item);

    if (event.kind === "hook_verdict" && event.outcome?.verdict !== "pass") {
      for (const violation of event.outcome?.violations ?? []) {
        this.toast(violation.code, violation.message);
      }
    }
    if (event.kind === "refinement_applied" && event.section) {
      const card = this.cards.get(event.section);
      card?.setHistory(this.historyFor(event.section));
    }
  }

  historyFor(domain: string): { revision: number; label: string }[] {
    const entries: { revision: number; label: string }[] = [];
    for (const event of this.log.events) {
      if (event.section !== domain) continue;
      if (event.kind === "section_completed") {
        entries.push({ revision: 0, label: "generated" });
      }
      if (event.kind === "refinement_applied") {
        entries.push({
          revision: Number(event.revision ?? 0),
          label: `${String(event.action)} by ${String(event.actor)}`,
        });
      }
    }
    return entries;
  }

  // -- banners and toasts ------------------------------------------------------

  /** 409 from a mutation: name the section the pipeline is working on. */
  private async showBusy(error: ApiError): Promise<void> {
    let active = "";
    try {
      const listing = await this.client.getAssessment(this.assessmentId);
      if (listing.current) active = `: ${listing.current} is running`;
    } catch {
      // listing is best-effort; the banner still reports the busy state
    }
    this.showBanner(`Pipeline busy${active} (${error.message})`);
  }

  showBanner(text: string): void {
    this.banner.hidden = false;
    this.banner.textContent = text;
  }

  clearBanner(): void {
    this.banner.hidden = true;
    this.banner.textContent = "";
  }

  toast(code: string, message: string): void {
    const note = document.createElement("div");
    note.className = "toast";
    note.dataset.code = code;
    note.textContent = `${code}: ${message}`;
    this.toasts.appendChild(note);
  }

  private mustCard(domain: string): SectionCard {
    const card = this.cards.get(domain);
    if (!card) throw new Error(`no section ${domain} on this page`);
    return card;
  }
}
