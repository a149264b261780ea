import { renderBody } from "./markers.js";
import { lineDiff, renderDiff } from "./diff.js";
import type { SectionDraft, SectionPayload, Verification } from "./types.js";

export type HistoryEntry = { revision: number; label: string };

// One card per section. Everything shown here is server state: the verdict
// chips come from the verification payload, the staleness badge from the
// listing, and the revision number from section meta. Nothing is recomputed
// client-side.
export class SectionCard {
  readonly domain: string;
  readonly element: HTMLElement;
  body = "";
  revision = 0;

  private statusBadge: HTMLElement;
  private revisionBadge: HTMLElement;
  private staleBadge: HTMLElement | null = null;
  private badges: HTMLElement;
  private verdictStrip: HTMLElement;
  private bodyContainer: HTMLElement;
  private historyList: HTMLElement;
  private diffContainer: HTMLElement;
  private onMarkerClick: (evidenceId: number) => void;

  constructor(domain: string, onMarkerClick: (evidenceId: number) => void) {
    this.domain = domain;
    this.onMarkerClick = onMarkerClick;

    this.element = document.createElement("article");
    this.element.className = "section-card";
    this.element.dataset.domain = domain;

    const header = document.createElement("header");
    const title = document.createElement("h2");
    title.textContent = domain.replace(/_/g, " ");
    this.badges = document.createElement("span");
    this.badges.className = "badges";
    this.statusBadge = document.createElement("span");
    this.statusBadge.className = "badge badge-status";
    this.revisionBadge = document.createElement("span");
    this.revisionBadge.className = "badge badge-rev";
    this.badges.append(this.statusBadge, this.revisionBadge);
    header.append(title, this.badges);

    this.verdictStrip = document.createElement("div");
    this.verdictStrip.className = "verdict-strip";
    this.bodyContainer = document.createElement("div");
    this.bodyContainer.className = "section-body";
    this.diffContainer = document.createElement("div");
    this.diffContainer.className = "diff-view";
    this.diffContainer.hidden = true;
    this.historyList = document.createElement("ul");
    this.historyList.className = "revision-history";

    this.element.append(
      header,
      this.verdictStrip,
      this.bodyContainer,
      this.diffContainer,
      this.historyList,
    );
  }

  update(payload: SectionPayload): void {
    this.applyDraft(payload.section, payload.verification);
    this.setStale(payload.stale);
  }

  applyDraft(section: SectionDraft, verification: Verification | null): void {
    const previous = this.body;
    this.body = section.body;
    this.revision = section.revision;
    this.statusBadge.textContent = section.status;
    this.statusBadge.dataset.status = section.status;
    this.revisionBadge.textContent = `r${section.revision}`;
    renderBody(this.bodyContainer, section.body, this.onMarkerClick);
    if (verification) this.renderVerdicts(verification);
    if (previous && previous !== section.body) this.showDiff(previous, section.body);
  }

  setStale(stale: boolean): void {
    if (stale && !this.staleBadge) {
      this.staleBadge = document.createElement("span");
      this.staleBadge.className = "badge badge-stale";
      this.staleBadge.textContent = "stale";
      this.staleBadge.title =
        "an upstream section was revised after this one was generated";
      this.badges.appendChild(this.staleBadge);
    } else if (!stale && this.staleBadge) {
      this.staleBadge.remove();
      this.staleBadge = null;
    }
  }

  setListingRow(status: string, revision: number, stale: boolean): void {
    this.statusBadge.textContent = status;
    this.statusBadge.dataset.status = status;
    this.revision = revision;
    this.revisionBadge.textContent = `r${revision}`;
    this.setStale(stale);
  }

  setHistory(entries: HistoryEntry[]): void {
    this.historyList.textContent = "";
    for (const entry of entries) {
      const item = document.createElement("li");
      item.textContent = `r${entry.revision}: ${entry.label}`;
      this.historyList.appendChild(item);
    }
  }

  showDiff(oldBody: string, newBody: string): void {
    this.diffContainer.hidden = false;
    renderDiff(this.diffContainer, lineDiff(oldBody, newBody));
  }

  private renderVerdicts(verification: Verification): void {
    this.verdictStrip.textContent = "";
    for (const claim of verification.claims) {
      const chip = document.createElement("span");
      chip.className = `verdict-chip verdict-${claim.verdict.category}`;
      chip.textContent = claim.verdict.category;
      chip.title = `${claim.text}\n${claim.verdict.rationale}`;
      this.verdictStrip.appendChild(chip);
    }
    const summary = document.createElement("span");
    summary.className = "verdict-counts";
    summary.textContent = Object.entries(verification.counts)
      .filter(([, n]) => n > 0)
      .map(([category, n]) => `${category} ${n}`)
      .join(" / ");
    this.verdictStrip.appendChild(summary);
  }
}
