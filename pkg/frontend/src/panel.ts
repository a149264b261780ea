import type { EvidenceRecord } from "./types.js";

// The panel shows exactly what the store returned: the provenance quadruple
// (source database, tool, query, retrieved-at) and the payload fields.

function field(label: string, value: string): HTMLElement {
  const row = document.createElement("div");
  row.className = "panel-field";
  const name = document.createElement("span");
  name.className = "panel-label";
  name.textContent = label;
  const content = document.createElement("span");
  content.className = "panel-value";
  content.textContent = value;
  row.append(name, content);
  return row;
}

export function renderEvidencePanel(
  container: HTMLElement,
  record: EvidenceRecord,
): void {
  container.textContent = "";
  container.classList.remove("panel-error");
  container.classList.toggle("panel-invalidated", record.invalidated);

  const heading = document.createElement("h3");
  heading.textContent = `Evidence ${record.id}`;
  container.appendChild(heading);

  if (record.invalidated) {
    const flag = document.createElement("div");
    flag.className = "invalidated-flag";
    flag.textContent = `Invalidated: ${record.invalidated_reason ?? "no reason recorded"}`;
    container.appendChild(flag);
  }

  container.appendChild(field("Source database", record.provenance.source_database));
  container.appendChild(field("Tool", record.provenance.tool_name));
  container.appendChild(field("Query", JSON.stringify(record.provenance.query)));
  container.appendChild(field("Retrieved at", record.provenance.retrieved_at));

  const payload = document.createElement("pre");
  payload.className = "panel-payload";
  payload.textContent = JSON.stringify(record.payload, null, 2);
  container.appendChild(payload);
}

/** Citation that 404s server-side: the same failure the hallucinated
 * verdict names, so the banner uses that wording. */
export function renderUnresolvable(container: HTMLElement, evidenceId: number): void {
  container.textContent = "";
  container.classList.add("panel-error");
  const banner = document.createElement("div");
  banner.className = "unresolvable-banner";
  banner.textContent = `Unresolvable citation: evidence ${evidenceId} does not exist`;
  container.appendChild(banner);
}
