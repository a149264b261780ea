// Citation markers stay "[ev:N]" in stored bodies; rendering swaps them for
// superscript chips and never rewrites the text itself.

const MARKER_RE = /\[ev:(\d+)\]/g;

export type BodyToken =
  | { kind: "text"; text: string }
  | { kind: "marker"; text: string; evidenceId: number };

export function tokenize(body: string): BodyToken[] {
  const tokens: BodyToken[] = [];
  let cursor = 0;
  for (const match of body.matchAll(MARKER_RE)) {
    const at = match.index ?? 0;
    if (at > cursor) tokens.push({ kind: "text", text: body.slice(cursor, at) });
    tokens.push({
      kind: "marker",
      text: match[0],
      evidenceId: Number(match[1]),
    });
    cursor = at + match[0].length;
  }
  if (cursor < body.length) tokens.push({ kind: "text", text: body.slice(cursor) });
  return tokens;
}

export function citedIds(body: string): number[] {
  const ids = new Set<number>();
  for (const token of tokenize(body)) {
    if (token.kind === "marker") ids.add(token.evidenceId);
  }
  return [...ids].sort((a, b) => a - b);
}

/** Render a section body into a container: plain text nodes plus one
 * clickable chip per well-formed marker. Malformed markers (e.g. "[ev:]")
 * never tokenize, so they render as inert text with no anchor. */
export function renderBody(
  container: HTMLElement,
  body: string,
  onMarkerClick: (evidenceId: number) => void,
): void {
  container.textContent = "";
  for (const token of tokenize(body)) {
    if (token.kind === "text") {
      container.appendChild(document.createTextNode(token.text));
      continue;
    }
    const chip = document.createElement("sup");
    chip.className = "ev-chip";
    chip.dataset.ev = String(token.evidenceId);
    chip.textContent = String(token.evidenceId);
    chip.setAttribute("role", "button");
    chip.title = token.text;
    chip.addEventListener("click", () => onMarkerClick(token.evidenceId));
    container.appendChild(chip);
  }
}
