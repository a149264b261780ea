// Line diff over server-provided revisions. The server never diffs; this is
// presentation only.

export type DiffOp = { kind: "same" | "add" | "del"; line: string };

export function lineDiff(oldText: string, newText: string): DiffOp[] {
  const a = oldText.split("\n");
  const b = newText.split("\n");
  // LCS table; bodies are a few hundred lines at most
  const table: number[][] = Array.from({ length: a.length + 1 }, () =>
    new Array<number>(b.length + 1).fill(0),
  );
  for (let i = a.length - 1; i >= 0; i--) {
    for (let j = b.length - 1; j >= 0; j--) {
      table[i]![j] =
        a[i] === b[j]
          ? table[i + 1]![j + 1]! + 1
          : Math.max(table[i + 1]![j]!, table[i]![j + 1]!);
    }
  }
  const ops: DiffOp[] = [];
  let i = 0;
  let j = 0;
  while (i < a.length && j < b.length) {
    if (a[i] === b[j]) {
      ops.push({ kind: "same", line: a[i]! });
      i++;
      j++;
    } else if (table[i + 1]![j]! >= table[i]![j + 1]!) {
      ops.push({ kind: "del", line: a[i]! });
      i++;
    } else {
      ops.push({ kind: "add", line: b[j]! });
      j++;
    }
  }
  while (i < a.length) ops.push({ kind: "del", line: a[i++]! });
  while (j < b.length) ops.push({ kind: "add", line: b[j++]! });
  return ops;
}

export function renderDiff(container: HTMLElement, ops: DiffOp[]): void {
  container.textContent = "";
  for (const op of ops) {
    const row = document.createElement("div");
    row.className = `diff-${op.kind}`;
    const sigil = op.kind === "add" ? "+" : op.kind === "del" ? "-" : " ";
    row.textContent = `${sigil} ${op.line}`;
    container.appendChild(row);
  }
}
