// Client-side CSV ingestion. Must accept exactly the corpus the service
// accepts (shared golden vectors in ../tests/golden/csv_vectors.json):
// a header of lead names, one numeric sample per row per column.

export const LEAD_NAMES = [
  "I", "II", "III", "aVR", "aVL", "aVF",
  "V1", "V2", "V3", "V4", "V5", "V6",
] as const;

export type LeadName = (typeof LEAD_NAMES)[number];

export type CsvErrorKind =
  | "empty"
  | "unknown_lead"
  | "duplicate_lead"
  | "ragged_row"
  | "non_numeric";

export class CsvError extends Error {
  constructor(
    public readonly kind: CsvErrorKind,
    message: string,
    public readonly row?: number,
    public readonly column?: number,
  ) {
    super(message);
    this.name = "CsvError";
  }
}

// Plain decimal grammar with optional exponent; mirrors what the service
// accepts once its finiteness check is applied (no inf/nan/hex).
const NUMERIC = /^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$/;

function parseCell(cell: string, row: number, column: number): number {
  if (!NUMERIC.test(cell)) {
    throw new CsvError(
      "non_numeric",
      `non-numeric cell ${JSON.stringify(cell)} at row ${row}, column ${column}`,
      row,
      column,
    );
  }
  return Number(cell);
}

export function parseCsv(text: string): Map<LeadName, number[]> {
  const rows = text.split("\n").map((line) => line.replace(/\r$/, ""));
  while (rows.length > 0 && rows[rows.length - 1] === "") {
    rows.pop();
  }
  if (rows.length === 0) {
    throw new CsvError("empty", "empty CSV input");
  }

  const header = rows[0].split(",").map((cell) => cell.trim());
  const leads: LeadName[] = [];
  header.forEach((name, index) => {
    const column = index + 1;
    if (!(LEAD_NAMES as readonly string[]).includes(name)) {
      throw new CsvError(
        "unknown_lead",
        `unknown lead name ${JSON.stringify(name)} in header column ${column}`,
        1,
        column,
      );
    }
    if (leads.includes(name as LeadName)) {
      throw new CsvError(
        "duplicate_lead",
        `duplicate lead ${JSON.stringify(name)} in header column ${column}`,
        1,
        column,
      );
    }
    leads.push(name as LeadName);
  });

  const columns: number[][] = leads.map(() => []);
  for (let i = 1; i < rows.length; i++) {
    const rowNumber = i + 1;
    const cells = rows[i].split(",").map((cell) => cell.trim());
    if (cells.length !== leads.length) {
      throw new CsvError(
        "ragged_row",
        `row ${rowNumber} has ${cells.length} cells, expected ${leads.length}`,
        rowNumber,
      );
    }
    cells.forEach((cell, index) => {
      columns[index].push(parseCell(cell, rowNumber, index + 1));
    });
  }

  const result = new Map<LeadName, number[]>();
  leads.forEach((lead, index) => result.set(lead, columns[index]));
  return result;
}
