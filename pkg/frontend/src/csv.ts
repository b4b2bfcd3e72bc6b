/** Minimal strict CSV reading for the sweep report schemas. */

export interface Table {
  columns: string[];
  rows: Record<string, string>[];
}

export class CsvError extends Error {}

/** Parse CSV text with a header row. Values are kept as raw strings. */
export function parseCsv(text: string): Table {
  const lines = text
    .split(/\r?\n/)
    .filter((line) => line.trim().length > 0);
  if (lines.length === 0) {
    throw new CsvError("CSV is empty");
  }
  const columns = splitLine(lines[0]);
  const rows: Record<string, string>[] = [];
  for (let i = 1; i < lines.length; i++) {
    const fields = splitLine(lines[i]);
    if (fields.length !== columns.length) {
      throw new CsvError(
        `row ${i + 1} has ${fields.length} fields, expected ${columns.length}`,
      );
    }
    const row: Record<string, string> = {};
    columns.forEach((name, j) => (row[name] = fields[j]));
    rows.push(row);
  }
  if (rows.length === 0) {
    throw new CsvError("CSV has a header but no data rows");
  }
  return { columns, rows };
}

function splitLine(line: string): string[] {
  // The report CSVs never quote fields; reject quoting rather than
  // mis-parse it silently.
  if (line.includes('"')) {
    throw new CsvError("quoted CSV fields are not supported");
  }
  return line.split(",").map((f) => f.trim());
}

/** Ensure every required column exists, naming the first missing one. */
export function requireColumns(table: Table, required: string[]): void {
  for (const name of required) {
    if (!table.columns.includes(name)) {
      throw new CsvError(`missing required column '${name}'`);
    }
  }
}

export function toNumber(value: string, column: string, rowIndex: number): number {
  const n = Number(value);
  if (value.trim() === "" || Number.isNaN(n)) {
    throw new CsvError(`row ${rowIndex + 2}: column '${column}' is not numeric (${value})`);
  }
  return n;
}
