#!/usr/bin/env node
/** plot --kind <k> --in <csv> --out <svg> [--title t] [--xlabel x] [--ylabel y] */

import { readFileSync, writeFileSync } from "fs";
import { CsvError, parseCsv } from "./csv.js";
import { FIGURES, FigureOptions, renderFigure } from "./figures.js";

interface Args {
  kind: string;
  input: string;
  output: string;
  options: FigureOptions;
}

export function parseArgs(argv: string[]): Args {
  const args: Partial<Args> = { options: {} };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const value = argv[i + 1];
    switch (flag) {
      case "--kind":
        args.kind = value;
        i++;
        break;
      case "--in":
        args.input = value;
        i++;
        break;
      case "--out":
        args.output = value;
        i++;
        break;
      case "--title":
        args.options!.title = value;
        i++;
        break;
      case "--xlabel":
        args.options!.xlabel = value;
        i++;
        break;
      case "--ylabel":
        args.options!.ylabel = value;
        i++;
        break;
      default:
        throw new CsvError(`unknown argument '${flag}'`);
    }
  }
  if (!args.kind || !args.input || !args.output) {
    const kinds = Object.keys(FIGURES).sort().join("|");
    throw new CsvError(
      `usage: plot --kind <${kinds}> --in <csv> --out <svg> ` +
        `[--title t] [--xlabel x] [--ylabel y]`,
    );
  }
  return args as Args;
}

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
    const table = parseCsv(readFileSync(args.input, "utf8"));
    const svg = renderFigure(args.kind, table, args.options);
    writeFileSync(args.output, svg);
  } catch (err) {
    process.stderr.write(`error: ${(err as Error).message}\n`);
    return 1;
  }
  process.stdout.write(`wrote ${args.output}\n`);
  return 0;
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url.endsWith(process.argv[1].split("/").pop() as string);
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
