/**
 * Model adapters behind the predictor protocol.
 *
 * An adapter maps one masked position (plus the revealed context) to its
 * token distribution, already cut to the request's top_k. The factorized
 * stub replays a fixed per-position row from a JSON file; its rows are
 * position-independent of context, which makes decodes through the bridge
 * directly comparable, bit for bit, with an in-process model holding the
 * same rows.
 */
import * as fs from "fs";
import { z } from "zod";

export interface TopK {
  tokens: number[];
  probs: number[];
}

export interface ModelAdapter {
  readonly name: string;
  readonly vocabSize: number;
  /** Number of maskable positions the model covers. */
  readonly length: number;
  topK(
    position: number,
    revealed: ReadonlyMap<number, number>,
    prompt: readonly number[],
    k: number,
  ): TopK;
}

const ModelFile = z.object({
  name: z.string().default("factorized-stub"),
  rows: z.array(z.array(z.number().nonnegative()).nonempty()).nonempty(),
});

// Mirrors the normalization tolerance the Python predictors enforce.
const SUM_TOLERANCE = 1e-9;

export class FactorizedAdapter implements ModelAdapter {
  readonly name: string;
  readonly vocabSize: number;
  readonly length: number;
  private readonly rows: number[][];

  constructor(name: string, rows: number[][]) {
    const width = rows[0].length;
    if (width < 2) {
      throw new Error(`vocab must have at least 2 tokens, got ${width}`);
    }
    rows.forEach((row, i) => {
      if (row.length !== width) {
        throw new Error(`row ${i} has ${row.length} entries, expected ${width}`);
      }
      const sum = row.reduce((acc, p) => acc + p, 0);
      if (Math.abs(sum - 1) > SUM_TOLERANCE) {
        throw new Error(`row ${i} sums to ${sum}, expected 1`);
      }
    });
    this.name = name;
    this.vocabSize = width;
    this.length = rows.length;
    this.rows = rows;
  }

  static fromFile(path: string): FactorizedAdapter {
    const parsed = ModelFile.safeParse(JSON.parse(fs.readFileSync(path, "utf8")));
    if (!parsed.success) {
      throw new Error(`model file ${path}: ${parsed.error.issues[0]?.message ?? "invalid"}`);
    }
    return new FactorizedAdapter(parsed.data.name, parsed.data.rows);
  }

  topK(position: number, _revealed: ReadonlyMap<number, number>, _prompt: readonly number[], k: number): TopK {
    const row = this.rows[position];
    const order = row
      .map((_, token) => token)
      .sort((a, b) => row[b] - row[a] || a - b)
      .slice(0, Math.min(k, this.vocabSize));
    return {
      tokens: order,
      probs: order.map((token) => row[token]),
    };
  }
}
