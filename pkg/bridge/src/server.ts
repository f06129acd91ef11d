/**
 * Stdio predictor server.
 *
 * Usage: node dist/server.js MODEL_JSON
 *
 * Reads one request frame per stdin line and answers one frame per line on
 * stdout, in order. Every failure is answered in-band as an error frame;
 * nothing a client sends can kill the process. The server keeps no state
 * between requests: each predict carries its full revealed map.
 */
import { createInterface } from "readline";
import { FactorizedAdapter, ModelAdapter } from "./adapter";
import {
  Frame,
  PredictRequest,
  Request,
  SuccessFrame,
  describeIssues,
  encodeFrame,
  errorFrame,
  requestId,
} from "./protocol";

export function handlePredict(adapter: ModelAdapter, request: PredictRequest): SuccessFrame {
  if (request.n !== adapter.length) {
    throw new Error(`model covers ${adapter.length} positions but request has n=${request.n}`);
  }
  const revealed = new Map<number, number>();
  for (const [pos, tok] of request.revealed) {
    if (pos >= request.n) {
      throw new Error(`revealed position ${pos} out of range for n=${request.n}`);
    }
    if (tok >= adapter.vocabSize) {
      throw new Error(`revealed token ${tok} outside vocab of size ${adapter.vocabSize}`);
    }
    if (revealed.has(pos)) {
      throw new Error(`revealed position ${pos} appears twice`);
    }
    revealed.set(pos, tok);
  }
  for (const tok of request.prompt) {
    if (tok >= adapter.vocabSize) {
      throw new Error(`prompt token ${tok} outside vocab of size ${adapter.vocabSize}`);
    }
  }

  let previous = -1;
  const dists = request.positions.map((pos) => {
    if (pos <= previous) {
      throw new Error("positions must be strictly ascending");
    }
    previous = pos;
    if (pos >= request.n) {
      throw new Error(`queried position ${pos} out of range for n=${request.n}`);
    }
    if (revealed.has(pos)) {
      throw new Error(`invalid-query: position ${pos} is already revealed`);
    }
    const { tokens, probs } = adapter.topK(pos, revealed, request.prompt, request.top_k);
    return { pos, tokens, probs };
  });
  return {
    id: request.id,
    ok: true,
    dists,
    truncated: request.top_k < adapter.vocabSize,
  };
}

/** One line in, one frame out; all failures become error frames. */
export function respond(adapter: ModelAdapter, line: string): Frame {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch (err) {
    return errorFrame(null, `not valid JSON: ${(err as Error).message}`);
  }
  const parsed = Request.safeParse(raw);
  if (!parsed.success) {
    return errorFrame(requestId(raw), `bad request frame: ${describeIssues(parsed.error)}`);
  }
  const request = parsed.data;
  try {
    if (request.op === "meta") {
      return {
        id: request.id,
        ok: true,
        meta: { name: adapter.name, vocab_size: adapter.vocabSize },
      };
    }
    return handlePredict(adapter, request);
  } catch (err) {
    return errorFrame(request.id, (err as Error).message);
  }
}

export function serve(
  adapter: ModelAdapter,
  input: NodeJS.ReadableStream,
  output: NodeJS.WritableStream,
): void {
  const lines = createInterface({ input, terminal: false });
  lines.on("line", (line) => {
    if (!line.trim()) {
      return;
    }
    output.write(encodeFrame(respond(adapter, line)));
  });
}

function main(): void {
  const path = process.argv[2];
  if (!path) {
    process.stderr.write("usage: server.js MODEL_JSON\n");
    process.exit(2);
  }
  let adapter: ModelAdapter;
  try {
    adapter = FactorizedAdapter.fromFile(path);
  } catch (err) {
    process.stderr.write(`cannot load model: ${(err as Error).message}\n`);
    process.exit(2);
  }
  serve(adapter, process.stdin, process.stdout);
}

if (require.main === module) {
  main();
}
