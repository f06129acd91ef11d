/**
 * Frame schemas for the stdio predictor protocol.
 *
 * One JSON object per line in each direction. Field names are the wire
 * contract: request {id, op: "predict" | "meta", prompt, n, revealed,
 * positions, top_k}; success {id, ok, dists: [{pos, tokens, probs}],
 * truncated, meta}; error {id, ok: false, error}. Clients match responses
 * to requests by id, so every answerable frame echoes the id it got.
 */
import { z } from "zod";

const tokenId = z.number().int().nonnegative();
const position = z.number().int().nonnegative();

export const MetaRequest = z.object({
  id: z.string(),
  op: z.literal("meta"),
});

export const PredictRequest = z.object({
  id: z.string(),
  op: z.literal("predict"),
  prompt: z.array(tokenId).default([]),
  n: z.number().int().positive(),
  revealed: z.array(z.tuple([position, tokenId])).default([]),
  positions: z.array(position).nonempty(),
  top_k: z.number().int().positive(),
});

export const Request = z.discriminatedUnion("op", [MetaRequest, PredictRequest]);

export type MetaRequest = z.infer<typeof MetaRequest>;
export type PredictRequest = z.infer<typeof PredictRequest>;
export type Request = z.infer<typeof Request>;

export interface Dist {
  pos: number;
  tokens: number[];
  probs: number[];
}

export interface SuccessFrame {
  id: string;
  ok: true;
  dists?: Dist[];
  truncated?: boolean;
  meta?: { name: string; vocab_size: number };
}

export interface ErrorFrame {
  id: string | null;
  ok: false;
  error: string;
}

export type Frame = SuccessFrame | ErrorFrame;

export const encodeFrame = (frame: Frame): string => `${JSON.stringify(frame)}\n`;

/** Best-effort id recovery from a frame that failed validation. */
export function requestId(raw: unknown): string | null {
  if (raw !== null && typeof raw === "object" && typeof (raw as { id?: unknown }).id === "string") {
    return (raw as { id: string }).id;
  }
  return null;
}

export function errorFrame(id: string | null, message: string): ErrorFrame {
  return { id, ok: false, error: message };
}

export function describeIssues(error: z.ZodError): string {
  return error.issues
    .map((issue) => (issue.path.length ? `${issue.path.join(".")}: ${issue.message}` : issue.message))
    .join("; ");
}
