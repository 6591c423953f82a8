// Wire types for the session protocol (docs/protocol.md). The console
// talks to the server exclusively through these shapes.

export const PROTOCOL_VERSION = 1;
export const DEFAULT_PORT = 7440;

export interface Envelope {
  v: number;
  type: string;
  session: string | null;
  sender: string | null;
  seq: number;
  ts_ms: number;
  payload: Record<string, unknown>;
}

export interface PoseDoc {
  x: number;
  y: number;
  z: number;
  yaw_deg: number;
}

export interface EventDoc {
  seq: number;
  ts_ms: number;
  kind: string;
  responder_id: string | null;
  instance_id: string | null;
  payload: Record<string, unknown>;
}

export interface InstanceDoc {
  instance_id: string;
  case_id: string;
  demographics: { race: string; gender: string };
  pose: { x: string; y: string; z: string; yaw_deg: string };
  visible: boolean;
}

export interface ScenarioDoc {
  scenario_id: string;
  mode: "virtual" | "actor";
  seed: number;
  case_list_version: string;
  time_limit_s: number;
  required_responders: number;
  instances: InstanceDoc[];
}

export interface TagDoc {
  category: string;
  responder_id: string;
  ts_ms: number;
}

export interface SnapshotDoc {
  session_id: string;
  phase: string;
  mode: "virtual" | "actor";
  clock_ms: number;
  time_limit_s: number;
  participants: { responder_id: string; role: string }[];
  tags: Record<string, TagDoc>;
  pending_prompts: { instance_id: string; channel: string }[];
  config: Record<string, unknown>;
  scenario: ScenarioDoc;
  last_seq: number;
}

export type Role = "trainee" | "facilitator";

// Tag buttons in treatment priority order; black last by convention.
export const CATEGORIES = ["red", "yellow", "grey", "green", "black"] as const;
export type Category = (typeof CATEGORIES)[number];

export const QUERIES = ["can_you_wave", "show_me_where_it_hurts"] as const;

export function makeEnvelope(
  type: string,
  session: string | null,
  sender: string | null,
  seq: number,
  payload: Record<string, unknown>,
): Envelope {
  return { v: PROTOCOL_VERSION, type, session, sender, seq, ts_ms: Date.now(), payload };
}

export function parseEnvelope(raw: string): Envelope {
  const doc = JSON.parse(raw);
  if (typeof doc !== "object" || doc === null || typeof doc.type !== "string") {
    throw new Error("bad envelope");
  }
  return doc as Envelope;
}

// A command reply carries the command's seq back as payload.in_reply_to.
// "welcome" is the reply to "hello"; everything else replies result/error.
export function replyTo(envelope: Envelope): number | null {
  if (
    envelope.type !== "result" &&
    envelope.type !== "error" &&
    envelope.type !== "welcome"
  ) {
    return null;
  }
  const value = envelope.payload["in_reply_to"];
  return typeof value === "number" ? value : null;
}

export class CommandError extends Error {
  readonly code: string;

  constructor(code: string, message: string) {
    super(message);
    this.code = code;
  }
}

export function poseFromStrings(doc: InstanceDoc["pose"]): PoseDoc {
  return {
    x: Number(doc.x),
    y: Number(doc.y),
    z: Number(doc.z),
    yaw_deg: Number(doc.yaw_deg),
  };
}

export function serverUrl(host: string, port: number): string {
  return `ws://${host}:${port}/`;
}
