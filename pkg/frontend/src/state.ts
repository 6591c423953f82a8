// Pure session-view reducer: a snapshot seeds the view, pushed events and
// clock messages fold into it. The DOM layer renders from this and nothing
// else, so the whole protocol surface is testable without a browser.

import type { EventDoc, SnapshotDoc, TagDoc, PoseDoc } from "./protocol.js";
import { poseFromStrings } from "./protocol.js";

export interface PatientView {
  instanceId: string;
  caseId: string;
  demographics: string;
  pose: PoseDoc;
  visible: boolean;
  tag: TagDoc | null;
  heartbeatTicks: number;
  breathTicks: number;
  bp: { sys: number; dia: number } | null;
  lastGesture: { waved: boolean; pointedToInjury: boolean } | null;
}

export interface PromptView {
  instanceId: string;
  channel: string;
  tsMs: number;
}

export interface MismatchView {
  instanceId: string;
  channel: string;
  submitted: unknown;
  truth: unknown;
}

export interface FeedLine {
  seq: number;
  tsMs: number;
  text: string;
}

export const FEED_LIMIT = 200;

export interface SessionView {
  sessionId: string;
  phase: string;
  mode: "virtual" | "actor";
  clockMs: number;
  timeLimitS: number;
  participants: { responderId: string; role: string }[];
  patients: PatientView[];
  prompts: PromptView[];
  mismatches: MismatchView[];
  feed: FeedLine[];
  config: Record<string, unknown>;
  lastSeq: number;
}

export function fromSnapshot(snapshot: SnapshotDoc): SessionView {
  return {
    sessionId: snapshot.session_id,
    phase: snapshot.phase,
    mode: snapshot.mode,
    clockMs: snapshot.clock_ms,
    timeLimitS: snapshot.time_limit_s,
    participants: snapshot.participants.map((p) => ({
      responderId: p.responder_id,
      role: p.role,
    })),
    patients: snapshot.scenario.instances.map((inst) => ({
      instanceId: inst.instance_id,
      caseId: inst.case_id,
      demographics: `${inst.demographics.race} ${inst.demographics.gender}`,
      pose: poseFromStrings(inst.pose),
      visible: inst.visible,
      tag: snapshot.tags[inst.instance_id] ?? null,
      heartbeatTicks: 0,
      breathTicks: 0,
      bp: null,
      lastGesture: null,
    })),
    prompts: snapshot.pending_prompts.map((p) => ({
      instanceId: p.instance_id,
      channel: p.channel,
      tsMs: snapshot.clock_ms,
    })),
    mismatches: [],
    feed: [],
    config: { ...snapshot.config },
    lastSeq: snapshot.last_seq,
  };
}

function patient(view: SessionView, instanceId: string | null): PatientView | undefined {
  if (instanceId === null) return undefined;
  return view.patients.find((p) => p.instanceId === instanceId);
}

function pushFeed(view: SessionView, event: EventDoc): void {
  const who = event.responder_id ?? "engine";
  const where = event.instance_id ? ` ${event.instance_id}` : "";
  view.feed.push({
    seq: event.seq,
    tsMs: event.ts_ms,
    text: `${event.kind}${where} (${who})`,
  });
  if (view.feed.length > FEED_LIMIT) {
    view.feed.splice(0, view.feed.length - FEED_LIMIT);
  }
}

// Folds one pushed event into the view. Mutates in place; render after.
export function applyEvent(view: SessionView, event: EventDoc): void {
  // the snapshot already reflects everything up to lastSeq; broadcasts can
  // overlap it (the server pushes before replying), so drop duplicates
  if (event.seq <= view.lastSeq) return;
  view.lastSeq = event.seq;
  pushFeed(view, event);
  const target = patient(view, event.instance_id);

  switch (event.kind) {
    case "participant_joined": {
      const responderId = event.responder_id ?? "";
      if (!view.participants.some((p) => p.responderId === responderId)) {
        view.participants.push({
          responderId,
          role: String(event.payload["role"]),
        });
      }
      break;
    }
    case "session_start":
      view.phase = "running";
      break;
    case "session_end":
      view.phase = "complete";
      view.clockMs = event.ts_ms;
      break;
    case "author_toggled":
      view.phase = view.phase === "author_mode" ? "running" : "author_mode";
      break;
    case "tag_assigned":
      if (target && event.responder_id) {
        target.tag = {
          category: String(event.payload["category"]),
          responder_id: event.responder_id,
          ts_ms: event.ts_ms,
        };
      }
      break;
    case "patient_placed":
      if (target) {
        const pose = event.payload["pose"] as Record<string, string>;
        target.pose = {
          x: Number(pose["x"]),
          y: Number(pose["y"]),
          z: Number(pose["z"]),
          yaw_deg: Number(pose["yaw_deg"]),
        };
      }
      break;
    case "visibility_set":
      if (target) target.visible = Boolean(event.payload["visible"]);
      break;
    case "param_tweak":
      view.config[String(event.payload["key"])] = event.payload["value"];
      break;
    case "heartbeat_tick":
      if (target) target.heartbeatTicks += 1;
      break;
    case "breath_tick":
      if (target) target.breathTicks += 1;
      break;
    case "vitals_readout": {
      const values = event.payload["values"] as { sys: number; dia: number };
      if (target) target.bp = { sys: values.sys, dia: values.dia };
      break;
    }
    case "gesture_response":
      if (target) {
        target.lastGesture = {
          waved: Boolean(event.payload["waved"]),
          pointedToInjury: Boolean(event.payload["pointed_to_injury"]),
        };
      }
      break;
    case "cross_check_mismatch":
      view.mismatches.push({
        instanceId: event.instance_id ?? "",
        channel: String(event.payload["channel"]),
        submitted: event.payload["submitted"],
        truth: event.payload["truth"],
      });
      break;
    case "facilitator_value": {
      const prompt = view.prompts.findIndex(
        (p) =>
          p.instanceId === event.instance_id &&
          p.channel === event.payload["channel"],
      );
      if (prompt >= 0) view.prompts.splice(prompt, 1);
      break;
    }
    default:
      break; // inputs already reflected elsewhere (hand/gaze/zone events)
  }
  if (event.ts_ms > view.clockMs) view.clockMs = event.ts_ms;
}

export function addPrompt(view: SessionView, payload: Record<string, unknown>): void {
  view.prompts.push({
    instanceId: String(payload["instance_id"]),
    channel: String(payload["channel"]),
    tsMs: Number(payload["ts_ms"]),
  });
}

export function applyClock(view: SessionView, payload: Record<string, unknown>): void {
  view.clockMs = Number(payload["clock_ms"]);
  view.phase = String(payload["phase"]);
}

export function remainingMs(view: SessionView): number {
  return Math.max(0, view.timeLimitS * 1000 - view.clockMs);
}

export function formatClock(ms: number): string {
  const total = Math.floor(ms / 1000);
  const minutes = Math.floor(total / 60);
  const seconds = total % 60;
  return `${minutes}:${String(seconds).padStart(2, "0")}`;
}
