// Body zone geometry, mirroring the server's spatial conventions
// (docs/protocol.md): upright offsets from the pelvis ground point,
// lying patients swing the body axis onto the ground plane 0.15 m up,
// yaw rotates about y with 0 facing +z.

import type { PoseDoc } from "./protocol.js";

export type ZoneKind = "bicep" | "wrist" | "chest" | "head_proximity";
export type Sensor = "palm" | "two_fingers" | "head";
export type Channel = "bp" | "heartbeat" | "breath";

export interface Zone {
  id: string;
  kind: ZoneKind;
  offset: [number, number, number];
  radius: number;
}

export const ZONES: readonly Zone[] = [
  { id: "bicep_left", kind: "bicep", offset: [0.18, 1.25, 0.0], radius: 0.12 },
  { id: "bicep_right", kind: "bicep", offset: [-0.18, 1.25, 0.0], radius: 0.12 },
  { id: "wrist_left", kind: "wrist", offset: [0.3, 1.0, 0.0], radius: 0.08 },
  { id: "wrist_right", kind: "wrist", offset: [-0.3, 1.0, 0.0], radius: 0.08 },
  { id: "chest", kind: "chest", offset: [0.0, 1.3, 0.05], radius: 0.25 },
  { id: "head", kind: "head_proximity", offset: [0.0, 1.55, 0.0], radius: 0.35 },
];

export const LYING_HEIGHT_M = 0.15;

export const SENSOR_FOR_KIND: Record<ZoneKind, Sensor> = {
  bicep: "palm",
  wrist: "two_fingers",
  chest: "head",
  head_proximity: "head",
};

export const CHANNEL_FOR_KIND: Record<ZoneKind, Channel> = {
  bicep: "bp",
  wrist: "heartbeat",
  chest: "breath",
  head_proximity: "breath",
};

export function zoneById(id: string): Zone {
  const zone = ZONES.find((z) => z.id === id);
  if (!zone) throw new Error(`unknown zone ${id}`);
  return zone;
}

export function zoneWorldCenter(pose: PoseDoc, standing: boolean, zone: Zone): PoseDoc {
  let [ox, oy, oz] = zone.offset;
  if (!standing) {
    [ox, oy, oz] = [ox, oz + LYING_HEIGHT_M, oy];
  }
  const theta = (pose.yaw_deg * Math.PI) / 180;
  const cos = Math.cos(theta);
  const sin = Math.sin(theta);
  return {
    x: pose.x + ox * cos + oz * sin,
    y: pose.y + oy,
    z: pose.z - ox * sin + oz * cos,
    yaw_deg: 0,
  };
}

// The console does not know a patient's posture (cases are server-side),
// so a hold probes both candidate centers; the server's detection reply
// settles which one was real.
export function probeCenters(pose: PoseDoc, zone: Zone): PoseDoc[] {
  return [zoneWorldCenter(pose, false, zone), zoneWorldCenter(pose, true, zone)];
}
