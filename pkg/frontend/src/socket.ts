// WebSocket client for the session protocol: one envelope per text frame,
// commands matched to replies via payload.in_reply_to, pushes fanned out
// to handlers. The transport is injectable so tests run without a server.

import type { Envelope } from "./protocol.js";
import { CommandError, makeEnvelope, parseEnvelope, replyTo } from "./protocol.js";

export interface Transport {
  send(data: string): void;
  close(): void;
  onmessage: ((event: { data: string }) => void) | null;
  onclose: ((event: { reason: string }) => void) | null;
  onerror: ((event: unknown) => void) | null;
  onopen: ((event: unknown) => void) | null;
}

export type TransportFactory = (url: string) => Transport;

interface Pending {
  resolve: (payload: Record<string, unknown>) => void;
  reject: (error: Error) => void;
}

export type PushHandler = (envelope: Envelope) => void;

export class ConsoleSocket {
  clientId: string | null = null;
  private transport: Transport | null = null;
  private seq = 0;
  private pending = new Map<number, Pending>();
  private pushHandlers: PushHandler[] = [];
  private closeHandlers: ((reason: string) => void)[] = [];

  constructor(private readonly factory: TransportFactory) {}

  onPush(handler: PushHandler): void {
    this.pushHandlers.push(handler);
  }

  onClose(handler: (reason: string) => void): void {
    this.closeHandlers.push(handler);
  }

  async connect(url: string): Promise<void> {
    const transport = this.factory(url);
    this.transport = transport;
    transport.onmessage = (event) => this.receive(event.data);
    transport.onclose = (event) => this.handleClose(event.reason || "connection closed");
    await new Promise<void>((resolve, reject) => {
      transport.onopen = () => resolve();
      transport.onerror = () => reject(new Error(`could not connect to ${url}`));
    });
  }

  async hello(name: string, roleIntent: string): Promise<string> {
    const payload = await this.command("hello", null, {
      name,
      role_intent: roleIntent,
    });
    this.clientId = String(payload["client_id"]);
    return this.clientId;
  }

  command(
    type: string,
    session: string | null,
    payload: Record<string, unknown>,
  ): Promise<Record<string, unknown>> {
    const transport = this.transport;
    if (!transport) return Promise.reject(new Error("not connected"));
    const seq = this.seq++;
    const envelope = makeEnvelope(type, session, this.clientId, seq, payload);
    return new Promise((resolve, reject) => {
      this.pending.set(seq, { resolve, reject });
      transport.send(JSON.stringify(envelope));
    });
  }

  close(): void {
    this.transport?.close();
  }

  private receive(data: string): void {
    let envelope: Envelope;
    try {
      envelope = parseEnvelope(data);
    } catch {
      return; // not ours to crash on; the server closes bad streams
    }
    const seq = replyTo(envelope);
    if (seq !== null && this.pending.has(seq)) {
      const pending = this.pending.get(seq)!;
      this.pending.delete(seq);
      if (envelope.type === "result" || envelope.type === "welcome") {
        pending.resolve(envelope.payload);
      } else {
        pending.reject(
          new CommandError(
            String(envelope.payload["code"] ?? "internal"),
            String(envelope.payload["message"] ?? "command failed"),
          ),
        );
      }
      return;
    }
    for (const handler of this.pushHandlers) handler(envelope);
  }

  private handleClose(reason: string): void {
    const error = new Error(`connection closed: ${reason}`);
    for (const pending of this.pending.values()) pending.reject(error);
    this.pending.clear();
    for (const handler of this.closeHandlers) handler(reason);
  }
}

export function browserTransport(url: string): Transport {
  return new WebSocket(url) as unknown as Transport;
}
