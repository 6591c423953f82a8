// Console views. Everything renders from the SessionView reducer; the only
// state kept here is the socket, the current view, and the active hold.

import type { Envelope, Role, SnapshotDoc, EventDoc, Category } from "./protocol.js";
import { CATEGORIES, QUERIES, CommandError } from "./protocol.js";
import type { SessionView, PatientView } from "./state.js";
import { addPrompt, applyClock, applyEvent, formatClock, fromSnapshot, remainingMs } from "./state.js";
import { ConsoleSocket } from "./socket.js";
import { SENSOR_FOR_KIND, CHANNEL_FOR_KIND, ZONES, probeCenters } from "./zones.js";

interface ActiveHold {
  instanceId: string;
  zoneId: string;
}

export class ConsoleApp {
  view: SessionView | null = null;
  role: Role = "trainee";
  private activeHold: ActiveHold | null = null;
  private statusLine = "";
  private subscribed = false;

  constructor(
    private readonly socket: ConsoleSocket,
    private readonly root: HTMLElement,
  ) {
    socket.onPush((envelope) => this.onPush(envelope));
    socket.onClose((reason) => {
      this.status(`disconnected: ${reason}`);
      this.render();
    });
    document.addEventListener("pointerup", () => {
      void this.endActiveHold();
    });
  }

  private get sessionId(): string | null {
    return this.view?.sessionId ?? null;
  }

  private status(text: string): void {
    this.statusLine = text;
  }

  private onPush(envelope: Envelope): void {
    if (!this.view) return;
    if (envelope.type === "event") {
      applyEvent(this.view, envelope.payload as unknown as EventDoc);
    } else if (envelope.type === "clock") {
      applyClock(this.view, envelope.payload);
    } else if (envelope.type === "prompt") {
      addPrompt(this.view, envelope.payload);
    } else if (envelope.type === "closing") {
      this.status(`server closing: ${String(envelope.payload?.["reason"] ?? "")}`);
    }
    this.render();
  }

  private async run(label: string, action: () => Promise<unknown>): Promise<void> {
    try {
      await action();
      this.status(label);
    } catch (error) {
      if (error instanceof CommandError) {
        this.status(`${label} failed [${error.code}]: ${error.message}`);
      } else {
        this.status(`${label} failed: ${String(error)}`);
      }
    }
    this.render();
  }

  async createSession(scenarioJson: string): Promise<void> {
    await this.run("session created", async () => {
      const scenario = JSON.parse(scenarioJson);
      const payload = await this.socket.command("create_session", null, { scenario });
      this.view = fromSnapshot(payload["state"] as unknown as SnapshotDoc);
      await this.joinSession(String(payload["session_id"]), this.role);
    });
  }

  async joinSession(sessionId: string, role: Role): Promise<void> {
    this.role = role;
    await this.run(`joined ${sessionId} as ${role}`, async () => {
      const payload = await this.socket.command("join_session", sessionId, { role });
      this.view = fromSnapshot(payload["state"] as unknown as SnapshotDoc);
    });
  }

  async startSession(): Promise<void> {
    await this.run("session started", async () => {
      const payload = await this.socket.command("start_session", this.sessionId, {});
      this.view = fromSnapshot(payload["state"] as unknown as SnapshotDoc);
    });
  }

  async beginHold(patient: PatientView, zoneId: string): Promise<void> {
    const zone = ZONES.find((z) => z.id === zoneId);
    if (!zone || !this.sessionId) return;
    this.activeHold = { instanceId: patient.instanceId, zoneId };
    await this.run(`holding ${zoneId} on ${patient.instanceId}`, async () => {
      // posture is server-side knowledge: probe lying first, stand second
      const sensor = SENSOR_FOR_KIND[zone.kind];
      for (const center of probeCenters(patient.pose, zone)) {
        const detection = await this.socket.command("sensor_pose", this.sessionId, {
          sensor,
          pose: center,
        });
        if (detection["detection"]) break;
      }
      await this.socket.command("begin_hold", this.sessionId, {
        instance_id: patient.instanceId,
        zone: zoneId,
      });
    });
  }

  async endActiveHold(): Promise<void> {
    const hold = this.activeHold;
    if (!hold || !this.sessionId) return;
    this.activeHold = null;
    await this.run(`released ${hold.zoneId}`, () =>
      this.socket.command("end_hold", this.sessionId, {
        instance_id: hold.instanceId,
        zone: hold.zoneId,
      }),
    );
  }

  async query(patient: PatientView, query: string): Promise<void> {
    await this.run(`asked ${patient.instanceId}`, () =>
      this.socket.command("cognitive_query", this.sessionId, {
        instance_id: patient.instanceId,
        query,
      }),
    );
  }

  async assignTag(patient: PatientView, category: Category): Promise<void> {
    await this.run(`tagged ${patient.instanceId} ${category}`, () =>
      this.socket.command("assign_tag", this.sessionId, {
        instance_id: patient.instanceId,
        category,
      }),
    );
  }

  async submitValue(instanceId: string, channel: string, raw: string): Promise<void> {
    const value =
      channel === "bp"
        ? raw.split("/").map((part) => Number(part.trim()))
        : Number(raw.trim());
    await this.run(`submitted ${channel} for ${instanceId}`, () =>
      this.socket.command("facilitator_submit", this.sessionId, {
        instance_id: instanceId,
        channel,
        value,
      }),
    );
  }

  async toggleAuthor(): Promise<void> {
    await this.run("author toggled", () =>
      this.socket.command("author_toggle", this.sessionId, {}),
    );
  }

  async placePatient(instanceId: string, x: number, z: number, yaw: number): Promise<void> {
    await this.run(`placed ${instanceId}`, () =>
      this.socket.command("place_patient", this.sessionId, {
        instance_id: instanceId,
        pose: { x, y: 0, z, yaw_deg: yaw },
      }),
    );
  }

  async setVisibility(instanceId: string, visible: boolean): Promise<void> {
    await this.run(`visibility ${instanceId}`, () =>
      this.socket.command("set_visibility", this.sessionId, {
        instance_id: instanceId,
        visible,
      }),
    );
  }

  async subscribe(): Promise<void> {
    await this.run("subscribed", async () => {
      await this.socket.command("subscribe", this.sessionId, { from_seq: 0 });
      this.subscribed = true;
    });
  }

  // -- rendering ---------------------------------------------------------------

  render(): void {
    const view = this.view;
    if (!view) {
      this.renderStatus();
      return;
    }
    const board = this.root.querySelector("#board") as HTMLElement;
    board.innerHTML = "";
    board.appendChild(this.renderHeader(view));
    if (this.role === "facilitator") {
      board.appendChild(this.renderFacilitatorPanel(view));
    } else if (view.phase === "lobby") {
      board.appendChild(button("start session", () => void this.startSession()));
    }
    const patients = document.createElement("div");
    patients.className = "patients";
    for (const patient of view.patients) {
      if (!patient.visible && this.role !== "facilitator") continue;
      patients.appendChild(this.renderPatient(view, patient));
    }
    board.appendChild(patients);
    if (this.role === "facilitator" && this.subscribed) {
      board.appendChild(this.renderFeed(view));
    }
    this.renderStatus();
  }

  private renderStatus(): void {
    const status = this.root.querySelector("#status") as HTMLElement;
    status.textContent = this.statusLine;
  }

  private renderHeader(view: SessionView): HTMLElement {
    const header = document.createElement("div");
    header.className = "header";
    const roster = view.participants
      .map((p) => `${p.responderId} (${p.role})`)
      .join(", ");
    header.innerHTML = `
      <strong>${view.sessionId}</strong>
      <span class="phase">${view.phase}</span>
      <span class="clock">${formatClock(remainingMs(view))} left</span>
      <span class="mode">${view.mode}</span>
      <span class="roster">${roster || "nobody joined"}</span>`;
    return header;
  }

  private renderFacilitatorPanel(view: SessionView): HTMLElement {
    const panel = document.createElement("div");
    panel.className = "facilitator";

    const controls = document.createElement("div");
    const start = button("start session", () => void this.startSession());
    const author = button("toggle author mode", () => void this.toggleAuthor());
    const subscribe = button("subscribe to telemetry", () => void this.subscribe());
    controls.append(start, author, subscribe);
    panel.appendChild(controls);

    if (view.prompts.length) {
      const prompts = document.createElement("div");
      prompts.className = "prompts";
      prompts.appendChild(heading("measurement prompts"));
      for (const prompt of view.prompts) {
        const row = document.createElement("div");
        const label = document.createElement("span");
        label.textContent = `${prompt.instanceId} ${prompt.channel}: `;
        const input = document.createElement("input");
        input.placeholder = prompt.channel === "bp" ? "sys/dia" : "value";
        const send = button("submit", () =>
          void this.submitValue(prompt.instanceId, prompt.channel, input.value),
        );
        row.append(label, input, send);
        prompts.appendChild(row);
      }
      panel.appendChild(prompts);
    }

    if (view.mismatches.length) {
      const box = document.createElement("div");
      box.className = "mismatches";
      box.appendChild(heading("cross-check mismatches"));
      for (const mismatch of view.mismatches) {
        const line = document.createElement("div");
        line.textContent =
          `${mismatch.instanceId} ${mismatch.channel}: ` +
          `submitted ${JSON.stringify(mismatch.submitted)}, ` +
          `truth ${JSON.stringify(mismatch.truth)}`;
        box.appendChild(line);
      }
      panel.appendChild(box);
    }
    return panel;
  }

  private renderPatient(view: SessionView, patient: PatientView): HTMLElement {
    const card = document.createElement("div");
    card.className = "patient" + (patient.visible ? "" : " hidden-patient");
    const tag = patient.tag ? `tagged ${patient.tag.category}` : "untagged";
    card.appendChild(
      heading(`${patient.instanceId} — ${patient.demographics} — ${tag}`),
    );

    const vitalsLine = document.createElement("div");
    vitalsLine.className = "readouts";
    const pieces = [
      `heartbeat ticks: ${patient.heartbeatTicks}`,
      `breath ticks: ${patient.breathTicks}`,
      patient.bp ? `bp ${patient.bp.sys}/${patient.bp.dia}` : "bp —",
    ];
    if (patient.lastGesture) {
      pieces.push(
        `waved: ${patient.lastGesture.waved}`,
        `pointed: ${patient.lastGesture.pointedToInjury}`,
      );
    }
    vitalsLine.textContent = pieces.join("  ·  ");
    card.appendChild(vitalsLine);

    if (this.role === "trainee") {
      const zones = document.createElement("div");
      zones.className = "zones";
      for (const zone of ZONES) {
        const hold = document.createElement("button");
        hold.textContent = `${zone.id} (${CHANNEL_FOR_KIND[zone.kind]})`;
        if (
          this.activeHold &&
          this.activeHold.instanceId === patient.instanceId &&
          this.activeHold.zoneId === zone.id
        ) {
          hold.classList.add("holding");
        }
        hold.addEventListener("pointerdown", () => void this.beginHold(patient, zone.id));
        zones.appendChild(hold);
      }
      card.appendChild(zones);

      const queries = document.createElement("div");
      for (const q of QUERIES) {
        queries.appendChild(button(q.replaceAll("_", " "), () => void this.query(patient, q)));
      }
      card.appendChild(queries);

      const tags = document.createElement("div");
      tags.className = "tags";
      for (const category of CATEGORIES) {
        const b = button(category, () => void this.assignTag(patient, category));
        b.className = `tag tag-${category}`;
        tags.appendChild(b);
      }
      card.appendChild(tags);
    }

    if (this.role === "facilitator") {
      const staging = document.createElement("div");
      staging.className = "staging";
      const x = numberInput(patient.pose.x);
      const z = numberInput(patient.pose.z);
      const yaw = numberInput(patient.pose.yaw_deg);
      staging.append(
        "x", x, "z", z, "yaw", yaw,
        button("place", () =>
          void this.placePatient(patient.instanceId, x.valueAsNumber, z.valueAsNumber, yaw.valueAsNumber),
        ),
        button(patient.visible ? "hide" : "reveal", () =>
          void this.setVisibility(patient.instanceId, !patient.visible),
        ),
      );
      card.appendChild(staging);
    }
    return card;
  }

  private renderFeed(view: SessionView): HTMLElement {
    const feed = document.createElement("div");
    feed.className = "feed";
    feed.appendChild(heading("event feed"));
    for (const line of view.feed.slice(-40).reverse()) {
      const row = document.createElement("div");
      row.textContent = `#${line.seq} @${line.tsMs}ms ${line.text}`;
      feed.appendChild(row);
    }
    return feed;
  }
}

function button(label: string, onClick: () => void): HTMLButtonElement {
  const b = document.createElement("button");
  b.textContent = label;
  b.addEventListener("click", onClick);
  return b;
}

function heading(text: string): HTMLElement {
  const h = document.createElement("h3");
  h.textContent = text;
  return h;
}

function numberInput(value: number): HTMLInputElement {
  const input = document.createElement("input");
  input.type = "number";
  input.step = "0.1";
  input.value = String(value);
  return input;
}
