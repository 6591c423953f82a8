import { ConsoleApp } from "./app.js";
import { DEFAULT_PORT, serverUrl } from "./protocol.js";
import type { Role } from "./protocol.js";
import { ConsoleSocket, browserTransport } from "./socket.js";

function element<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const socket = new ConsoleSocket(browserTransport);
const app = new ConsoleApp(socket, document.body);

const connectForm = element<HTMLElement>("connect");
const sessionForm = element<HTMLElement>("session");
const status = element<HTMLElement>("status");

element<HTMLButtonElement>("connect-btn").addEventListener("click", async () => {
  const host = element<HTMLInputElement>("host").value || "127.0.0.1";
  const port = Number(element<HTMLInputElement>("port").value) || DEFAULT_PORT;
  const name = element<HTMLInputElement>("name").value || "console";
  app.role = element<HTMLSelectElement>("role").value as Role;
  try {
    await socket.connect(serverUrl(host, port));
    const clientId = await socket.hello(name, app.role);
    status.textContent = `connected as ${clientId}`;
    connectForm.hidden = true;
    sessionForm.hidden = false;
  } catch (error) {
    status.textContent = String(error);
  }
});

element<HTMLButtonElement>("join-btn").addEventListener("click", async () => {
  const sessionId = element<HTMLInputElement>("session-id").value.trim();
  await app.joinSession(sessionId, app.role);
  if (app.view) sessionForm.hidden = true;
});

element<HTMLButtonElement>("create-btn").addEventListener("click", async () => {
  const scenarioJson = element<HTMLTextAreaElement>("scenario-json").value;
  await app.createSession(scenarioJson);
  if (app.view) sessionForm.hidden = true;
});
