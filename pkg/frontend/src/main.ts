import { App } from "./app.js";
import { WebSocketTransport } from "./transport.js";

const proto = location.protocol === "https:" ? "wss" : "ws";
const transport = new WebSocketTransport(`${proto}://${location.host}/ws`);
new App(document.getElementById("app")!, transport);
