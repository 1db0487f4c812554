// Transport abstraction: the app speaks to something that can send client
// messages and emits server messages; tests inject a fake, main.ts plugs in
// a reconnecting WebSocket.

import { ClientMessage, ServerMessage, encode, parseServerMessage } from "./protocol.js";

export interface Transport {
  send(msg: ClientMessage): void;
  onMessage(handler: (msg: ServerMessage) => void): void;
  onStatus(handler: (connected: boolean) => void): void;
}

export class WebSocketTransport implements Transport {
  private url: string;
  private ws: WebSocket | null = null;
  private messageHandler: ((msg: ServerMessage) => void) | null = null;
  private statusHandler: ((connected: boolean) => void) | null = null;
  private retryMs = 500;

  constructor(url: string) {
    this.url = url;
    this.connect();
  }

  private connect(): void {
    const ws = new WebSocket(this.url);
    this.ws = ws;
    ws.onopen = () => {
      this.retryMs = 500;
      this.statusHandler?.(true);
    };
    ws.onmessage = (ev) => {
      const msg = parseServerMessage(String(ev.data));
      if (msg) this.messageHandler?.(msg);
    };
    ws.onclose = () => {
      this.statusHandler?.(false);
      setTimeout(() => this.connect(), this.retryMs);
      this.retryMs = Math.min(this.retryMs * 2, 5000);
    };
    ws.onerror = () => ws.close();
  }

  send(msg: ClientMessage): void {
    if (this.ws && this.ws.readyState === WebSocket.OPEN) {
      this.ws.send(encode(msg));
    }
  }

  onMessage(handler: (msg: ServerMessage) => void): void {
    this.messageHandler = handler;
  }

  onStatus(handler: (connected: boolean) => void): void {
    this.statusHandler = handler;
  }
}
