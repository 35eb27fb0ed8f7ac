/**
 * Client binding for the braillemux daemon: connect, bind to a focus path,
 * write text, read translated key events.  Tty-mode subset only; raw mode
 * and suspension are not exposed here.
 */

import * as fs from "node:fs";
import * as net from "node:net";

import {
  ErrorCode,
  FrameDecoder,
  KEY_COMMANDS,
  KEY_RAW,
  Mechanism,
  PROTOCOL_VERSION,
  Packet,
  ProtocolError,
  WRITE_TYPE_CODES,
  encodePacket,
} from "./proto";

export const DEFAULT_ADDRESS = "tcp:127.0.0.1:4101";
export const ENV_ADDR = "BRLMUX_ADDR";
export const ENV_KEYFILE = "BRLMUX_KEYFILE";

const REPLY_TIMEOUT_MS = 10_000;

export class ClientError extends Error {}

export class AddressError extends ClientError {}

export class ConnectFailed extends ClientError {}

export class AuthFailed extends ClientError {
  constructor(
    message: string,
    public readonly code: number = ErrorCode.UNAUTHORIZED,
  ) {
    super(message);
    this.name = "AuthFailed";
  }
}

export class VersionMismatch extends ClientError {}

export class ConnectionLost extends ClientError {}

export class NotInTty extends ClientError {}

/** A request the server answered with an Error packet. */
export class RequestError extends ClientError {
  constructor(
    public readonly code: number,
    public readonly offendingType: number,
  ) {
    super(`server error ${code} (offending type 0x${offendingType.toString(16)})`);
    this.name = "RequestError";
  }
}

export interface KeyEvent {
  kind: number; // KEY_COMMANDS or KEY_RAW
  code: number;
  arg: number;
}

export type Address =
  | { family: "tcp"; host: string; port: number }
  | { family: "local"; path: string };

export function parseAddress(text: string): Address {
  if (text.startsWith("tcp:")) {
    const rest = text.slice(4);
    const sep = rest.lastIndexOf(":");
    if (sep <= 0 || sep === rest.length - 1) {
      throw new AddressError(`bad tcp address ${text}`);
    }
    const port = Number(rest.slice(sep + 1));
    if (!Number.isInteger(port) || port < 0 || port > 65535) {
      throw new AddressError(`bad port in ${text}`);
    }
    return { family: "tcp", host: rest.slice(0, sep), port };
  }
  if (text.startsWith("local:")) {
    const path = text.slice(6);
    if (!path) throw new AddressError(`bad local address ${text}`);
    return { family: "local", path };
  }
  throw new AddressError(`unrecognized address ${text}`);
}

interface Waiter<T> {
  resolve: (value: T) => void;
  reject: (error: Error) => void;
  timer: NodeJS.Timeout | null;
}

function settle<T>(waiter: Waiter<T>, value: T): void {
  if (waiter.timer !== null) clearTimeout(waiter.timer);
  waiter.resolve(value);
}

function abort<T>(waiter: Waiter<T>, error: Error): void {
  if (waiter.timer !== null) clearTimeout(waiter.timer);
  waiter.reject(error);
}

export interface OpenOptions {
  /** `tcp:HOST:PORT` or `local:PATH`; default $BRLMUX_ADDR or the stock port. */
  address?: string;
  /** Key bytes; default: contents of $BRLMUX_KEYFILE when set. */
  authKey?: Uint8Array | null;
  /** Connect timeout in milliseconds. */
  timeoutMs?: number;
}

type Mode = "authed" | "tty";

export class BindingConnection {
  private mode: Mode = "authed";
  private lost: Error | null = null;
  private closed = false;

  private readonly replies: Packet[] = [];
  private readonly replyWaiters: Waiter<Packet>[] = [];
  private readonly keys: KeyEvent[] = [];
  private readonly keyWaiters: Waiter<KeyEvent | null>[] = [];
  private readonly errors: RequestError[] = [];

  /** @internal use {@link open} instead */
  constructor(
    private readonly socket: net.Socket,
    decoder: FrameDecoder,
    initial: Packet[],
  ) {
    for (const packet of initial) this.route(packet);
    socket.on("data", (data: Buffer) => {
      let packets: Packet[];
      try {
        packets = decoder.feed(data);
      } catch (error) {
        if (!(error instanceof ProtocolError)) throw error;
        this.markLost(new ConnectionLost(`protocol error: ${error.message}`));
        socket.destroy();
        return;
      }
      for (const packet of packets) this.route(packet);
    });
    socket.on("error", () => {
      /* surfaced through "close" */
    });
    socket.on("close", () => {
      this.markLost(new ConnectionLost("connection lost"));
    });
  }

  /** Bind to a focus path and start receiving key events. */
  async enterTtyMode(path: number[], keyMode: number = KEY_COMMANDS): Promise<void> {
    await this.request({ type: "enterTty", path, keyMode });
    this.mode = "tty";
  }

  async leaveTtyMode(): Promise<void> {
    if (this.mode !== "tty") throw new NotInTty("not in tty mode");
    await this.request({ type: "leaveTty" });
    this.mode = "authed";
  }

  /** Queue a text write; resolves before the server processes it. */
  writeText(text: string, cursor = 0): void {
    if (this.mode !== "tty") throw new NotInTty("writeText outside tty mode");
    this.send({ type: "writeText", cursor, text });
  }

  /** Oldest pending key event, or null if the timeout expires first. */
  readKey(timeoutMs: number | null = null): Promise<KeyEvent | null> {
    if (this.mode !== "tty") {
      return Promise.reject(new NotInTty("readKey outside tty mode"));
    }
    if (this.lost !== null) return Promise.reject(this.lost);
    const queued = this.keys.shift();
    if (queued !== undefined) return Promise.resolve(queued);
    return new Promise((resolve, reject) => {
      const waiter: Waiter<KeyEvent | null> = { resolve, reject, timer: null };
      if (timeoutMs !== null) {
        waiter.timer = setTimeout(() => {
          const at = this.keyWaiters.indexOf(waiter);
          if (at >= 0) this.keyWaiters.splice(at, 1);
          resolve(null);
        }, timeoutMs);
      }
      this.keyWaiters.push(waiter);
    });
  }

  /** Oldest asynchronous write error, or null if none is queued. */
  nextError(): RequestError | null {
    return this.errors.shift() ?? null;
  }

  close(): Promise<void> {
    if (this.closed) return Promise.resolve();
    this.closed = true;
    if (this.socket.destroyed) return Promise.resolve();
    return new Promise((resolve) => {
      this.socket.once("close", () => resolve());
      this.socket.destroy();
    });
  }

  private send(packet: Packet): void {
    if (this.lost !== null) throw this.lost;
    if (this.closed) throw new ConnectionLost("connection closed");
    this.socket.write(encodePacket(packet));
  }

  private request(packet: Packet): Promise<Packet> {
    return new Promise<Packet>((resolve, reject) => {
      try {
        this.send(packet);
      } catch (error) {
        reject(error as Error);
        return;
      }
      const queued = this.replies.shift();
      if (queued !== undefined) {
        resolve(queued);
        return;
      }
      const waiter: Waiter<Packet> = { resolve, reject, timer: null };
      waiter.timer = setTimeout(() => {
        const at = this.replyWaiters.indexOf(waiter);
        if (at >= 0) this.replyWaiters.splice(at, 1);
        reject(new ConnectionLost("no reply from server"));
      }, REPLY_TIMEOUT_MS);
      this.replyWaiters.push(waiter);
    }).then((reply) => {
      if (reply.type === "error") {
        throw new RequestError(reply.errorCode, reply.offendingType);
      }
      if (reply.type !== "ack") {
        throw new ClientError(`unexpected reply ${reply.type}`);
      }
      return reply;
    });
  }

  private route(packet: Packet): void {
    if (packet.type === "keyEvent") {
      const event: KeyEvent = {
        kind: packet.kind,
        code: packet.code,
        arg: packet.arg,
      };
      const waiter = this.keyWaiters.shift();
      if (waiter !== undefined) settle(waiter, event);
      else this.keys.push(event);
      return;
    }
    if (packet.type === "error" && WRITE_TYPE_CODES.has(packet.offendingType)) {
      this.errors.push(new RequestError(packet.errorCode, packet.offendingType));
      return;
    }
    const waiter = this.replyWaiters.shift();
    if (waiter !== undefined) settle(waiter, packet);
    else this.replies.push(packet);
  }

  private markLost(error: ConnectionLost): void {
    if (this.lost !== null) return;
    this.lost = error;
    for (const waiter of this.replyWaiters.splice(0)) abort(waiter, error);
    for (const waiter of this.keyWaiters.splice(0)) abort(waiter, error);
  }
}

function resolveKey(explicit: Uint8Array | null | undefined): Uint8Array | null {
  if (explicit != null) return explicit;
  const path = process.env[ENV_KEYFILE];
  if (!path) return null;
  try {
    return fs.readFileSync(path);
  } catch (error) {
    throw new AuthFailed(`cannot read key file ${path}: ${error}`);
  }
}

function connectSocket(address: Address, timeoutMs: number): Promise<net.Socket> {
  return new Promise((resolve, reject) => {
    const socket =
      address.family === "tcp"
        ? net.connect(address.port, address.host)
        : net.connect(address.path);
    socket.setNoDelay(true);
    const timer = setTimeout(() => {
      socket.destroy();
      reject(new ConnectFailed(`connect timed out after ${timeoutMs} ms`));
    }, timeoutMs);
    socket.once("connect", () => {
      clearTimeout(timer);
      resolve(socket);
    });
    socket.once("error", (error) => {
      clearTimeout(timer);
      reject(new ConnectFailed(`cannot connect: ${error.message}`));
    });
  });
}

/** Connect, negotiate the protocol version, and authenticate. */
export async function open(options: OpenOptions = {}): Promise<BindingConnection> {
  const address = parseAddress(
    options.address ?? process.env[ENV_ADDR] ?? DEFAULT_ADDRESS,
  );
  const key = resolveKey(options.authKey);
  const socket = await connectSocket(address, options.timeoutMs ?? 10_000);
  try {
    return await handshake(socket, key);
  } catch (error) {
    socket.destroy();
    throw error;
  }
}

async function handshake(
  socket: net.Socket,
  key: Uint8Array | null,
): Promise<BindingConnection> {
  const decoder = new FrameDecoder();
  const pending: Packet[] = [];
  let buffered: Buffer[] = [];
  let wake: (() => void) | null = null;
  let failure: Error | null = null;

  const onData = (data: Buffer) => {
    buffered.push(data);
    wake?.();
  };
  const onClose = () => {
    failure = new ConnectFailed("server closed the connection during handshake");
    wake?.();
  };
  socket.on("data", onData);
  socket.once("close", onClose);
  socket.once("error", onClose);

  const nextPacket = async (): Promise<Packet> => {
    for (;;) {
      for (const chunk of buffered.splice(0)) {
        try {
          pending.push(...decoder.feed(chunk));
        } catch (error) {
          throw new ConnectFailed(`handshake failed: ${error}`);
        }
      }
      const packet = pending.shift();
      if (packet !== undefined) return packet;
      if (failure !== null) throw failure;
      await new Promise<void>((resolve) => {
        wake = resolve;
      });
      wake = null;
    }
  };

  try {
    const version = await nextPacket();
    if (version.type !== "version") {
      throw new ConnectFailed(`expected version announcement, got ${version.type}`);
    }
    if (version.version !== PROTOCOL_VERSION) {
      throw new VersionMismatch(`server speaks version ${version.version}`);
    }
    socket.write(encodePacket({ type: "versionAck", version: PROTOCOL_VERSION }));

    const offer = await nextPacket();
    if (offer.type !== "authOffer") {
      throw new ConnectFailed(`expected mechanism offer, got ${offer.type}`);
    }
    let request: Packet;
    if (offer.mechanisms.includes(Mechanism.NONE)) {
      request = { type: "authReq", mechanism: Mechanism.NONE, payload: new Uint8Array(0) };
    } else if (offer.mechanisms.includes(Mechanism.KEYFILE)) {
      if (key === null) {
        throw new AuthFailed("server requires a key and none was provided");
      }
      request = { type: "authReq", mechanism: Mechanism.KEYFILE, payload: key };
    } else {
      throw new AuthFailed(`no supported mechanism among ${offer.mechanisms}`);
    }

    let lastCode: number = ErrorCode.UNAUTHORIZED;
    for (let attempt = 0; attempt < 3; attempt++) {
      socket.write(encodePacket(request));
      let reply: Packet;
      try {
        reply = await nextPacket();
      } catch (error) {
        if (error instanceof ConnectFailed) break; // hung up after failures
        throw error;
      }
      if (reply.type === "authOk") {
        socket.removeListener("data", onData);
        socket.removeListener("close", onClose);
        socket.removeListener("error", onClose);
        return new BindingConnection(socket, decoder, pending);
      }
      if (reply.type === "error") {
        if (reply.errorCode === ErrorCode.UNSUPPORTED_VERSION) {
          throw new VersionMismatch("server rejected protocol version 1");
        }
        lastCode = reply.errorCode;
        continue;
      }
      throw new ConnectFailed(`unexpected handshake reply ${reply.type}`);
    }
    throw new AuthFailed(`authorization failed (code ${lastCode})`, lastCode);
  } finally {
    socket.removeListener("data", onData);
    socket.removeListener("close", onClose);
    socket.removeListener("error", onClose);
  }
}

export { KEY_COMMANDS, KEY_RAW, ErrorCode, Mechanism, PROTOCOL_VERSION };
