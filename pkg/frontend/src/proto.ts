/**
 * Wire protocol codec: the tty-mode subset of the braillemux protocol.
 *
 * Frame format (all integers big-endian):
 *
 *     length u32 | typeCode u32 | payload
 *
 * `length` counts payload bytes only and never exceeds MAX_FRAME_PAYLOAD.
 * Strings are UTF-8 with a u16 byte-length prefix; focus paths are a u8
 * depth followed by `depth` u32 elements (depth <= 8).
 */

export const PROTOCOL_VERSION = 1;

export const MAX_FRAME_PAYLOAD = 65536;
export const MAX_TEXT_BYTES = 16384;
export const MAX_AUTH_PAYLOAD = 256;
export const MAX_PATH_DEPTH = 8;

export const HEADER_SIZE = 8;

export const KEY_COMMANDS = 0;
export const KEY_RAW = 1;

export const Mechanism = {
  NONE: 0,
  KEYFILE: 1,
} as const;

export const ErrorCode = {
  INVALID_PACKET: 1,
  UNAUTHORIZED: 2,
  DEVICE_BUSY: 3,
  NOT_IN_MODE: 4,
  BAD_PARAMETER: 5,
  DRIVER_MISMATCH: 6,
  UNSUPPORTED_VERSION: 7,
  ILLEGAL_IN_STATE: 8,
} as const;

export const TypeCode = {
  Version: 0x01,
  VersionAck: 0x02,
  AuthOffer: 0x03,
  AuthReq: 0x04,
  AuthOk: 0x05,
  Ack: 0x06,
  EnterTty: 0x20,
  LeaveTty: 0x22,
  WriteText: 0x23,
  KeyEvent: 0x25,
  Error: 0x7f,
} as const;

/** Requests whose failures arrive as asynchronous Error packets. */
export const WRITE_TYPE_CODES: ReadonlySet<number> = new Set([0x23, 0x24, 0x32]);

export type Packet =
  | { type: "version"; version: number }
  | { type: "versionAck"; version: number }
  | { type: "authOffer"; mechanisms: number[] }
  | { type: "authReq"; mechanism: number; payload: Uint8Array }
  | { type: "authOk" }
  | { type: "ack"; ackedType: number }
  | { type: "enterTty"; path: number[]; keyMode: number }
  | { type: "leaveTty" }
  | { type: "writeText"; cursor: number; text: string }
  | { type: "keyEvent"; kind: number; code: number; arg: number }
  | { type: "error"; errorCode: number; offendingType: number };

export class EncodingBoundsError extends Error {}

/** Incoming bytes do not form a well-formed frame. */
export class ProtocolError extends Error {
  constructor(
    message: string,
    public readonly typeCode: number = 0,
  ) {
    super(message);
    this.name = "ProtocolError";
  }
}

const utf8Encode = new TextEncoder();
const utf8Decode = new TextDecoder("utf-8", { fatal: true });

class Writer {
  private parts: number[] = [];

  u8(value: number): this {
    this.parts.push(value & 0xff);
    return this;
  }

  u16(value: number): this {
    this.parts.push((value >>> 8) & 0xff, value & 0xff);
    return this;
  }

  u32(value: number): this {
    if (!Number.isInteger(value) || value < 0 || value > 0xffffffff) {
      throw new EncodingBoundsError(`value out of u32 range: ${value}`);
    }
    this.parts.push(
      (value >>> 24) & 0xff,
      (value >>> 16) & 0xff,
      (value >>> 8) & 0xff,
      value & 0xff,
    );
    return this;
  }

  bytes(data: Uint8Array): this {
    for (const b of data) this.parts.push(b);
    return this;
  }

  take(): Uint8Array {
    return Uint8Array.from(this.parts);
  }
}

function packString(text: string, cap: number, what: string): Writer {
  const raw = utf8Encode.encode(text);
  if (raw.length > cap) {
    throw new EncodingBoundsError(`${what} exceeds ${cap} bytes: ${raw.length}`);
  }
  return new Writer().u16(raw.length).bytes(raw);
}

function packPath(path: number[], what: string): Writer {
  if (path.length > MAX_PATH_DEPTH) {
    throw new EncodingBoundsError(
      `${what} deeper than ${MAX_PATH_DEPTH}: ${path.length}`,
    );
  }
  const w = new Writer().u8(path.length);
  for (const elem of path) w.u32(elem);
  return w;
}

function payloadOf(packet: Packet): { code: number; payload: Uint8Array } {
  switch (packet.type) {
    case "version":
      return {
        code: TypeCode.Version,
        payload: new Writer().u32(packet.version).take(),
      };
    case "versionAck":
      return {
        code: TypeCode.VersionAck,
        payload: new Writer().u32(packet.version).take(),
      };
    case "authOffer": {
      if (packet.mechanisms.length > 255) {
        throw new EncodingBoundsError("too many mechanisms offered");
      }
      const w = new Writer().u8(packet.mechanisms.length);
      for (const mech of packet.mechanisms) w.u32(mech);
      return { code: TypeCode.AuthOffer, payload: w.take() };
    }
    case "authReq": {
      if (packet.payload.length > MAX_AUTH_PAYLOAD) {
        throw new EncodingBoundsError("auth payload exceeds 256 bytes");
      }
      const w = new Writer()
        .u32(packet.mechanism)
        .u16(packet.payload.length)
        .bytes(packet.payload);
      return { code: TypeCode.AuthReq, payload: w.take() };
    }
    case "authOk":
      return { code: TypeCode.AuthOk, payload: new Uint8Array(0) };
    case "ack":
      return {
        code: TypeCode.Ack,
        payload: new Writer().u32(packet.ackedType).take(),
      };
    case "enterTty": {
      if (packet.keyMode !== KEY_COMMANDS && packet.keyMode !== KEY_RAW) {
        throw new EncodingBoundsError(`bad key mode ${packet.keyMode}`);
      }
      const w = packPath(packet.path, "tty path").u8(packet.keyMode);
      return { code: TypeCode.EnterTty, payload: w.take() };
    }
    case "leaveTty":
      return { code: TypeCode.LeaveTty, payload: new Uint8Array(0) };
    case "writeText": {
      const text = packString(packet.text, MAX_TEXT_BYTES, "text");
      const w = new Writer().u32(packet.cursor).bytes(text.take());
      return { code: TypeCode.WriteText, payload: w.take() };
    }
    case "keyEvent": {
      if (packet.kind !== KEY_COMMANDS && packet.kind !== KEY_RAW) {
        throw new EncodingBoundsError(`bad key event kind ${packet.kind}`);
      }
      const w = new Writer().u8(packet.kind);
      const code = BigInt(packet.code);
      if (code < 0n || code > 0xffffffffffffffffn) {
        throw new EncodingBoundsError(`key code out of u64 range: ${packet.code}`);
      }
      for (let shift = 56n; shift >= 0n; shift -= 8n) {
        w.u8(Number((code >> shift) & 0xffn));
      }
      w.u32(packet.arg);
      return { code: TypeCode.KeyEvent, payload: w.take() };
    }
    case "error":
      return {
        code: TypeCode.Error,
        payload: new Writer()
          .u32(packet.errorCode)
          .u32(packet.offendingType)
          .take(),
      };
  }
}

/** Encode a packet into one complete frame. */
export function encodePacket(packet: Packet): Uint8Array {
  const { code, payload } = payloadOf(packet);
  if (payload.length > MAX_FRAME_PAYLOAD) {
    throw new EncodingBoundsError(`payload exceeds frame cap: ${payload.length}`);
  }
  const frame = new Uint8Array(HEADER_SIZE + payload.length);
  const view = new DataView(frame.buffer);
  view.setUint32(0, payload.length);
  view.setUint32(4, code);
  frame.set(payload, HEADER_SIZE);
  return frame;
}

class Reader {
  private pos = 0;

  constructor(
    private readonly payload: Uint8Array,
    private readonly code: number,
  ) {}

  fail(reason: string): ProtocolError {
    return new ProtocolError(reason, this.code);
  }

  private take(n: number): Uint8Array {
    if (this.pos + n > this.payload.length) {
      throw this.fail("payload shorter than its layout requires");
    }
    const chunk = this.payload.subarray(this.pos, this.pos + n);
    this.pos += n;
    return chunk;
  }

  u8(): number {
    return this.take(1)[0]!;
  }

  u16(): number {
    const c = this.take(2);
    return (c[0]! << 8) | c[1]!;
  }

  u32(): number {
    const c = this.take(4);
    return ((c[0]! << 24) | (c[1]! << 16) | (c[2]! << 8) | c[3]!) >>> 0;
  }

  u64(): number {
    let value = 0n;
    for (const b of this.take(8)) value = (value << 8n) | BigInt(b);
    if (value > BigInt(Number.MAX_SAFE_INTEGER)) {
      throw this.fail(`u64 value ${value} exceeds the safe integer range`);
    }
    return Number(value);
  }

  prefixedBytes(cap: number, what: string): Uint8Array {
    const n = this.u16();
    if (n > cap) {
      throw this.fail(`${what} exceeds ${cap} bytes: ${n}`);
    }
    return new Uint8Array(this.take(n));
  }

  prefixedString(cap: number, what: string): string {
    const raw = this.prefixedBytes(cap, what);
    try {
      return utf8Decode.decode(raw);
    } catch {
      throw this.fail(`${what} is not valid UTF-8`);
    }
  }

  path(what: string): number[] {
    const depth = this.u8();
    if (depth > MAX_PATH_DEPTH) {
      throw this.fail(`${what} deeper than ${MAX_PATH_DEPTH}: ${depth}`);
    }
    const out: number[] = [];
    for (let i = 0; i < depth; i++) out.push(this.u32());
    return out;
  }

  finish(): void {
    if (this.pos !== this.payload.length) {
      throw this.fail("trailing bytes after payload");
    }
  }
}

function parsePayload(code: number, r: Reader): Packet {
  switch (code) {
    case TypeCode.Version:
      return { type: "version", version: r.u32() };
    case TypeCode.VersionAck:
      return { type: "versionAck", version: r.u32() };
    case TypeCode.AuthOffer: {
      const count = r.u8();
      const mechanisms: number[] = [];
      for (let i = 0; i < count; i++) {
        const value = r.u32();
        if (value !== Mechanism.NONE && value !== Mechanism.KEYFILE) {
          throw r.fail(`unknown mechanism id ${value}`);
        }
        mechanisms.push(value);
      }
      return { type: "authOffer", mechanisms };
    }
    case TypeCode.AuthReq: {
      const value = r.u32();
      if (value !== Mechanism.NONE && value !== Mechanism.KEYFILE) {
        throw r.fail(`unknown mechanism id ${value}`);
      }
      return {
        type: "authReq",
        mechanism: value,
        payload: r.prefixedBytes(MAX_AUTH_PAYLOAD, "auth payload"),
      };
    }
    case TypeCode.AuthOk:
      return { type: "authOk" };
    case TypeCode.Ack:
      return { type: "ack", ackedType: r.u32() };
    case TypeCode.EnterTty: {
      const path = r.path("tty path");
      const keyMode = r.u8();
      if (keyMode !== KEY_COMMANDS && keyMode !== KEY_RAW) {
        throw r.fail(`bad key mode ${keyMode}`);
      }
      return { type: "enterTty", path, keyMode };
    }
    case TypeCode.LeaveTty:
      return { type: "leaveTty" };
    case TypeCode.WriteText:
      return {
        type: "writeText",
        cursor: r.u32(),
        text: r.prefixedString(MAX_TEXT_BYTES, "text"),
      };
    case TypeCode.KeyEvent: {
      const kind = r.u8();
      if (kind !== KEY_COMMANDS && kind !== KEY_RAW) {
        throw r.fail(`bad key event kind ${kind}`);
      }
      return { type: "keyEvent", kind, code: r.u64(), arg: r.u32() };
    }
    case TypeCode.Error:
      return { type: "error", errorCode: r.u32(), offendingType: r.u32() };
    default:
      throw new ProtocolError(`unknown type code 0x${code.toString(16)}`, code);
  }
}

/**
 * Decode the first frame of `buffer`.  Returns `[packet, consumed]` once a
 * whole frame is buffered, null while more bytes are needed, and throws
 * ProtocolError for anything that can never become a valid frame.
 */
export function decodeFrame(buffer: Uint8Array): [Packet, number] | null {
  if (buffer.length < HEADER_SIZE) return null;
  const view = new DataView(buffer.buffer, buffer.byteOffset, buffer.byteLength);
  const length = view.getUint32(0);
  const code = view.getUint32(4);
  if (length > MAX_FRAME_PAYLOAD) {
    throw new ProtocolError(`frame length ${length} exceeds cap`, code);
  }
  if (buffer.length < HEADER_SIZE + length) return null;
  const reader = new Reader(
    buffer.subarray(HEADER_SIZE, HEADER_SIZE + length),
    code,
  );
  const packet = parsePayload(code, reader);
  reader.finish();
  return [packet, HEADER_SIZE + length];
}

/** Incremental decoder for a byte stream of concatenated frames. */
export class FrameDecoder {
  private buf = new Uint8Array(0);

  /** Append `data` and return every packet that completed. */
  feed(data: Uint8Array): Packet[] {
    const joined = new Uint8Array(this.buf.length + data.length);
    joined.set(this.buf);
    joined.set(data, this.buf.length);
    this.buf = joined;
    const packets: Packet[] = [];
    for (;;) {
      const result = decodeFrame(this.buf);
      if (result === null) return packets;
      const [packet, consumed] = result;
      this.buf = this.buf.subarray(consumed);
      packets.push(packet);
    }
  }

  get pending(): number {
    return this.buf.length;
  }
}
