import { describe, expect, it } from "vitest";

import {
  EncodingBoundsError,
  FrameDecoder,
  KEY_COMMANDS,
  KEY_RAW,
  Packet,
  ProtocolError,
  decodeFrame,
  encodePacket,
} from "../src/proto";

function hex(data: Uint8Array): string {
  return Buffer.from(data).toString("hex");
}

function frameOf(hexText: string): Uint8Array {
  return Uint8Array.from(Buffer.from(hexText.replace(/\s+/g, ""), "hex"));
}

// Frozen wire images; these bytes are the compatibility contract.
const HAND_VECTORS: Array<[Packet, string]> = [
  [{ type: "version", version: 1 }, "00000004 00000001 00000001"],
  [{ type: "versionAck", version: 1 }, "00000004 00000002 00000001"],
  [{ type: "authOffer", mechanisms: [0] }, "00000005 00000003 01 00000000"],
  [
    { type: "authReq", mechanism: 0, payload: new Uint8Array(0) },
    "00000006 00000004 00000000 0000",
  ],
  [
    { type: "authReq", mechanism: 1, payload: new Uint8Array([0x73, 0x33]) },
    "00000008 00000004 00000001 0002 7333",
  ],
  [{ type: "authOk" }, "00000000 00000005"],
  [{ type: "ack", ackedType: 0x20 }, "00000004 00000006 00000020"],
  [
    { type: "enterTty", path: [7, 42], keyMode: KEY_RAW },
    "0000000a 00000020 02 00000007 0000002a 01",
  ],
  [
    { type: "enterTty", path: [1], keyMode: KEY_COMMANDS },
    "00000006 00000020 01 00000001 00",
  ],
  [{ type: "leaveTty" }, "00000000 00000022"],
  [{ type: "writeText", cursor: 0, text: "hi" }, "00000008 00000023 00000000 0002 6869"],
  [
    { type: "keyEvent", kind: KEY_COMMANDS, code: 5, arg: 0 },
    "0000000d 00000025 00 0000000000000005 00000000",
  ],
  [{ type: "error", errorCode: 3, offendingType: 0x30 }, "00000008 0000007f 00000003 00000030"],
];

describe("hand-checked wire images", () => {
  it.each(HAND_VECTORS.map(([p, h]) => [p.type, p, h] as const))(
    "%s encodes to its frozen bytes",
    (_name, packet, expected) => {
      expect(hex(encodePacket(packet))).toBe(hex(frameOf(expected)));
    },
  );

  it.each(HAND_VECTORS.map(([p, h]) => [p.type, p, h] as const))(
    "%s decodes from its frozen bytes",
    (_name, packet, encoded) => {
      const result = decodeFrame(frameOf(encoded));
      expect(result).not.toBeNull();
      const [decoded, consumed] = result!;
      expect(decoded).toEqual(packet);
      expect(consumed).toBe(frameOf(encoded).length);
    },
  );
});

describe("round trips", () => {
  const samples: Packet[] = [
    { type: "version", version: 0xffffffff },
    { type: "authOffer", mechanisms: [0, 1] },
    { type: "authOffer", mechanisms: [] },
    { type: "enterTty", path: [1, 2, 3, 4, 5, 6, 7, 8], keyMode: KEY_COMMANDS },
    { type: "writeText", cursor: 40, text: "" },
    { type: "writeText", cursor: 3, text: "héllo wörld" },
    { type: "writeText", cursor: 1, text: "日本語テキスト" },
    { type: "keyEvent", kind: KEY_RAW, code: Number.MAX_SAFE_INTEGER, arg: 7 },
    { type: "error", errorCode: 8, offendingType: 0x7f },
  ];

  it.each(samples.map((p) => [JSON.stringify(p).slice(0, 60), p] as const))(
    "%s",
    (_name, packet) => {
      const [decoded, consumed] = decodeFrame(encodePacket(packet))!;
      expect(decoded).toEqual(packet);
      expect(consumed).toBe(encodePacket(packet).length);
    },
  );

  it("multi-byte text length counts UTF-8 bytes, not code points", () => {
    const frame = encodePacket({ type: "writeText", cursor: 0, text: "é" });
    // payload: u32 cursor + u16 len=2 + 0xc3 0xa9
    expect(hex(frame)).toBe("000000080000002300000000" + "0002" + "c3a9");
  });
});

describe("incremental decoding", () => {
  it("yields nothing until a frame completes, then everything", () => {
    const frames = [
      encodePacket({ type: "version", version: 1 }),
      encodePacket({ type: "writeText", cursor: 2, text: "ok" }),
      encodePacket({ type: "authOk" }),
    ];
    const joined = Buffer.concat(frames.map((f) => Buffer.from(f)));
    const decoder = new FrameDecoder();
    const got: Packet[] = [];
    for (const byte of joined) {
      got.push(...decoder.feed(Uint8Array.of(byte)));
    }
    expect(got).toEqual([
      { type: "version", version: 1 },
      { type: "writeText", cursor: 2, text: "ok" },
      { type: "authOk" },
    ]);
    expect(decoder.pending).toBe(0);
  });

  it("keeps a partial frame pending", () => {
    const frame = encodePacket({ type: "writeText", cursor: 0, text: "hello" });
    const decoder = new FrameDecoder();
    expect(decoder.feed(frame.subarray(0, frame.length - 1))).toEqual([]);
    expect(decoder.pending).toBe(frame.length - 1);
    expect(decoder.feed(frame.subarray(frame.length - 1))).toHaveLength(1);
  });
});

describe("malformed input is rejected, never mis-read", () => {
  const bad: Array<[string, string]> = [
    ["unknown type code", "00000000 000000ff"],
    ["oversize declared length", "00020000 00000023"],
    ["trailing payload bytes", "00000005 00000001 0000000100"],
    ["truncated string body", "00000007 00000023 00000000 0005 68"],
    ["invalid utf-8 text", "00000008 00000023 00000000 0002 c328"],
    ["path deeper than eight", "00000026 00000020 09" + " 00000000".repeat(9) + " 00"],
    ["bad key mode", "00000006 00000020 01 00000001 02"],
    ["unknown mechanism id", "00000005 00000003 01 00000009"],
    ["bad key event kind", "0000000d 00000025 02 0000000000000005 00000000"],
  ];

  it.each(bad)("%s", (_name, input) => {
    expect(() => decodeFrame(frameOf(input))).toThrow(ProtocolError);
  });

  it("carries the offending type code", () => {
    try {
      decodeFrame(frameOf("00000006 00000020 01 00000001 02"));
      expect.unreachable();
    } catch (error) {
      expect((error as ProtocolError).typeCode).toBe(0x20);
    }
  });

  it("never crashes on random bytes", () => {
    let state = 0x2545f491;
    const rand = () => {
      // xorshift; deterministic fuzz corpus
      state ^= state << 13;
      state ^= state >>> 17;
      state ^= state << 5;
      return (state >>> 0) % 256;
    };
    for (let round = 0; round < 20_000; round++) {
      const blob = Uint8Array.from({ length: rand() % 24 }, rand);
      try {
        new FrameDecoder().feed(blob);
      } catch (error) {
        expect(error).toBeInstanceOf(ProtocolError);
      }
    }
  });
});

describe("encode-time bounds", () => {
  const overLimit: Array<[string, Packet]> = [
    ["text over 16384 bytes", { type: "writeText", cursor: 0, text: "x".repeat(16385) }],
    [
      "path deeper than eight",
      { type: "enterTty", path: Array(9).fill(1), keyMode: 0 },
    ],
    [
      "auth payload over 256 bytes",
      { type: "authReq", mechanism: 1, payload: new Uint8Array(257) },
    ],
    ["cursor out of u32 range", { type: "writeText", cursor: 2 ** 32, text: "" }],
    ["bad key mode", { type: "enterTty", path: [1], keyMode: 3 }],
  ];

  it.each(overLimit)("%s", (_name, packet) => {
    expect(() => encodePacket(packet)).toThrow(EncodingBoundsError);
  });

  it("accepts fields exactly at their caps", () => {
    expect(() =>
      encodePacket({ type: "writeText", cursor: 0, text: "x".repeat(16384) }),
    ).not.toThrow();
    expect(() =>
      encodePacket({ type: "enterTty", path: Array(8).fill(1), keyMode: 0 }),
    ).not.toThrow();
  });
});
