/** Spawns the daemon on a simulated device and records wire traffic. */

import { ChildProcess, spawn } from "node:child_process";
import * as fs from "node:fs";
import * as net from "node:net";
import * as os from "node:os";
import * as path from "node:path";

const PYTHON = process.env.PYTHON ?? "python3";

export interface ServerHandle {
  port: number;
  address: string;
  dir: string;
  logPath: string;
  pipePath: string;
  recvPath: string;
  proc: ChildProcess;
  logText(): string;
  logLines(): string[];
  injectKey(code: number): void;
  stop(): Promise<void>;
}

export async function startServer(
  options: { cols?: number; rows?: number; auth?: string } = {},
): Promise<ServerHandle> {
  const dir = fs.mkdtempSync(path.join(os.tmpdir(), "brlmux-ts-"));
  const config = path.join(dir, "device.cfg");
  fs.writeFileSync(config, `cols = ${options.cols ?? 8}\nrows = ${options.rows ?? 1}\n`);
  const logPath = path.join(dir, "simscript.log");
  const pipePath = path.join(dir, "simscript.pipe");

  const proc = spawn(
    PYTHON,
    [
      "-m",
      "braillemux.server",
      "--driver",
      "simscript",
      "--driver-config",
      config,
      "--listen",
      "tcp:127.0.0.1:0",
      "--auth",
      options.auth ?? "none",
    ],
    { stdio: ["ignore", "pipe", "pipe"] },
  );

  const address = await new Promise<string>((resolve, reject) => {
    let out = "";
    let err = "";
    proc.stdout!.on("data", (chunk: Buffer) => {
      out += chunk.toString();
      const match = out.match(/listening on (\S+)/);
      if (match) resolve(match[1]!);
    });
    proc.stderr!.on("data", (chunk: Buffer) => {
      err += chunk.toString();
    });
    proc.once("exit", (code) => {
      reject(new Error(`daemon exited with ${code} before listening: ${err}`));
    });
  });
  const port = Number(address.split(":").pop());
  const logText = () =>
    fs.existsSync(logPath) ? fs.readFileSync(logPath, "utf-8") : "";

  return {
    port,
    address,
    dir,
    logPath,
    pipePath,
    recvPath: logPath + ".recv",
    proc,
    logText,
    logLines: () => logText().split("\n").filter((line) => line.length > 0),
    injectKey(code: number) {
      fs.appendFileSync(pipePath, `key 0x${code.toString(16)}\n`);
    },
    stop: () =>
      new Promise<void>((resolve) => {
        if (proc.exitCode !== null) {
          resolve();
          return;
        }
        proc.once("exit", () => resolve());
        proc.kill("SIGTERM");
      }),
  };
}

export interface ProxyHandle {
  port: number;
  address: string;
  /** Every chunk the client sent toward the server, in order. */
  captured: Buffer[];
  capturedHex(): string;
  close(): Promise<void>;
}

/** TCP proxy that records the client-to-server byte stream. */
export async function startRecordingProxy(targetPort: number): Promise<ProxyHandle> {
  const captured: Buffer[] = [];
  const sockets = new Set<net.Socket>();

  const server = net.createServer((client) => {
    const upstream = net.connect(targetPort, "127.0.0.1");
    sockets.add(client).add(upstream);
    client.on("data", (data) => {
      captured.push(data);
      upstream.write(data);
    });
    upstream.on("data", (data) => client.write(data));
    client.on("close", () => upstream.destroy());
    upstream.on("close", () => client.destroy());
    client.on("error", () => upstream.destroy());
    upstream.on("error", () => client.destroy());
  });

  const port = await new Promise<number>((resolve) => {
    server.listen(0, "127.0.0.1", () => {
      resolve((server.address() as net.AddressInfo).port);
    });
  });

  return {
    port,
    address: `tcp:127.0.0.1:${port}`,
    captured,
    capturedHex: () => Buffer.concat(captured).toString("hex"),
    close: () =>
      new Promise<void>((resolve) => {
        for (const socket of sockets) socket.destroy();
        server.close(() => resolve());
      }),
  };
}

/** Run a short Python program against the installed primary package. */
export function runPython(
  code: string,
  args: string[] = [],
  input?: string,
): Promise<{ status: number; stdout: string; stderr: string }> {
  return new Promise((resolve) => {
    const proc = spawn(PYTHON, ["-c", code, ...args], {
      stdio: ["pipe", "pipe", "pipe"],
    });
    let stdout = "";
    let stderr = "";
    proc.stdout.on("data", (chunk: Buffer) => (stdout += chunk.toString()));
    proc.stderr.on("data", (chunk: Buffer) => (stderr += chunk.toString()));
    if (input !== undefined) proc.stdin.write(input);
    proc.stdin.end();
    proc.once("exit", (status) => resolve({ status: status ?? -1, stdout, stderr }));
  });
}

export function runTool(
  tool: string,
  args: string[],
): Promise<{ status: number; stdout: string; stderr: string }> {
  return new Promise((resolve) => {
    const proc = spawn(PYTHON, ["-m", `braillemux.tools.${tool}`, ...args], {
      stdio: ["ignore", "pipe", "pipe"],
    });
    let stdout = "";
    let stderr = "";
    proc.stdout.on("data", (chunk: Buffer) => (stdout += chunk.toString()));
    proc.stderr.on("data", (chunk: Buffer) => (stderr += chunk.toString()));
    proc.once("exit", (status) => resolve({ status: status ?? -1, stdout, stderr }));
  });
}

export async function waitFor(
  predicate: () => boolean,
  timeoutMs = 5000,
  stepMs = 10,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (predicate()) return;
    await new Promise((resolve) => setTimeout(resolve, stepMs));
  }
  if (!predicate()) throw new Error("condition not met in time");
}
