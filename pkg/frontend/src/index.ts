/**
 * TypeScript bindings for the weft inference runtime.
 *
 * The bindings hold no numerical code: every operation shells out to the
 * weft CLI and exchanges tensors through its documented file formats, so any
 * numeric output is produced by exactly the same code path as the CLI.
 * Errors surface as (exit code, stderr diagnostic) pairs.
 */

import { execFile } from "node:child_process";
import { mkdtemp, readFile, rm, writeFile } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { promisify } from "node:util";

const execFileAsync = promisify(execFile);

/** Exit codes mirrored from the CLI contract. */
export enum ExitCode {
  Ok = 0,
  Usage = 1,
  Parse = 2,
  Unsupported = 3,
  Mismatch = 4,
  Io = 5,
}

export class WeftError extends Error {
  constructor(
    public readonly code: number,
    message: string,
  ) {
    super(message);
    this.name = "WeftError";
  }
}

export interface TensorData {
  shape: number[];
  data: Float32Array;
}

export interface GraphInfo {
  name: string;
  nodeCount: number;
  inputs: { name: string; shape?: number[] }[];
  outputs: string[];
  shapes?: Record<string, number[]>;
}

export interface LoadOptions {
  simplify?: boolean;
  threads?: number;
  /** CLI invocation, default ["weft"]; override e.g. ["python3", "-m", "weft.cli"]. */
  command?: string[];
}

export interface RunOptions {
  backends?: Record<string, string>;
  autotune?: boolean;
}

export interface BenchOptions extends RunOptions {
  warmup?: number;
  reps?: number;
  perLayer?: boolean;
  isolateLayers?: boolean;
  seed?: number;
}

export interface BenchRecord {
  layer: string;
  op: string;
  backend: string;
  reps: number;
  min_ns: number;
  median_ns: number;
  mean_ns: number;
  std_ns: number;
}

export interface BenchReport {
  model: string;
  config: Record<string, unknown>;
  records: BenchRecord[];
}

const DEFAULT_COMMAND = process.env.WEFT_BIN ? [process.env.WEFT_BIN] : ["weft"];

async function cli(command: string[], args: string[]): Promise<string> {
  const [bin, ...prefix] = command;
  try {
    const { stdout } = await execFileAsync(bin, [...prefix, ...args], {
      maxBuffer: 64 * 1024 * 1024,
    });
    return stdout;
  } catch (err) {
    const e = err as NodeJS.ErrnoException & { code?: unknown; stderr?: string };
    if (typeof e.code === "number") {
      const detail = (e.stderr ?? "").trim() || `exit code ${e.code}`;
      throw new WeftError(e.code, detail);
    }
    throw new WeftError(ExitCode.Io, `failed to invoke ${bin}: ${String(err)}`);
  }
}

function toFloat32(buf: Buffer): Float32Array {
  const out = new Float32Array(buf.byteLength / 4);
  for (let i = 0; i < out.length; i++) out[i] = buf.readFloatLE(i * 4);
  return out;
}

function fromFloat32(arr: Float32Array): Buffer {
  const buf = Buffer.allocUnsafe(arr.length * 4);
  for (let i = 0; i < arr.length; i++) buf.writeFloatLE(arr[i], i * 4);
  return buf;
}

function numel(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

/** Version string of the underlying runtime, e.g. "weft 0.1.0". */
export async function version(command: string[] = DEFAULT_COMMAND): Promise<string> {
  return (await cli(command, ["--version"])).trim();
}

export class ModelHandle {
  private closed = false;
  private simplified: boolean;
  private info!: GraphInfo;

  private constructor(
    public readonly path: string,
    private readonly command: string[],
    private readonly threads: number,
    simplify: boolean,
  ) {
    this.simplified = simplify;
  }

  static async open(path: string, opts: LoadOptions = {}): Promise<ModelHandle> {
    const handle = new ModelHandle(
      path,
      opts.command ?? DEFAULT_COMMAND,
      opts.threads ?? 1,
      opts.simplify ?? true,
    );
    await handle.refresh();
    return handle;
  }

  private passesFlag(): string[] {
    return ["--passes", this.simplified ? "default" : "none"];
  }

  private ensureOpen(): void {
    if (this.closed) throw new WeftError(ExitCode.Usage, "handle is closed");
  }

  private async refresh(): Promise<void> {
    const out = await cli(this.command, [
      "inspect", "--model", this.path, "--format", "json", ...this.passesFlag(),
    ]);
    const doc = JSON.parse(out);
    this.info = {
      name: doc.name,
      nodeCount: doc.node_count,
      inputs: doc.inputs,
      outputs: doc.outputs,
      shapes: doc.shapes,
    };
  }

  get nodeCount(): number {
    this.ensureOpen();
    return this.info.nodeCount;
  }

  get graph(): GraphInfo {
    this.ensureOpen();
    return this.info;
  }

  /** Enable the default simplification pipeline on an unsimplified handle. */
  async simplify(): Promise<void> {
    this.ensureOpen();
    if (!this.simplified) {
      this.simplified = true;
      await this.refresh();
    }
  }

  private runArgs(opts: RunOptions): string[] {
    const args = ["--threads", String(this.threads), ...this.passesFlag()];
    for (const [key, backend] of Object.entries(opts.backends ?? {})) {
      args.push("--backend", `${key}=${backend}`);
    }
    if (opts.autotune) args.push("--autotune");
    return args;
  }

  /** Execute on one named input; outputs are bitwise identical to `weft run`. */
  async run(
    inputs: Record<string, TensorData>,
    opts: RunOptions = {},
  ): Promise<Record<string, TensorData>> {
    this.ensureOpen();
    const names = Object.keys(inputs);
    const expected = this.info.inputs.map((i) => i.name);
    if (names.length !== expected.length || names.some((n) => !expected.includes(n))) {
      throw new WeftError(
        ExitCode.Usage,
        `model expects inputs [${expected.join(", ")}], got [${names.join(", ")}]`,
      );
    }
    const [name] = names;
    const tensor = inputs[name];
    if (tensor.data.length !== numel(tensor.shape)) {
      throw new WeftError(
        ExitCode.Usage,
        `input '${name}': ${tensor.data.length} values do not fill shape ` +
          `[${tensor.shape.join(", ")}]`,
      );
    }

    const dir = await mkdtemp(join(tmpdir(), "weft-"));
    try {
      const inPath = join(dir, "input.bin");
      const outPath = join(dir, "output.json");
      await writeFile(inPath, fromFloat32(tensor.data));
      await cli(this.command, [
        "run", "--model", this.path,
        "--input", inPath, "--input-shape", tensor.shape.join("x"),
        "--out", outPath,
        ...this.runArgs(opts),
      ]);
      const doc = JSON.parse(await readFile(outPath, "utf-8"));
      return {
        [this.info.outputs[0]]: {
          shape: doc.shape,
          data: Float32Array.from(doc.data as number[]),
        },
      };
    } finally {
      await rm(dir, { recursive: true, force: true });
    }
  }

  /** Time the network (and each layer when perLayer) through `weft bench`. */
  async bench(
    input: Record<string, TensorData> | null = null,
    opts: BenchOptions = {},
  ): Promise<BenchReport> {
    this.ensureOpen();
    const args = [
      "bench", "--model", this.path, "--format", "json",
      "--warmup", String(opts.warmup ?? 1),
      "--reps", String(opts.reps ?? 10),
      ...this.runArgs(opts),
    ];
    if (opts.perLayer) args.push("--per-layer");
    if (opts.isolateLayers) args.push("--isolate-layers");
    if (opts.seed !== undefined) args.push("--seed", String(opts.seed));

    const dir = await mkdtemp(join(tmpdir(), "weft-"));
    try {
      if (input) {
        const [name] = Object.keys(input);
        const tensor = input[name];
        const inPath = join(dir, "input.bin");
        await writeFile(inPath, fromFloat32(tensor.data));
        args.push("--input", inPath, "--input-shape", tensor.shape.join("x"));
      }
      return JSON.parse(await cli(this.command, args)) as BenchReport;
    } finally {
      await rm(dir, { recursive: true, force: true });
    }
  }

  close(): void {
    this.closed = true;
  }
}

/** Load and validate a model; the handle drives the CLI for every operation. */
export async function load(path: string, opts: LoadOptions = {}): Promise<ModelHandle> {
  return ModelHandle.open(path, opts);
}

export { toFloat32, fromFloat32 };
