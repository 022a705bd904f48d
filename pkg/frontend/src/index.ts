/**
 * Scripting binding for the cals engine.
 *
 * Everything goes through the engine's public surfaces: the tensor is handed
 * over as a CALS1 file, the run happens in the `cals decompose` CLI, and
 * results come back as the documented JSON plus CALS1 factor matrices. For a
 * given tensor, ranks, seed and options the binding therefore returns
 * exactly what the CLI reports.
 */

import { execFile } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import { promisify } from "node:util";

import { CpCalsOptions, resolveOptions } from "./options.js";
import {
  Matrix,
  Tensor,
  readMatrixFile,
  validateTensor,
  writeTensorFile,
} from "./tensorfile.js";

export { CpCalsOptions, ExecutionMode } from "./options.js";
export {
  Matrix,
  Tensor,
  readTensorFile,
  writeTensorFile,
} from "./tensorfile.js";

const execFileAsync = promisify(execFile);

export interface FittedModel {
  id: string;
  rank: number;
  /** 1 - ||residual|| / ||tensor||; 1 is a perfect fit. */
  fit: number;
  /** Squared residual norm. */
  error: number;
  iterations: number;
  status: "converged" | "iteration_cap" | "failed" | string;
  secondsActive: number;
  /** One column-major matrix per tensor mode (omitted if withFactors=false). */
  factors?: Matrix[];
}

export class CalsCliError extends Error {
  constructor(
    message: string,
    readonly code: string | undefined,
    readonly exitCode: number | undefined
  ) {
    super(message);
    this.name = "CalsCliError";
  }
}

function parseCliFailure(err: unknown): never {
  const anyErr = err as { code?: number; stderr?: string; message?: string };
  const stderr = anyErr.stderr ?? "";
  for (const line of stderr.trim().split("\n").reverse()) {
    try {
      const doc = JSON.parse(line);
      if (doc?.error?.message) {
        throw new CalsCliError(doc.error.message, doc.error.code,
          typeof anyErr.code === "number" ? anyErr.code : undefined);
      }
    } catch (e) {
      if (e instanceof CalsCliError) throw e;
      // not a JSON line; keep scanning
    }
  }
  throw new CalsCliError(
    `cals invocation failed: ${anyErr.message ?? String(err)}`,
    undefined,
    typeof anyErr.code === "number" ? anyErr.code : undefined
  );
}

/**
 * Fit CP models of every requested rank to a dense tensor.
 *
 * `tensor.data` must hold prod(dims) float64 values with the first mode
 * fastest (column-major). A plain number array is converted; a Float64Array
 * is written out as-is. Repeat a rank to fit several starting points of
 * that rank; starting points are seeded uniform(0, 1), so (tensor, ranks,
 * seed, options) fully determines the result.
 */
export async function cpCals(
  tensor: Tensor | { dims: number[]; data: number[] },
  ranks: number[],
  options: CpCalsOptions = {}
): Promise<FittedModel[]> {
  const data =
    tensor.data instanceof Float64Array
      ? tensor.data
      : Float64Array.from(tensor.data);
  const t: Tensor = { dims: tensor.dims, data };
  validateTensor(t);
  const opts = resolveOptions(ranks, options);

  const work = fs.mkdtempSync(path.join(os.tmpdir(), "cals-binding-"));
  try {
    const tensorPath = path.join(work, "tensor.cals");
    const resultsPath = path.join(work, "results.json");
    const factorsDir = path.join(work, "factors");
    writeTensorFile(tensorPath, t);
    const args = [
      "decompose",
      "--tensor", tensorPath,
      "--ranks", ranks.join(","),
      "--per-rank", "1",
      "--mode", opts.mode,
      "--tol", String(opts.tol),
      "--max-iters", String(opts.maxIterations),
      "--r-star", String(opts.rStar),
      "--seed", String(opts.seed),
      "--threads", String(opts.threads),
      "--out", resultsPath,
      opts.lineSearch ? "--line-search" : "--no-line-search",
    ];
    if (opts.lineSearchAlpha !== undefined) {
      args.push("--ls-alpha", String(opts.lineSearchAlpha));
    }
    if (opts.nonNegativity) args.push("--non-negative");
    if (opts.deterministic) args.push("--deterministic");
    if (opts.withFactors) args.push("--factors-out", factorsDir);

    try {
      await execFileAsync(opts.cli, args, { maxBuffer: 1 << 24 });
    } catch (err) {
      parseCliFailure(err);
    }

    const doc = JSON.parse(fs.readFileSync(resultsPath, "utf8"));
    return doc.models.map((m: Record<string, unknown>): FittedModel => {
      const model: FittedModel = {
        id: m.id as string,
        rank: m.rank as number,
        fit: m.fit as number,
        error: m.error as number,
        iterations: m.iterations as number,
        status: m.status as string,
        secondsActive: m.seconds_active as number,
      };
      if (opts.withFactors && Array.isArray(m.factor_files)) {
        model.factors = (m.factor_files as string[]).map((name) =>
          readMatrixFile(path.join(factorsDir, name))
        );
      }
      return model;
    });
  } finally {
    fs.rmSync(work, { recursive: true, force: true });
  }
}

/** Engine version string, via the CLI. */
export async function version(options: CpCalsOptions = {}): Promise<string> {
  const cli = options.cli ?? process.env.CALS_CLI ?? "cals";
  try {
    const { stdout } = await execFileAsync(cli, ["--version"]);
    return stdout.trim();
  } catch (err) {
    parseCliFailure(err);
  }
}
