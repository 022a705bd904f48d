/** Binding options; validation mirrors the engine's run configuration 1:1. */

export type ExecutionMode = "sequential" | "parallel" | "cals";

export interface CpCalsOptions {
  /** Fit-improvement threshold for convergence; must be > 0. */
  tol?: number;
  /** Per-instance iteration cap; >= 1. */
  maxIterations?: number;
  /** Multi-matrix column capacity; >= the largest requested rank. */
  rStar?: number;
  mode?: ExecutionMode;
  /** Kernel/instance threads; >= 1. */
  threads?: number;
  lineSearch?: boolean;
  /** Constant extrapolation factor (> 1); omit for the cube-root rule. */
  lineSearchAlpha?: number;
  nonNegativity?: boolean;
  /** Seeds the starting points; one seed fixes the whole run. */
  seed?: number;
  /** Single-threaded kernels and FIFO scheduling for exact reruns. */
  deterministic?: boolean;
  /** Load factor matrices into the results (default true). */
  withFactors?: boolean;
  /** Engine executable; defaults to $CALS_CLI, then "cals" on PATH. */
  cli?: string;
}

export const DEFAULT_R_STAR = 4200;

const MODES: ExecutionMode[] = ["sequential", "parallel", "cals"];

export interface ResolvedOptions {
  tol: number;
  maxIterations: number;
  rStar: number;
  mode: ExecutionMode;
  threads: number;
  lineSearch: boolean;
  lineSearchAlpha?: number;
  nonNegativity: boolean;
  seed: number;
  deterministic: boolean;
  withFactors: boolean;
  cli: string;
}

export function resolveOptions(
  ranks: number[],
  options: CpCalsOptions = {}
): ResolvedOptions {
  if (ranks.length === 0 || ranks.some((r) => !Number.isInteger(r) || r < 1)) {
    throw new Error("ranks must be a nonempty list of positive integers");
  }
  const resolved: ResolvedOptions = {
    tol: options.tol ?? 1e-6,
    maxIterations: options.maxIterations ?? 1000,
    rStar: options.rStar ?? DEFAULT_R_STAR,
    mode: options.mode ?? "cals",
    threads: options.threads ?? 1,
    lineSearch: options.lineSearch ?? false,
    lineSearchAlpha: options.lineSearchAlpha,
    nonNegativity: options.nonNegativity ?? false,
    seed: options.seed ?? 0,
    deterministic: options.deterministic ?? false,
    withFactors: options.withFactors ?? true,
    cli: options.cli ?? process.env.CALS_CLI ?? "cals",
  };
  if (!(resolved.tol > 0)) throw new Error("tol must be positive");
  if (!Number.isInteger(resolved.maxIterations) || resolved.maxIterations < 1) {
    throw new Error("maxIterations must be >= 1");
  }
  if (resolved.rStar < Math.max(...ranks)) {
    throw new Error(
      `rStar ${resolved.rStar} is smaller than the largest rank ` +
        `${Math.max(...ranks)}`
    );
  }
  if (!MODES.includes(resolved.mode)) {
    throw new Error(`mode must be one of ${MODES.join(", ")}`);
  }
  if (!Number.isInteger(resolved.threads) || resolved.threads < 1) {
    throw new Error("threads must be >= 1");
  }
  if (resolved.lineSearchAlpha !== undefined && !(resolved.lineSearchAlpha > 1)) {
    throw new Error("lineSearchAlpha must be > 1");
  }
  return resolved;
}
