/* tslint:disable */
/* eslint-disable */

/**
 * Certified level for the given probability bounds, with the ratio
 * `C(n-m,k)/C(n,k)` and the certification condition for each `m`.
 */
export function certified_level(n: number, k: number, p_lower: number, p_upper: number): string;

/**
 * Monte Carlo certificate from `count` of `total` sampled votes for the top
 * label, with the failure budget split over `d` test examples.
 */
export function monte_carlo_certificate(n: number, k: number, count: bigint, total: bigint, alpha: number, d: number): string;

/**
 * Simulated certified-accuracy curve: each of `d` examples has a true-label
 * vote probability drawn uniformly from `[p_min, p_max]`, `total` votes are
 * sampled, the rest go to one wrong label, and the examples are certified
 * at `alpha`. Returns `m,certified_accuracy` CSV.
 */
export function simulate_curve(n: number, k: number, total: bigint, alpha: number, d: number, p_min: number, p_max: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly certified_level: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly monte_carlo_certificate: (a: number, b: number, c: bigint, d: bigint, e: number, f: number) => [number, number, number, number];
    readonly simulate_curve: (a: number, b: number, c: bigint, d: number, e: number, f: number, g: number, h: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
