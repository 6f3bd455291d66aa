/* tslint:disable */
/* eslint-disable */

/**
 * Adam and EVE side by side with a shared learning rate, as JSON
 * `{"adam": trajectory, "eve": trajectory}`.
 */
export function adam_vs_eve(steps: number, lr: number, scale: number, noise: number): string;

/**
 * Per-node parameter table for a preset and variant, as JSON
 * `{"total": n, "nodes": [[name, n], ...], "variants": {"ircnn": n, ...}}`.
 */
export function param_table(preset: string, variant: string): string;

/**
 * Runs a one-channel 3x3 RCL over a `size x size` image and returns the
 * activations of every step, concatenated: `(steps + 1) * size * size`
 * values, step 0 first.
 *
 * The feedforward kernel is an edge detector; `w_r` is the centre tap of a
 * recurrent kernel whose other taps are `w_r / 8`, so larger values spread
 * activity to neighbours on each step.
 */
export function rcl_unroll(image: Float32Array, size: number, steps: number, w_r: number, bias: number): Float32Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly adam_vs_eve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly param_table: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly rcl_unroll: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
