/* tslint:disable */
/* eslint-disable */

/**
 * Optimal middle phase and leakage over a range of Rabi ratios (kHz).
 */
export function composite_scan(rabi_t0: number, detuning: number, ratio_min: number, ratio_max: number, steps: number): string;

/**
 * Grover histograms for all four marked states.
 */
export function grover(werner_p: number, local_cz: number, shots: number, seed: number): string;

/**
 * Process matrix of the teleported CZ for a Werner weight and local CZ
 * depolarizing probability; everything else calibrated.
 */
export function teleported_cz_chi(werner_p: number, local_cz: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly composite_scan: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly grover: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly teleported_cz_chi: (a: number, b: number, c: number) => [number, number, number, number];
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
