/* tslint:disable */
/* eslint-disable */

export class Stimulus {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Grayscale, one byte per pixel.
     */
    pixels(): Uint8Array;
    /**
     * RGBA bytes ready for `ImageData`.
     */
    rgba(): Uint8Array;
    /**
     * Label and sampled parameters as JSON.
     */
    readonly info: string;
    readonly size: number;
}

export class Trace {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Panel `k` as RGBA: blue for shrinking, red for growing state norm.
     */
    panel_rgba(k: number): Uint8Array;
    /**
     * Raw per-pixel change of the state norm between steps `k` and `k + 1`.
     */
    values(k: number): Float64Array;
    readonly logit: number;
    /**
     * Largest absolute change over all panels; the colour scale's end.
     */
    readonly max_abs: number;
    readonly panel_count: number;
    readonly size: number;
}

/**
 * One cABC image. `index` parity sets the label: even indices are "same".
 */
export function cabc(difficulty: string, control: string, size: number, seed: number, index: number): Stimulus;

/**
 * One Pathfinder image with `length`-dash paths.
 */
export function pathfinder(length: number, size: number, seed: number, index: number): Stimulus;

/**
 * Unrolls a randomly initialized model of the given variant on a grayscale
 * image and returns the per-step change of its low-level state norm.
 */
export function trace(pixels: Uint8Array, size: number, variant: string, timesteps: number, seed: number): Trace;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_stimulus_free: (a: number, b: number) => void;
    readonly __wbg_trace_free: (a: number, b: number) => void;
    readonly cabc: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly pathfinder: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly stimulus_info: (a: number) => [number, number];
    readonly stimulus_pixels: (a: number) => [number, number];
    readonly stimulus_rgba: (a: number) => [number, number];
    readonly stimulus_size: (a: number) => number;
    readonly trace: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
    readonly trace_logit: (a: number) => number;
    readonly trace_max_abs: (a: number) => number;
    readonly trace_panel_count: (a: number) => number;
    readonly trace_panel_rgba: (a: number, b: number) => [number, number];
    readonly trace_size: (a: number) => number;
    readonly trace_values: (a: number, b: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
