/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_stimulus_free: (a: number, b: number) => void;
export const __wbg_trace_free: (a: number, b: number) => void;
export const cabc: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const pathfinder: (a: number, b: number, c: number, d: number) => [number, number, number];
export const stimulus_info: (a: number) => [number, number];
export const stimulus_pixels: (a: number) => [number, number];
export const stimulus_rgba: (a: number) => [number, number];
export const stimulus_size: (a: number) => number;
export const trace: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number];
export const trace_logit: (a: number) => number;
export const trace_max_abs: (a: number) => number;
export const trace_panel_count: (a: number) => number;
export const trace_panel_rgba: (a: number, b: number) => [number, number];
export const trace_size: (a: number) => number;
export const trace_values: (a: number, b: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
