/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_playground_free: (a: number, b: number) => void;
export const class_codes: (a: number, b: number) => [number, number, number, number];
export const playground_bits: (a: number) => number;
export const playground_code_string: (a: number, b: number, c: number) => [number, number, number, number];
export const playground_labels: (a: number) => [number, number];
export const playground_neighbors: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const playground_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
export const playground_points: (a: number) => [number, number];
export const playground_regions: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const sdh_traces: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
