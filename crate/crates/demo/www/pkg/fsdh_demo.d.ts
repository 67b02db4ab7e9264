/* tslint:disable */
/* eslint-disable */

/**
 * FSDH trained on 2-D Gaussian blobs, queried by clicking the plane.
 */
export class Playground {
    free(): void;
    [Symbol.dispose](): void;
    bits(): number;
    /**
     * Code of `(x, y)` as a string of 0/1, first bit first.
     */
    code_string(x: number, y: number): string;
    labels(): Uint32Array;
    neighbors(x: number, y: number, radius: number): Uint32Array;
    constructor(classes: number, per_class: number, spread: number, bits: number, anchors: number, sigma: number, seed: bigint);
    /**
     * Interleaved `x, y` coordinates.
     */
    points(): Float64Array;
    regions(x0: number, y0: number, x1: number, y1: number, cols: number, rows: number): Uint8Array;
}

export function class_codes(bits: number, classes: number): Int8Array;

export function sdh_traces(bits: number, classes: number, lambda: number, iters: number, seeds: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_playground_free: (a: number, b: number) => void;
    readonly class_codes: (a: number, b: number) => [number, number, number, number];
    readonly playground_bits: (a: number) => number;
    readonly playground_code_string: (a: number, b: number, c: number) => [number, number, number, number];
    readonly playground_labels: (a: number) => [number, number];
    readonly playground_neighbors: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly playground_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
    readonly playground_points: (a: number) => [number, number];
    readonly playground_regions: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly sdh_traces: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
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
