/* tslint:disable */
/* eslint-disable */

export function cost_curve(c_small: number, c_large: number, samples: number): string;

/**
 * The tree with `N: ` line prefixes, as the retriever sees it.
 */
export function numbered(axtree: string): string;

/**
 * Prunes `axtree` to the line ranges found in `answer` (a model reply or a
 * bare list such as `[(1,3), (8,9)]`). `mode` is `remove` or `structure`.
 */
export function prune(axtree: string, answer: string, mode: string): string;

export function truncate(axtree: string, budget: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly cost_curve: (a: number, b: number, c: number) => [number, number];
    readonly numbered: (a: number, b: number) => [number, number];
    readonly prune: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly truncate: (a: number, b: number, c: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
