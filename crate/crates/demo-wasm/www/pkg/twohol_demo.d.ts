/* tslint:disable */
/* eslint-disable */

/**
 * Moves cell `(a, b)` of the annulus mesh to `chart` and compares the glued elements.
 */
export function annulus_reassign(steps: number, a: number, b: number, chart: number): string;

/**
 * `H_{A,B}` of an `INNER(2)` connection of strength `k` on a warped square, at doubling step counts.
 */
export function local_holonomy(k: number, levels: number): string;

/**
 * Glues the two-chart sphere gerbe with flux `2πn`.
 */
export function sphere_flux(n: number, steps: number, mesh: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly annulus_reassign: (a: number, b: number, c: number, d: number) => [number, number];
    readonly local_holonomy: (a: number, b: number) => [number, number];
    readonly sphere_flux: (a: number, b: number, c: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
