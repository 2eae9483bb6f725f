/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const annulus_reassign: (a: number, b: number, c: number, d: number) => [number, number];
export const local_holonomy: (a: number, b: number) => [number, number];
export const sphere_flux: (a: number, b: number, c: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
