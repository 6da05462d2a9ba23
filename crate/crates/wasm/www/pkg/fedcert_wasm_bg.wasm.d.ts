/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const certified_level: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const monte_carlo_certificate: (a: number, b: number, c: bigint, d: bigint, e: number, f: number) => [number, number, number, number];
export const simulate_curve: (a: number, b: number, c: bigint, d: number, e: number, f: number, g: number, h: bigint) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
