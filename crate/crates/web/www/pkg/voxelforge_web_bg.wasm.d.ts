/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_registrationdemo_free: (a: number, b: number) => void;
export const builtin_tables_json: () => [number, number];
export const fill_holes_2d: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const registrationdemo_after_rgba: (a: number) => [number, number];
export const registrationdemo_before_rgba: (a: number) => [number, number];
export const registrationdemo_edge: (a: number) => number;
export const registrationdemo_error: (a: number) => [number, number];
export const registrationdemo_found: (a: number) => [number, number];
export const registrationdemo_mi_trace: (a: number) => [number, number];
export const registrationdemo_new: (a: number, b: number, c: number) => number;
export const registrationdemo_truth: (a: number) => [number, number];
export const verify_shape_tables: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
