/* tslint:disable */
/* eslint-disable */

export class RegistrationDemo {
    free(): void;
    [Symbol.dispose](): void;
    after_rgba(): Uint8Array;
    /**
     * RGBA of the middle axial slice before registration.
     */
    before_rgba(): Uint8Array;
    edge(): number;
    /**
     * Residual `[mm at the center, degrees]` between found and true motion.
     */
    error(): Float64Array;
    /**
     * `[rx, ry, rz]` in degrees followed by `[tx, ty, tz]` in mm.
     */
    found(): Float64Array;
    /**
     * MI after every accepted search step.
     */
    mi_trace(): Float64Array;
    /**
     * Misaligns a synthetic volume by `shift_mm` along x and `angle_deg`
     * in the axial plane, remaps its contrast, then registers it back.
     */
    constructor(shift_mm: number, angle_deg: number, seed: number);
    truth(): Float64Array;
}

/**
 * The bundled tables, for prefilling the editor.
 */
export function builtin_tables_json(): string;

export function fill_holes_2d(mask: Uint8Array, height: number, width: number): Uint8Array;

export function verify_shape_tables(json: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_registrationdemo_free: (a: number, b: number) => void;
    readonly builtin_tables_json: () => [number, number];
    readonly fill_holes_2d: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly registrationdemo_after_rgba: (a: number) => [number, number];
    readonly registrationdemo_before_rgba: (a: number) => [number, number];
    readonly registrationdemo_edge: (a: number) => number;
    readonly registrationdemo_error: (a: number) => [number, number];
    readonly registrationdemo_found: (a: number) => [number, number];
    readonly registrationdemo_mi_trace: (a: number) => [number, number];
    readonly registrationdemo_new: (a: number, b: number, c: number) => number;
    readonly registrationdemo_truth: (a: number) => [number, number];
    readonly verify_shape_tables: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
