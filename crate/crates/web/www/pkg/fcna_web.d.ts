/* tslint:disable */
/* eslint-disable */

/**
 * Desk network trained on random crops of in-memory synthetic images.
 */
export class Trainer {
    free(): void;
    [Symbol.dispose](): void;
    constructor(side: number, seed: bigint);
    /**
     * Class probabilities for an unseen image of `class`.
     */
    predict(_class: number, index: number): Float32Array;
    /**
     * Side-by-side RGBA overlay (`2·side × side`) of guided backprop for `target`.
     */
    saliency(_class: number, index: number, target: number): Uint8Array;
    side(): number;
    steps(): number;
    /**
     * Runs `n` steps of batch 8 and returns the last loss.
     */
    train(n: number): number;
}

export function describe_class(_class: number, side: number): string;

/**
 * One line per convolution with its output size, then the parameter count.
 */
export function shape_trace(preset: string, input: number, crop: number, width: number): string;

/**
 * RGBA pixels of one synthetic image, `side × side`.
 */
export function synth_preview(_class: number, index: number, side: number, seed: bigint): Uint8Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_trainer_free: (a: number, b: number) => void;
    readonly describe_class: (a: number, b: number) => [number, number];
    readonly shape_trace: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly synth_preview: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly trainer_new: (a: number, b: bigint) => [number, number, number];
    readonly trainer_predict: (a: number, b: number, c: number) => [number, number, number, number];
    readonly trainer_saliency: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly trainer_side: (a: number) => number;
    readonly trainer_steps: (a: number) => number;
    readonly trainer_train: (a: number, b: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
