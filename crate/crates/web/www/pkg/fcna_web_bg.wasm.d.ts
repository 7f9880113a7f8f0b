/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_trainer_free: (a: number, b: number) => void;
export const describe_class: (a: number, b: number) => [number, number];
export const shape_trace: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const synth_preview: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
export const trainer_new: (a: number, b: bigint) => [number, number, number];
export const trainer_predict: (a: number, b: number, c: number) => [number, number, number, number];
export const trainer_saliency: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const trainer_side: (a: number) => number;
export const trainer_steps: (a: number) => number;
export const trainer_train: (a: number, b: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
