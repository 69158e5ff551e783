/** Must match the native library version the bindings drive. */
export const VERSION = "0.1.0";
