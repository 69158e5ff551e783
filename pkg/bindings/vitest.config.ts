import { defineConfig } from "vitest/config";

// Parity tests shell out to the native CLI repeatedly; give them room.
export default defineConfig({
  test: {
    testTimeout: 180_000,
    hookTimeout: 60_000,
  },
});
