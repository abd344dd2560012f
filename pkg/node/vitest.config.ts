import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    // Parity tests shell out to the occ4d CLI several times per case.
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
