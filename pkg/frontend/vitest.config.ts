import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    globals: true,
    environment: "node",
    include: ["tests/**/*.test.ts"],
    // The live workflow test drives a real acquisition server.
    testTimeout: 120_000,
    hookTimeout: 60_000,
  },
});
