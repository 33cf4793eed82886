import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node", // DOM tests opt into happy-dom per file
    include: ["tests/**/*.test.ts"],
    testTimeout: 30_000,
    hookTimeout: 30_000,
  },
});
