import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    globalSetup: "./test/global-setup.ts",
    testTimeout: 20000,
    hookTimeout: 60000,
    // one live backend; sessions are cheap but keep runs serial for clarity
    fileParallelism: false,
  },
});
