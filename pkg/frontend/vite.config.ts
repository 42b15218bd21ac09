/// <reference types="vitest/config" />
import react from "@vitejs/plugin-react";
import { defineConfig } from "vite";

export default defineConfig({
  plugins: [react()],
  server: {
    proxy: {
      "/sessions": "http://127.0.0.1:8000",
      "/cases": "http://127.0.0.1:8000",
      "/metrics": "http://127.0.0.1:8000",
      "/progress": "http://127.0.0.1:8000",
      "/images": "http://127.0.0.1:8000",
    },
  },
  test: {
    environment: "jsdom",
    globals: true,
    setupFiles: "./src/test/setup.ts",
  },
});
