/** Browser bootstrap: configuration is a service base URL and a vetter id. */

import { ConsoleApi, type FetchLike } from "./api.js";
import { VettingConsole } from "./console.js";

interface ConsoleConfig {
  baseUrl?: string;
  vetterId?: string;
}

declare global {
  interface Window {
    DERMATRIAGE_CONSOLE?: ConsoleConfig;
  }
}

export function bootstrap(root: HTMLElement): VettingConsole {
  const params = new URLSearchParams(window.location.search);
  const config = window.DERMATRIAGE_CONSOLE ?? {};
  const baseUrl = params.get("service") ?? config.baseUrl ?? "http://127.0.0.1:8081";
  const vetterId = params.get("vetter") ?? config.vetterId ?? "";
  if (!vetterId) {
    root.innerHTML =
      '<p class="config-error">Set a vetter id (?vetter=dr-name or window.DERMATRIAGE_CONSOLE.vetterId).</p>';
    throw new Error("vetter id not configured");
  }
  const api = new ConsoleApi(baseUrl, fetch.bind(window) as FetchLike);
  const console_ = new VettingConsole(root, api, { vetterId });
  void console_.refresh();
  return console_;
}

const mount = typeof document !== "undefined" ? document.getElementById("app") : null;
if (mount) {
  bootstrap(mount);
}
