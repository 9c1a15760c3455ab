import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

const here = dirname(fileURLToPath(import.meta.url));

export interface Recorded<T> {
  status: number;
  body: T;
}

export function fixture<T>(name: string): Recorded<T> {
  const raw = readFileSync(join(here, "..", "fixtures", name), "utf-8");
  return JSON.parse(raw) as Recorded<T>;
}

/** fetch stand-in serving recorded responses keyed by "METHOD path". */
export function fixtureFetch(routes: Record<string, Recorded<unknown>>) {
  const calls: { url: string; init?: RequestInit }[] = [];
  const fetchFn = async (url: string, init?: RequestInit): Promise<Response> => {
    calls.push({ url, init });
    const method = init?.method ?? "GET";
    const path = new URL(url, "http://fixture").pathname;
    const recorded = routes[`${method} ${path}`];
    if (!recorded) {
      throw new Error(`no fixture for ${method} ${path}`);
    }
    return new Response(JSON.stringify(recorded.body), {
      status: recorded.status,
      headers: { "content-type": "application/json" },
    });
  };
  return { fetchFn, calls };
}
