/** Typed client for the tripcast gateway. The fetch function is injectable
 * so tests can run against recorded fixtures. */

import type {
  ForecastResponse, NetworkResponse, StateResponse, StepRequest, StepResponse,
  WhatIfRequest, WhatIfResponse,
} from "./types.js";

export class WarmUpError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "WarmUpError";
  }
}

export class GatewayError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "GatewayError";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class GatewayClient {
  constructor(private baseUrl: string, private fetchFn: FetchLike = fetch) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, init);
    const body = await res.json();
    if (res.status === 409) {
      throw new WarmUpError(body.error ?? "warm-up not complete");
    }
    if (!res.ok) {
      throw new GatewayError(res.status, body.error ?? `HTTP ${res.status}`);
    }
    return body as T;
  }

  network(): Promise<NetworkResponse> {
    return this.request<NetworkResponse>("/network");
  }

  state(): Promise<StateResponse> {
    return this.request<StateResponse>("/state");
  }

  forecast(): Promise<ForecastResponse> {
    return this.request<ForecastResponse>("/forecast");
  }

  step(observation: StepRequest): Promise<StepResponse> {
    return this.request<StepResponse>("/step", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(observation),
    });
  }

  whatif(request: WhatIfRequest): Promise<WhatIfResponse> {
    return this.request<WhatIfResponse>("/whatif", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(request),
    });
  }
}
