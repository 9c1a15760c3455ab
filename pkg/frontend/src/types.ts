/** Gateway response shapes (schema_version "1"). */

export interface NetworkNode {
  id: number;
  kind: string;
  length: number;
  capacity: number;
  free_speed: number;
  centroid: [number, number];
}

export interface NetworkResponse {
  schema_version: string;
  nodes: NetworkNode[];
  edges: [number, number][];
}

export interface StateResponse {
  schema_version: string;
  cursor: number;
  buffered: number;
  warm_up_needed: number;
  model_version: number;
  online: boolean;
  phi: number;
  updates: number[];
  current_volumes: number[] | null;
}

export interface ForecastResponse {
  schema_version: string;
  model_version: number;
  generated_at: number;
  horizons: number;
  forecast: number[][];
}

export interface WhatIfEvent {
  segment: number;
  capacity_factor: number;
}

export interface WhatIfRequest {
  events: WhatIfEvent[];
  horizons?: number;
}

export interface WhatIfResponse {
  schema_version: string;
  model_version: number;
  generated_at: number;
  events: WhatIfEvent[];
  baseline: number[][];
  whatif: number[][];
}

export interface StepRequest {
  volumes: number[];
  speeds: number[];
  demands: { origin: number; destination: number; count: number }[];
}

export interface StepResponse {
  schema_version: string;
  t: number;
  model_version: number;
  hindcast: number[][];
  hindcast_intervals: number[];
}

export interface WarmUpBody {
  error: string;
  warm_up: boolean;
}
