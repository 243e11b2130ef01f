// Wire types for the reward scoring service (POST /v1/score).

export interface SparseRowWire {
  top: [number, number][];
  tail_mass: number;
}

export type DistributionRow = number[] | SparseRowWire;

export interface TokenDistributionWire {
  vocab_size: number;
  rows: DistributionRow[];
}

export interface ScoreItem {
  response_text: string;
  ground_truth: Record<string, unknown> | string;
  token_distribution?: TokenDistributionWire;
  rationale_span?: [number, number];
}

export interface RewardBreakdown {
  r_format: number;
  self_certainty: number;
  self_certainty_available: boolean;
  r_type: number;
  r_subaction: number;
  dars: number;
  total: number;
}

export interface ScoreDiagnostics {
  parse_bucket: string;
  type_matched: boolean;
  matched_components: string[];
}

/** One scored item: either a breakdown or the service's item-level error. */
export type ItemOutcome =
  | { index: number; ok: true; breakdown: RewardBreakdown; diagnostics: ScoreDiagnostics }
  | { index: number; ok: false; error: string };

export interface HealthInfo {
  status: string;
  version: string;
  config_digest: string;
}

/** Weight-only overrides accepted by the service per request. */
export type ConfigOverrides = Partial<
  Record<"r_format_value" | "r_type_value" | "w_click_type" | "w_name" | "w_text" | "dars", number>
>;

export interface ClientConfig {
  baseUrl: string;
  /** Per-request timeout. Default 30s. */
  timeoutMs?: number;
  /** Extra attempts after the first. Retries happen only on transport
   *  errors and 5xx responses, never on 4xx. Default 3. */
  maxRetries?: number;
  /** Base backoff delay, doubled per retry. Default 250ms. */
  retryDelayMs?: number;
  /** Bound on concurrently submitted batches. Default 4. */
  maxInFlight?: number;
}
