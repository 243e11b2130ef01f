import type {
  ClientConfig,
  ConfigOverrides,
  HealthInfo,
  ItemOutcome,
  RewardBreakdown,
  ScoreItem,
} from "./types.js";

/** Transport failure that survived every retry (service unreachable). */
export class ConnectionError extends Error {
  constructor(message: string, readonly cause?: unknown) {
    super(message);
    this.name = "ConnectionError";
  }
}

/** Non-2xx response: 4xx immediately, 5xx after retries are exhausted. */
export class ServiceError extends Error {
  constructor(readonly status: number, readonly detail: unknown) {
    super(`reward service returned ${status}: ${JSON.stringify(detail)}`);
    this.name = "ServiceError";
  }
}

/** At least one item in a batch came back as an error entry. */
export class ItemError extends Error {
  constructor(readonly failures: { index: number; error: string }[]) {
    super(`${failures.length} item(s) failed: ${failures.map((f) => `#${f.index} ${f.error}`).join("; ")}`);
    this.name = "ItemError";
  }
}

/** JSON with recursively sorted object keys, so identical logical requests
 *  produce byte-identical bodies and service determinism is observable. */
export function canonicalJson(value: unknown): string {
  if (Array.isArray(value)) {
    return `[${value.map(canonicalJson).join(",")}]`;
  }
  if (value !== null && typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .filter(([, v]) => v !== undefined)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([k, v]) => `${JSON.stringify(k)}:${canonicalJson(v)}`);
    return `{${entries.join(",")}}`;
  }
  return JSON.stringify(value);
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

/** Minimal counting semaphore bounding in-flight batches. */
class Semaphore {
  private available: number;
  private waiters: (() => void)[] = [];

  constructor(limit: number) {
    this.available = limit;
  }

  async acquire(): Promise<void> {
    if (this.available > 0) {
      this.available -= 1;
      return;
    }
    await new Promise<void>((resolve) => this.waiters.push(resolve));
  }

  release(): void {
    const next = this.waiters.shift();
    if (next) {
      next();
    } else {
      this.available += 1;
    }
  }
}

export class RewardClient {
  private readonly baseUrl: string;
  private readonly timeoutMs: number;
  private readonly maxRetries: number;
  private readonly retryDelayMs: number;
  private readonly slots: Semaphore;

  constructor(config: ClientConfig) {
    this.baseUrl = config.baseUrl.replace(/\/+$/, "");
    this.timeoutMs = config.timeoutMs ?? 30_000;
    this.maxRetries = config.maxRetries ?? 3;
    this.retryDelayMs = config.retryDelayMs ?? 250;
    this.slots = new Semaphore(Math.max(1, config.maxInFlight ?? 4));
  }

  /** Score one batch. The response preserves request order; item-level
   *  error entries are surfaced as per-item outcomes, never as a thrown
   *  batch failure. Safe to call concurrently. */
  async scoreBatch(items: ScoreItem[], overrides?: ConfigOverrides): Promise<ItemOutcome[]> {
    const payload: Record<string, unknown> = { items };
    if (overrides && Object.keys(overrides).length > 0) {
      payload.config_overrides = overrides;
    }
    const body = await this.request("/v1/score", canonicalJson(payload));
    const results = (body as { results: ItemOutcome[] }).results;
    return results.map((entry) =>
      entry.ok
        ? { index: entry.index, ok: true, breakdown: entry.breakdown, diagnostics: entry.diagnostics }
        : { index: entry.index, ok: false, error: entry.error },
    );
  }

  /** scoreBatch that throws ItemError unless every item scored cleanly. */
  async scoreBatchStrict(items: ScoreItem[], overrides?: ConfigOverrides): Promise<RewardBreakdown[]> {
    const outcomes = await this.scoreBatch(items, overrides);
    const failures = outcomes.flatMap((o) => (o.ok ? [] : [{ index: o.index, error: o.error }]));
    if (failures.length > 0) {
      throw new ItemError(failures);
    }
    return outcomes.map((o) => (o as Extract<ItemOutcome, { ok: true }>).breakdown);
  }

  async health(): Promise<HealthInfo> {
    const response = await fetch(`${this.baseUrl}/healthz`, {
      signal: AbortSignal.timeout(this.timeoutMs),
    });
    if (!response.ok) {
      throw new ServiceError(response.status, await response.text());
    }
    return (await response.json()) as HealthInfo;
  }

  private async request(path: string, body: string): Promise<unknown> {
    await this.slots.acquire();
    try {
      let lastTransport: unknown = null;
      let lastStatus: { status: number; detail: unknown } | null = null;
      for (let attempt = 0; attempt <= this.maxRetries; attempt++) {
        if (attempt > 0) {
          await sleep(this.retryDelayMs * 2 ** (attempt - 1));
        }
        let response: Response;
        try {
          response = await fetch(`${this.baseUrl}${path}`, {
            method: "POST",
            headers: { "content-type": "application/json" },
            body,
            signal: AbortSignal.timeout(this.timeoutMs),
          });
        } catch (err) {
          lastTransport = err;
          continue;
        }
        if (response.status >= 500) {
          lastStatus = { status: response.status, detail: await safeDetail(response) };
          continue;
        }
        if (response.status >= 400) {
          throw new ServiceError(response.status, await safeDetail(response));
        }
        return await response.json();
      }
      if (lastStatus !== null) {
        throw new ServiceError(lastStatus.status, lastStatus.detail);
      }
      throw new ConnectionError(
        `reward service unreachable after ${this.maxRetries + 1} attempts`,
        lastTransport,
      );
    } finally {
      this.slots.release();
    }
  }
}

async function safeDetail(response: Response): Promise<unknown> {
  try {
    const parsed = (await response.json()) as { detail?: unknown };
    return parsed.detail ?? parsed;
  } catch {
    return response.statusText;
  }
}
