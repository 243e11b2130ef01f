// Runnable integration example: simulate one rollout -> score -> aggregate
// step of an RL loop without any real model. Rollout fixtures are JSONL
// lines shaped like service score items.
//
//   node dist/exampleLoop.js fixtures/rollouts.jsonl http://127.0.0.1:8731

import { readFileSync } from "node:fs";
import { RewardClient } from "./client.js";
import type { ItemOutcome, ScoreItem } from "./types.js";

export function loadRollouts(path: string): ScoreItem[] {
  return readFileSync(path, "utf-8")
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line) as ScoreItem);
}

function groundTruthType(item: ScoreItem): string {
  const gt = typeof item.ground_truth === "string" ? JSON.parse(item.ground_truth) : item.ground_truth;
  return String((gt as Record<string, unknown>).type);
}

/** Score rollouts in bounded batches and average total reward per
 *  ground-truth action type. Items failing at item level count as reward 0
 *  so a degenerate rollout cannot silently vanish from the average. */
export async function exampleLoop(
  client: RewardClient,
  rollouts: ScoreItem[],
  batchSize = 4,
): Promise<Map<string, number>> {
  const batches: ScoreItem[][] = [];
  for (let start = 0; start < rollouts.length; start += batchSize) {
    batches.push(rollouts.slice(start, start + batchSize));
  }
  const outcomes: ItemOutcome[][] = await Promise.all(
    batches.map((batch) => client.scoreBatch(batch)),
  );

  const sums = new Map<string, { total: number; n: number }>();
  batches.forEach((batch, batchIndex) => {
    batch.forEach((item, itemIndex) => {
      const outcome = outcomes[batchIndex][itemIndex];
      const type = groundTruthType(item);
      const bucket = sums.get(type) ?? { total: 0, n: 0 };
      bucket.total += outcome.ok ? outcome.breakdown.total : 0;
      bucket.n += 1;
      sums.set(type, bucket);
    });
  });

  const means = new Map<string, number>();
  for (const type of [...sums.keys()].sort()) {
    const { total, n } = sums.get(type)!;
    means.set(type, total / n);
  }
  return means;
}

export function printMeans(means: Map<string, number>): void {
  for (const [type, mean] of means) {
    console.log(`${type}: mean_total=${mean}`);
  }
}

const invokedDirectly = process.argv[1]?.endsWith("exampleLoop.js");
if (invokedDirectly) {
  const [fixturePath, baseUrl] = process.argv.slice(2);
  if (!fixturePath || !baseUrl) {
    console.error("usage: node dist/exampleLoop.js <rollouts.jsonl> <service-base-url>");
    process.exit(2);
  }
  const client = new RewardClient({ baseUrl });
  exampleLoop(client, loadRollouts(fixturePath))
    .then((means) => printMeans(means))
    .catch((err) => {
      console.error(String(err));
      process.exit(1);
    });
}
