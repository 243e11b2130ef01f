export { ConnectionError, ItemError, RewardClient, ServiceError, canonicalJson } from "./client.js";
export { exampleLoop, loadRollouts, printMeans } from "./exampleLoop.js";
export type {
  ClientConfig,
  ConfigOverrides,
  DistributionRow,
  HealthInfo,
  ItemOutcome,
  RewardBreakdown,
  ScoreDiagnostics,
  ScoreItem,
  SparseRowWire,
  TokenDistributionWire,
} from "./types.js";
