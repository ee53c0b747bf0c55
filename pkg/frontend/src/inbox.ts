/**
 * Confirmation inbox: which upstream records has this stakeholder used in
 * their own committed records but not yet confirmed?
 *
 * Built from the public chain-read endpoints (blocks are immutable, so the
 * scan caches by height). Makers owe confirmations to the cultivator
 * records they referenced; merchants to the maker records.
 */

import { BlockRecord, NodeApi } from "./api.js";

export interface InboxEntry {
  subject_trace_id: string;
  referenced_by: string; // the user's own record that cites it
  subject_stage: "CUL" | "MAK";
}

/** Pure core, separated for testing: envelopes in commit order -> inbox. */
export function pendingConfirmations(
  payloads: Array<Record<string, any>>,
  stakeholderId: string,
  role: "maker" | "merchant",
): InboxEntry[] {
  const upstreamKey = role === "maker" ? "cultivator_refs" : "maker_ref";
  const ownType = role === "maker" ? "maker_record" : "merchant_record";
  const subjectStage = role === "maker" ? "CUL" : "MAK";

  const confirmed = new Set<string>();
  const entries = new Map<string, InboxEntry>();
  for (const env of payloads) {
    if (env.type === "confirmation" && env.stakeholder_id === stakeholderId) {
      confirmed.add(env.body.subject_trace_id);
    }
    if (env.type === ownType && env.stakeholder_id === stakeholderId) {
      const refs: string[] = role === "maker"
        ? env.body[upstreamKey] : [env.body[upstreamKey]];
      for (const ref of refs) {
        if (!entries.has(ref)) {
          entries.set(ref, {
            subject_trace_id: ref,
            referenced_by: env.trace_id,
            subject_stage: subjectStage,
          });
        }
      }
    }
  }
  return [...entries.values()].filter((e) => !confirmed.has(e.subject_trace_id));
}

export class ChainScanner {
  private cache = new Map<number, BlockRecord>();

  constructor(private api: NodeApi) {}

  async allPayloads(): Promise<Array<Record<string, any>>> {
    const tip = await this.api.tip();
    const payloads: Array<Record<string, any>> = [];
    for (let height = 1; height <= tip.height; height++) {
      let block = this.cache.get(height);
      if (!block) {
        block = await this.api.block(height);
        this.cache.set(height, block);
      }
      payloads.push(...(block.payload as Array<Record<string, any>>));
    }
    return payloads;
  }
}
