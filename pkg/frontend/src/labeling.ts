/** Candidate review queue with keyboard-first labelling.
 *
 * One action (anomaly / normal) issues exactly one POST /api/labels; while a
 * POST is in flight further actions are ignored so a held key cannot double
 * submit. Skip advances without any request. A failed POST keeps the
 * candidate current so the action can be retried.
 */

import { ApiClient, Candidate } from "./api.js";

export type LabelAction = "anomaly" | "normal" | "skip";

export interface QueueEvents {
  onAdvance?: (next: Candidate | null) => void;
  onLabelled?: (id: string, label: 0 | 1, nLabelled: number) => void;
  onError?: (message: string) => void;
}

export const KEY_BINDINGS: Record<string, LabelAction> = {
  a: "anomaly",
  n: "normal",
  " ": "skip",
};

export class ReviewQueue {
  private items: Candidate[] = [];
  private cursor = 0;
  private inFlight = false;
  posts = 0; // POSTs issued, observable for tests/status displays

  constructor(private api: ApiClient, private events: QueueEvents = {}) {}

  load(items: Candidate[]): void {
    this.items = items.slice();
    this.cursor = 0;
    this.events.onAdvance?.(this.current());
  }

  current(): Candidate | null {
    return this.cursor < this.items.length ? this.items[this.cursor] : null;
  }

  remaining(): number {
    return Math.max(0, this.items.length - this.cursor);
  }

  get busy(): boolean {
    return this.inFlight;
  }

  /** Handle one action; resolves when the queue has advanced (or not). */
  async act(action: LabelAction): Promise<void> {
    const item = this.current();
    if (!item || this.inFlight) return;
    if (action === "skip") {
      this.cursor += 1;
      this.events.onAdvance?.(this.current());
      return;
    }
    const label = action === "anomaly" ? 1 : 0;
    this.inFlight = true;
    this.posts += 1;
    try {
      const resp = await this.api.postLabel(item.id, label as 0 | 1);
      this.cursor += 1;
      this.events.onLabelled?.(item.id, label as 0 | 1, resp.n_labelled);
      this.events.onAdvance?.(this.current());
    } catch (err) {
      this.events.onError?.(err instanceof Error ? err.message : String(err));
    } finally {
      this.inFlight = false;
    }
  }

  /** Map a keyboard event to an action; returns the action handled, if any. */
  handleKey(key: string): LabelAction | null {
    const action = KEY_BINDINGS[key.toLowerCase() === " " ? " " : key.toLowerCase()];
    if (!action) return null;
    void this.act(action);
    return action;
  }
}
