/** Saved-state timeline: snapshots plus a cursor that is always either on
 * an existing snapshot or "live". */

import type { SavedState } from "./protocol.js";

export type Cursor = { kind: "live" } | { kind: "snapshot"; index: number };

export class Timeline {
  private snapshots: SavedState[] = [];
  private cursorState: Cursor = { kind: "live" };

  get cursor(): Cursor {
    return this.cursorState;
  }

  get entries(): readonly SavedState[] {
    return this.snapshots;
  }

  sync(saved: SavedState[]): void {
    this.snapshots = [...saved];
    if (
      this.cursorState.kind === "snapshot" &&
      !this.snapshots.some((s) => s.index === (this.cursorState as { index: number }).index)
    ) {
      this.cursorState = { kind: "live" };
    }
  }

  record(snapshot: SavedState): void {
    this.snapshots.push(snapshot);
  }

  /** Move the cursor; only indices of existing snapshots are accepted. */
  seek(index: number): boolean {
    if (!this.snapshots.some((s) => s.index === index)) return false;
    this.cursorState = { kind: "snapshot", index };
    return true;
  }

  resumeLive(): void {
    this.cursorState = { kind: "live" };
  }
}
