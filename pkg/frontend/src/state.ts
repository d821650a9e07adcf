// Selection state for one caption-pick screen.
//
// Click rules: the first card clicked becomes best, the next distinct card
// becomes second (latest distinct click replaces second). Clicking the
// best card again toggles it off (second, if any, is promoted), so best
// can never equal second. "none" clears both picks and excludes a second.

import { NONE_KEY } from "./schema.js";

export class PickState {
  best: string | null = null;
  second: string | null = null;

  clickCard(key: string): void {
    if (this.best === NONE_KEY) {
      this.best = key;
      return;
    }
    if (this.best === null) {
      this.best = key;
      return;
    }
    if (key === this.best) {
      this.best = this.second;
      this.second = null;
      return;
    }
    if (key === this.second) {
      this.second = null;
      return;
    }
    this.second = key;
  }

  clickNone(): void {
    if (this.best === NONE_KEY) {
      this.best = null;
      return;
    }
    this.best = NONE_KEY;
    this.second = null;
  }

  reset(): void {
    this.best = null;
    this.second = null;
  }

  canSubmit(): boolean {
    return this.best !== null;
  }

  picks(): { best: string; second: string | null } {
    if (this.best === null) throw new Error("nothing selected");
    return { best: this.best, second: this.second };
  }
}
