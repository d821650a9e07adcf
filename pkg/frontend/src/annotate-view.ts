// Progression-annotation flow: adjacent frames side by side, keyboard
// shortcuts y (progression) / n (no progression), back to relabel.
// 364-frame studies need throughput, so keys are the primary input.

import { StudyClient } from "./api.js";
import { SubmitQueue } from "./queue.js";
import { AnnotationBody, StudyItem } from "./schema.js";

export interface PairTask {
  videoId: string;
  pairIndex: number;
  leftUri: string;
  rightUri: string;
}

export function pairsFromItems(items: StudyItem[]): PairTask[] {
  const out: PairTask[] = [];
  for (const item of items) {
    for (let t = 0; t + 1 < item.frame_uris.length; t++) {
      out.push({
        videoId: item.video_id,
        pairIndex: t,
        leftUri: item.frame_uris[t] as string,
        rightUri: item.frame_uris[t + 1] as string,
      });
    }
  }
  return out;
}

export interface AnnotateViewOptions {
  studyId: string;
  annotator: string;
  schedule?: (fn: () => void, ms: number) => void;
}

export class AnnotateView {
  readonly queue: SubmitQueue<AnnotationBody>;
  private pairs: PairTask[] = [];
  private cursor = 0;
  private lastError: string | null = null;
  private readonly keyHandler = (ev: KeyboardEvent) => this.onKey(ev);

  constructor(
    private readonly root: HTMLElement,
    private readonly client: StudyClient,
    private readonly opts: AnnotateViewOptions,
  ) {
    this.queue = new SubmitQueue<AnnotationBody>({
      send: (body) => this.client.submitAnnotation(body),
      onReject: (_body, detail) => this.showError(detail),
      schedule: opts.schedule,
    });
  }

  async start(): Promise<void> {
    this.pairs = pairsFromItems(await this.client.items(this.opts.studyId));
    this.cursor = 0;
    document.addEventListener("keydown", this.keyHandler);
    this.render();
  }

  stop(): void {
    document.removeEventListener("keydown", this.keyHandler);
  }

  private onKey(ev: KeyboardEvent): void {
    if (ev.key === "y") void this.label("progression");
    else if (ev.key === "n") void this.label("no_progression");
    else if (ev.key === "ArrowLeft") this.back();
  }

  async label(label: "progression" | "no_progression"): Promise<void> {
    const pair = this.pairs[this.cursor];
    if (!pair) return;
    const body: AnnotationBody = {
      study_id: this.opts.studyId,
      video_id: pair.videoId,
      pair_index: pair.pairIndex,
      label,
      annotator: this.opts.annotator,
    };
    await this.queue.push(body);
    this.cursor += 1;
    this.render();
  }

  back(): void {
    if (this.cursor > 0) {
      this.cursor -= 1; // relabeling posts again; the service keeps the latest
      this.render();
    }
  }

  private showError(detail: string): void {
    this.lastError = detail;
    const box = this.root.querySelector<HTMLElement>(".error-box");
    if (box) {
      box.textContent = detail;
      box.hidden = false;
    }
  }

  render(): void {
    this.root.innerHTML = "";
    const pair = this.pairs[this.cursor];
    if (!pair) {
      const done = document.createElement("p");
      done.className = "all-done";
      done.textContent = "All pairs annotated. Thank you!";
      this.root.appendChild(done);
      return;
    }

    const progress = document.createElement("p");
    progress.className = "progress";
    progress.textContent = `Pair ${this.cursor + 1} of ${this.pairs.length} (${pair.videoId})`;
    this.root.appendChild(progress);

    const pairBox = document.createElement("div");
    pairBox.className = "pair";
    for (const [side, uri] of [["left", pair.leftUri], ["right", pair.rightUri]] as const) {
      const img = document.createElement("img");
      img.className = side;
      img.src = uri;
      img.alt = `${side} frame`;
      pairBox.appendChild(img);
    }
    this.root.appendChild(pairBox);

    const controls = document.createElement("div");
    controls.className = "controls";
    const yes = document.createElement("button");
    yes.className = "yes-button";
    yes.textContent = "Progression (y)";
    yes.addEventListener("click", () => void this.label("progression"));
    const no = document.createElement("button");
    no.className = "no-button";
    no.textContent = "No progression (n)";
    no.addEventListener("click", () => void this.label("no_progression"));
    const backBtn = document.createElement("button");
    backBtn.className = "back-button";
    backBtn.textContent = "Back";
    backBtn.addEventListener("click", () => this.back());
    controls.append(yes, no, backBtn);
    this.root.appendChild(controls);

    const error = document.createElement("p");
    error.className = "error-box";
    error.textContent = this.lastError ?? "";
    error.hidden = this.lastError === null;
    this.root.appendChild(error);
  }
}
