// Caption-pick flow: frame image + sequence strip + shuffled anonymous
// caption cards. First click marks best, second click marks second-best,
// "none" clears both; submit posts the response and advances to the next
// slot. Failed submits queue for retry; service rejections surface inline.

import { StudyClient } from "./api.js";
import { SubmitQueue } from "./queue.js";
import { Card, NextSlot, ResponseBody } from "./schema.js";
import { PickState } from "./state.js";

export interface CaptionViewOptions {
  studyId: string;
  participant: string;
  schedule?: (fn: () => void, ms: number) => void;
}

export class CaptionPickView {
  readonly state = new PickState();
  readonly queue: SubmitQueue<ResponseBody>;
  private slot: NextSlot | null = null;
  private lastError: string | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: StudyClient,
    private readonly opts: CaptionViewOptions,
  ) {
    this.queue = new SubmitQueue<ResponseBody>({
      send: (body) => this.client.submitResponse(body),
      onReject: (_body, detail) => this.showError(detail),
      schedule: opts.schedule,
    });
  }

  async start(): Promise<void> {
    this.slot = await this.client.nextSlot(this.opts.studyId, this.opts.participant);
    this.state.reset();
    this.render();
  }

  private showError(detail: string): void {
    this.lastError = detail; // survives the re-render after an optimistic advance
    const box = this.root.querySelector<HTMLElement>(".error-box");
    if (box) {
      box.textContent = detail;
      box.hidden = false;
    }
  }

  render(): void {
    const slot = this.slot;
    this.root.innerHTML = "";
    if (!slot || slot.done) {
      const done = document.createElement("p");
      done.className = "all-done";
      done.textContent = "All frames reviewed. Thank you!";
      this.root.appendChild(done);
      return;
    }

    const progress = document.createElement("p");
    progress.className = "progress";
    progress.textContent = `Frame ${slot.progress.completed + 1} of ${slot.progress.total}`;
    this.root.appendChild(progress);

    const frame = document.createElement("img");
    frame.className = "frame-image";
    frame.src = slot.image_uri ?? "";
    frame.alt = `frame ${slot.frame_index} of ${slot.video_id}`;
    this.root.appendChild(frame);

    const strip = document.createElement("div");
    strip.className = "sequence-strip";
    (slot.sequence_uris ?? []).forEach((uri, i) => {
      const thumb = document.createElement("img");
      thumb.src = uri;
      thumb.alt = `context frame ${i}`;
      if (i === slot.frame_index) thumb.className = "current";
      strip.appendChild(thumb);
    });
    this.root.appendChild(strip);

    const cards = document.createElement("div");
    cards.className = "cards";
    (slot.cards ?? []).forEach((card) => {
      cards.appendChild(this.renderCard(card));
    });
    this.root.appendChild(cards);

    const noneBtn = document.createElement("button");
    noneBtn.className = "none-button";
    noneBtn.textContent = "None of these";
    noneBtn.addEventListener("click", () => {
      this.state.clickNone();
      this.refreshMarks();
    });
    this.root.appendChild(noneBtn);

    const submit = document.createElement("button");
    submit.className = "submit-button";
    submit.textContent = "Submit";
    submit.disabled = true;
    submit.addEventListener("click", () => void this.submit());
    this.root.appendChild(submit);

    const error = document.createElement("p");
    error.className = "error-box";
    error.textContent = this.lastError ?? "";
    error.hidden = this.lastError === null;
    this.root.appendChild(error);

    this.refreshMarks();
  }

  private renderCard(card: Card): HTMLElement {
    const el = document.createElement("button");
    el.className = "caption-card";
    el.dataset.key = card.key;
    el.textContent = card.text;
    el.addEventListener("click", () => {
      this.state.clickCard(card.key);
      this.refreshMarks();
    });
    return el;
  }

  private refreshMarks(): void {
    for (const el of this.root.querySelectorAll<HTMLElement>(".caption-card")) {
      el.classList.toggle("best", el.dataset.key === this.state.best);
      el.classList.toggle("second", el.dataset.key === this.state.second);
    }
    const noneBtn = this.root.querySelector<HTMLElement>(".none-button");
    noneBtn?.classList.toggle("best", this.state.best === "none");
    const submit = this.root.querySelector<HTMLButtonElement>(".submit-button");
    if (submit) submit.disabled = !this.state.canSubmit();
  }

  async submit(): Promise<void> {
    const slot = this.slot;
    if (!slot || slot.done || !this.state.canSubmit()) return;
    const picks = this.state.picks();
    const body: ResponseBody = {
      study_id: this.opts.studyId,
      participant: this.opts.participant,
      item_index: slot.item_index ?? 0,
      frame_index: slot.frame_index ?? 0,
      best: picks.best,
      second: picks.second,
    };
    this.lastError = null;
    await this.queue.push(body); // optimistic: advance even if queued offline
    await this.start();
  }
}
