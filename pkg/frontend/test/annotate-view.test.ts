// Contract tests for the progression-annotation flow: keyboard labeling,
// back-and-relabel, schema-valid payloads, nothing but frames in the DOM.

import { afterEach, beforeEach, describe, expect, it } from "vitest";

import { StudyClient } from "../src/api.js";
import { AnnotateView, pairsFromItems } from "../src/annotate-view.js";
import { AnnotationBodySchema } from "../src/schema.js";
import { MODEL_NAMES, StubService } from "./stub.js";

let stub: StubService;
let root: HTMLElement;
let view: AnnotateView;

function key(k: string): void {
  document.dispatchEvent(new KeyboardEvent("keydown", { key: k }));
}

async function settle(): Promise<void> {
  await new Promise((r) => setTimeout(r, 0));
}

beforeEach(async () => {
  stub = new StubService();
  root = document.createElement("div");
  document.body.innerHTML = "";
  document.body.appendChild(root);
  view = new AnnotateView(root, new StudyClient("", stub.fetch), {
    studyId: "study1",
    annotator: "a1",
  });
  await view.start();
});

afterEach(() => view.stop());

describe("pairsFromItems", () => {
  it("builds one task per adjacent pair", () => {
    const pairs = pairsFromItems(stub.items);
    expect(pairs.map((p) => [p.videoId, p.pairIndex])).toEqual([
      ["va", 0],
      ["vb", 0],
    ]);
  });
});

describe("annotate flow", () => {
  it("shows frames side by side with no captions or model names", () => {
    expect(root.querySelectorAll(".pair img").length).toBe(2);
    for (const name of MODEL_NAMES) {
      expect(document.body.innerHTML).not.toContain(name);
    }
    expect(document.body.innerHTML).not.toContain("caption");
  });

  it("y posts progression and advances", async () => {
    key("y");
    await settle();
    expect(stub.annotations.length).toBe(1);
    const body = AnnotationBodySchema.parse(stub.annotations[0]);
    expect(body).toMatchObject({ video_id: "va", pair_index: 0, label: "progression" });
    expect(root.querySelector(".progress")?.textContent).toContain("Pair 2 of 2");
  });

  it("n posts no_progression", async () => {
    key("n");
    await settle();
    const body = AnnotationBodySchema.parse(stub.annotations[0]);
    expect(body.label).toBe("no_progression");
  });

  it("back and relabel posts a superseding annotation", async () => {
    key("y");
    await settle();
    root.querySelector<HTMLElement>(".back-button")?.click();
    key("n");
    await settle();

    expect(stub.annotations.length).toBe(2);
    const first = AnnotationBodySchema.parse(stub.annotations[0]);
    const second = AnnotationBodySchema.parse(stub.annotations[1]);
    expect(first).toMatchObject({ video_id: "va", pair_index: 0, label: "progression" });
    expect(second).toMatchObject({ video_id: "va", pair_index: 0, label: "no_progression" });
  });

  it("walks every pair to completion with valid payloads", async () => {
    key("y");
    await settle();
    key("n");
    await settle();
    expect(root.querySelector(".all-done")).not.toBeNull();
    for (const a of stub.annotations) {
      AnnotationBodySchema.parse(a);
    }
  });

  it("buttons work without the keyboard", async () => {
    root.querySelector<HTMLElement>(".no-button")?.click();
    await settle();
    expect(AnnotationBodySchema.parse(stub.annotations[0]).label).toBe("no_progression");
  });

  it("service rejection surfaces inline", async () => {
    stub.rejectAll = "annotation window closed";
    key("y");
    await settle();
    const box = root.querySelector<HTMLElement>(".error-box");
    expect(box?.hidden).toBe(false);
    expect(box?.textContent).toContain("annotation window closed");
  });
});
