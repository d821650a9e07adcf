// Contract tests for the caption-pick flow against the service stub:
// every interaction path emits a schema-valid payload and the DOM never
// contains a model name.

import { beforeEach, describe, expect, it } from "vitest";

import { StudyClient } from "../src/api.js";
import { CaptionPickView } from "../src/caption-view.js";
import { ResponseBodySchema } from "../src/schema.js";
import { MODEL_NAMES, StubService } from "./stub.js";

let stub: StubService;
let root: HTMLElement;
let view: CaptionPickView;
let retries: Array<() => void>;

function card(key: string): HTMLElement {
  const el = root.querySelector<HTMLElement>(`.caption-card[data-key="${key}"]`);
  if (!el) throw new Error(`no card ${key}`);
  return el;
}

function submitButton(): HTMLButtonElement {
  return root.querySelector<HTMLButtonElement>(".submit-button") as HTMLButtonElement;
}

async function settle(): Promise<void> {
  await new Promise((r) => setTimeout(r, 0));
}

beforeEach(async () => {
  stub = new StubService();
  root = document.createElement("div");
  document.body.innerHTML = "";
  document.body.appendChild(root);
  retries = [];
  view = new CaptionPickView(root, new StudyClient("", stub.fetch), {
    studyId: "study1",
    participant: "p1",
    schedule: (fn) => void retries.push(fn),
  });
  await view.start();
});

describe("caption pick flow", () => {
  it("renders anonymous cards only; no model name reaches the DOM", () => {
    expect(root.querySelectorAll(".caption-card").length).toBe(3);
    for (const name of MODEL_NAMES) {
      expect(document.body.innerHTML).not.toContain(name);
    }
  });

  it("best only: click one card, submit, advance", async () => {
    expect(submitButton().disabled).toBe(true);
    card("k2").click();
    expect(submitButton().disabled).toBe(false);
    submitButton().click();
    await settle();

    expect(stub.posted.length).toBe(1);
    const body = ResponseBodySchema.parse(stub.posted[0]?.body);
    expect(body.best).toBe("k2");
    expect(body.second).toBeNull();
    expect(root.querySelector(".progress")?.textContent).toContain("Frame 2 of 4");
  });

  it("best plus second: pick card 3 then card 1", async () => {
    card("k3").click();
    card("k1").click();
    submitButton().click();
    await settle();

    const body = ResponseBodySchema.parse(stub.posted[0]?.body);
    expect(body.best).toBe("k3");
    expect(body.second).toBe("k1");
  });

  it("none clears picks and posts without a second", async () => {
    card("k1").click();
    card("k2").click();
    root.querySelector<HTMLElement>(".none-button")?.click();
    submitButton().click();
    await settle();

    const body = ResponseBodySchema.parse(stub.posted[0]?.body);
    expect(body.best).toBe("none");
    expect(body.second).toBeNull();
  });

  it("clicking the same card twice toggles it off", () => {
    card("k2").click();
    card("k2").click();
    expect(submitButton().disabled).toBe(true);
    expect(root.querySelectorAll(".caption-card.best").length).toBe(0);
  });

  it("second click on best never posts best == second", async () => {
    card("k1").click();
    card("k1").click(); // toggled off
    card("k2").click();
    card("k3").click();
    submitButton().click();
    await settle();
    const body = ResponseBodySchema.parse(stub.posted[0]?.body);
    expect(body.best).not.toBe(body.second);
  });

  it("full study walk: every posted payload is schema-valid", async () => {
    for (let i = 0; i < 4; i++) {
      card("k1").click();
      card("k2").click();
      submitButton().click();
      await settle();
    }
    expect(root.querySelector(".all-done")).not.toBeNull();
    expect(stub.posted.length).toBe(4);
    for (const p of stub.posted) {
      ResponseBodySchema.parse(p.body);
    }
    expect(stub.responses.size).toBe(4);
  });

  it("offline submit queues, advances optimistically, retries later", async () => {
    stub.failuresRemaining = 1;
    card("k1").click();
    submitButton().click();
    await settle();

    expect(view.queue.pending).toBe(1);
    expect(stub.responses.size).toBe(0);
    // advanced anyway (optimistic)
    expect(root.querySelector(".progress")?.textContent).toContain("Frame 1 of 4");

    retries.shift()?.();
    await settle();
    expect(view.queue.pending).toBe(0);
    expect(stub.responses.size).toBe(1);
    ResponseBodySchema.parse(stub.posted[0]?.body);
  });

  it("service rejection surfaces inline", async () => {
    stub.rejectAll = "study is closed";
    card("k1").click();
    submitButton().click();
    await settle();

    const box = root.querySelector<HTMLElement>(".error-box");
    expect(box?.hidden).toBe(false);
    expect(box?.textContent).toContain("study is closed");
  });
});
