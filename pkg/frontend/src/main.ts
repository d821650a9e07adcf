// Entry point: a small launcher form picks the study, the participant or
// annotator token, and the flow; the rest of the page belongs to the
// selected view. Served as a static bundle by the study service.

import { StudyClient } from "./api.js";
import { AnnotateView } from "./annotate-view.js";
import { CaptionPickView } from "./caption-view.js";

function required(root: ParentNode, selector: string): HTMLElement {
  const el = root.querySelector<HTMLElement>(selector);
  if (!el) throw new Error(`missing element ${selector}`);
  return el;
}

export function boot(doc: Document = document): void {
  const form = required(doc, "#launcher") as HTMLFormElement;
  const mount = required(doc, "#view");
  const client = new StudyClient("");

  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const data = new FormData(form);
    const studyId = String(data.get("study") ?? "").trim();
    const token = String(data.get("token") ?? "").trim();
    const flow = String(data.get("flow") ?? "captions");
    if (!studyId || !token) return;
    form.hidden = true;
    if (flow === "annotate") {
      const view = new AnnotateView(mount, client, { studyId, annotator: token });
      void view.start();
    } else {
      const view = new CaptionPickView(mount, client, { studyId, participant: token });
      void view.start();
    }
  });
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  boot();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", () => boot());
}
