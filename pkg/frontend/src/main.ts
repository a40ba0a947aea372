import { ApiClient } from "./api.js";
import { AttributionScreen } from "./attribution.js";
import { PreferenceScreen } from "./preference.js";

const ANNOTATOR_KEY = "refine-loop-annotator-id";

function annotatorId(): string {
  const params = new URLSearchParams(window.location.search);
  const fromUrl = params.get("annotator");
  if (fromUrl) {
    localStorage.setItem(ANNOTATOR_KEY, fromUrl);
    return fromUrl;
  }
  let stored = localStorage.getItem(ANNOTATOR_KEY);
  if (!stored) {
    stored = window.prompt("Annotator id:") || `anon-${Date.now()}`;
    localStorage.setItem(ANNOTATOR_KEY, stored);
  }
  return stored;
}

export async function mount(root: HTMLElement): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const api = new ApiClient("");
  const annotator = annotatorId();
  const mode = params.get("mode") ?? "preference";

  if (mode === "attribution") {
    const dialogueId = params.get("dialogue");
    if (!dialogueId) {
      root.textContent = "Missing ?dialogue=<id> for attribution mode.";
      return;
    }
    await new AttributionScreen(root, api, dialogueId, annotator).start();
    return;
  }

  const experimentId = params.get("experiment") ?? "exp-001";
  await new PreferenceScreen(root, api, experimentId, annotator).start();
}

const root = document.getElementById("app");
if (root) {
  void mount(root);
}
