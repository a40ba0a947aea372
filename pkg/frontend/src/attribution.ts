import { ApiClient } from "./api.js";
import type { AttributionTask } from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

interface SentenceState {
  submitted: boolean;
  turnIndices: number[];
}

/**
 * Click-to-link attribution screen: select a summary sentence, toggle the
 * dialogue turns that support it, then save; "ungrounded" explicitly submits
 * an empty link set.  Hovering a submitted sentence highlights its turns.
 */
export class AttributionScreen {
  private task: AttributionTask | null = null;
  private selected: number | null = null;
  private workingSet = new Set<number>();
  private states = new Map<number, SentenceState>();
  private pending = false;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly dialogueId: string,
    private readonly annotatorId: string,
  ) {}

  async start(): Promise<void> {
    this.task = await this.api.attributionTask(this.dialogueId);
    // Stateless across reloads: prior submissions come back from the server.
    const records = await this.api.attributionRecords(this.dialogueId, this.annotatorId);
    for (const record of records) {
      this.states.set(record.sentence_index, {
        submitted: true,
        turnIndices: record.turn_indices,
      });
    }
    this.render();
  }

  selectSentence(index: number): void {
    if (this.pending) return;
    this.selected = index;
    const prior = this.states.get(index);
    this.workingSet = new Set(prior ? prior.turnIndices : []);
    this.render();
  }

  toggleTurn(index: number): void {
    if (this.selected === null || this.pending) return; // invalid selection disabled
    if (this.workingSet.has(index)) this.workingSet.delete(index);
    else this.workingSet.add(index);
    this.render();
  }

  async save(): Promise<void> {
    await this.submit([...this.workingSet].sort((a, b) => a - b));
  }

  async markUngrounded(): Promise<void> {
    await this.submit([]);
  }

  private async submit(turnIndices: number[]): Promise<void> {
    if (this.selected === null || this.pending) return;
    const index = this.selected;
    this.pending = true;
    this.render();
    try {
      await this.api.submitAttribution(this.dialogueId, index, turnIndices, this.annotatorId);
      this.states.set(index, { submitted: true, turnIndices });
      this.selected = null;
      this.workingSet = new Set();
    } catch (err) {
      this.renderRetryBanner(`Submission failed: ${String(err)}`, () => this.submit(turnIndices));
    } finally {
      this.pending = false;
      this.render();
    }
  }

  private highlightTurns(indices: number[], on: boolean): void {
    for (const index of indices) {
      const turn = this.root.querySelector(`.turn-item[data-index="${index}"]`);
      turn?.classList.toggle("highlighted", on);
    }
  }

  private render(): void {
    if (!this.task) return;
    const banner = this.root.querySelector(".retry-banner");
    this.root.replaceChildren();
    if (banner) this.root.append(banner);

    const screen = el("div", "attribution-screen");

    const summaryPane = el("div", "summary-pane");
    summaryPane.append(el("h2", undefined, "Summary sentences"));
    this.task.summary.sentences.forEach((sentence, index) => {
      const state = this.states.get(index);
      const item = el("div", "sentence-item", sentence);
      item.dataset.index = String(index);
      if (index === this.selected) item.classList.add("selected");
      if (state?.submitted) {
        item.classList.add("submitted");
        const status =
          state.turnIndices.length === 0
            ? "ungrounded"
            : `turns ${state.turnIndices.join(", ")}`;
        item.append(el("span", "sentence-status", ` [${status}]`));
        item.addEventListener("mouseenter", () => this.highlightTurns(state.turnIndices, true));
        item.addEventListener("mouseleave", () => this.highlightTurns(state.turnIndices, false));
      }
      item.addEventListener("click", () => this.selectSentence(index));
      summaryPane.append(item);
    });
    screen.append(summaryPane);

    const dialoguePane = el("div", "dialogue-pane");
    dialoguePane.append(el("h2", undefined, "Dialogue turns"));
    for (const turn of this.task.dialogue.turns) {
      const item = el("div", "turn-item", `${turn.speaker}: ${turn.text}`);
      item.dataset.index = String(turn.index);
      if (this.workingSet.has(turn.index)) item.classList.add("linked");
      if (this.selected === null) item.classList.add("disabled");
      item.addEventListener("click", () => this.toggleTurn(turn.index));
      dialoguePane.append(item);
    }
    screen.append(dialoguePane);

    const actions = el("div", "actions");
    const save = el("button", "action-button", "Save links");
    save.id = "save-links";
    save.disabled = this.selected === null || this.pending;
    save.addEventListener("click", () => void this.save());
    const ungrounded = el("button", "action-button", "Mark ungrounded");
    ungrounded.id = "mark-ungrounded";
    ungrounded.disabled = this.selected === null || this.pending;
    ungrounded.addEventListener("click", () => void this.markUngrounded());
    actions.append(save, ungrounded);
    screen.append(actions);

    const done = [...this.states.values()].filter((s) => s.submitted).length;
    screen.append(
      el(
        "div",
        "progress",
        `Labeled ${done} of ${this.task.summary.sentences.length} sentences`,
      ),
    );
    this.root.append(screen);
  }

  private renderRetryBanner(message: string, retry: () => Promise<void>): void {
    this.root.querySelector(".retry-banner")?.remove();
    const banner = el("div", "retry-banner");
    banner.append(el("span", undefined, message));
    const button = el("button", "retry-button", "Retry");
    button.addEventListener("click", () => void retry());
    banner.append(button);
    this.root.prepend(banner);
  }
}
