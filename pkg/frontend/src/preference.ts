import { ApiClient } from "./api.js";
import type { Choice, PairPayload, Progress } from "./types.js";

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

/**
 * Blinded side-by-side preference screen.
 *
 * Exactly three actions (Left / Right / Tie, also on ArrowLeft / ArrowRight
 * / "="), one in-flight submission at a time, and no advancing until the
 * server acknowledges.  A failed submission surfaces a retry banner; the
 * choice is never dropped silently.
 */
export class PreferenceScreen {
  private pair: PairPayload | null = null;
  private pending = false;
  private pendingChoice: Choice | null = null;
  private progress: Progress = { done: 0, total: 0 };
  private keyHandler = (event: KeyboardEvent) => this.onKey(event);

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly experimentId: string,
    private readonly annotatorId: string,
  ) {}

  async start(): Promise<void> {
    document.addEventListener("keydown", this.keyHandler);
    await this.advance();
  }

  stop(): void {
    document.removeEventListener("keydown", this.keyHandler);
  }

  private async advance(): Promise<void> {
    let next;
    try {
      next = await this.api.nextPair(this.experimentId, this.annotatorId);
    } catch (err) {
      this.renderError(`Could not reach the service: ${String(err)}`, () => this.advance());
      return;
    }
    this.progress = next.progress;
    if (next.status === "no_tasks") {
      this.pair = null;
      this.renderCompletion();
      return;
    }
    this.pair = next;
    this.renderPair(next);
  }

  private onKey(event: KeyboardEvent): void {
    if (event.key === "ArrowLeft") this.choose("left");
    else if (event.key === "ArrowRight") this.choose("right");
    else if (event.key === "=") this.choose("tie");
  }

  async choose(choice: Choice): Promise<void> {
    if (!this.pair || this.pending) return; // at most one in-flight submission
    this.pending = true;
    this.pendingChoice = choice;
    this.setButtonsDisabled(true);
    try {
      const ack = await this.api.submitPreference(
        this.experimentId,
        this.pair.pair_id,
        this.annotatorId,
        choice,
      );
      this.progress = ack.progress;
      this.pending = false;
      this.pendingChoice = null;
      await this.advance(); // only after acknowledgment
    } catch (err) {
      this.pending = false;
      this.setButtonsDisabled(false);
      this.renderRetryBanner(`Submission failed: ${String(err)}`);
    }
  }

  retryPending(): void {
    const choice = this.pendingChoice;
    this.pendingChoice = null;
    this.root.querySelector(".retry-banner")?.remove();
    if (choice) void this.choose(choice);
  }

  private setButtonsDisabled(disabled: boolean): void {
    this.root
      .querySelectorAll<HTMLButtonElement>(".choice-button")
      .forEach((button) => (button.disabled = disabled));
  }

  private renderPair(pair: PairPayload): void {
    this.root.replaceChildren();
    const screen = el("div", "pair-screen");

    const progress = el(
      "div",
      "progress",
      `Pair ${pair.progress.done + 1} of ${pair.progress.total}`,
    );
    screen.append(progress);

    const dialoguePane = el("div", "dialogue-pane");
    dialoguePane.append(el("h2", undefined, "Dialogue"));
    for (const turn of pair.dialogue.turns) {
      const turnNode = el("p", "dialogue-turn", `${turn.speaker}: ${turn.text}`);
      turnNode.dataset.index = String(turn.index);
      dialoguePane.append(turnNode);
    }
    screen.append(dialoguePane);

    const sides = el("div", "summary-panes");
    for (const [side, summary] of [
      ["left", pair.left],
      ["right", pair.right],
    ] as const) {
      const pane = el("div", `summary-pane ${side}-pane`);
      pane.append(el("h2", undefined, side === "left" ? "Left" : "Right"));
      for (const sentence of summary.sentences) {
        pane.append(el("p", "summary-sentence", sentence));
      }
      sides.append(pane);
    }
    screen.append(sides);

    const actions = el("div", "actions");
    const buttons: Array<[string, Choice, string]> = [
      ["choose-left", "left", "Left is better (←)"],
      ["choose-tie", "tie", "Tie (=)"],
      ["choose-right", "right", "Right is better (→)"],
    ];
    for (const [id, choice, label] of buttons) {
      const button = el("button", "choice-button", label);
      button.id = id;
      button.addEventListener("click", () => void this.choose(choice));
      actions.append(button);
    }
    screen.append(actions);
    this.root.append(screen);
  }

  private renderRetryBanner(message: string): void {
    this.root.querySelector(".retry-banner")?.remove();
    const banner = el("div", "retry-banner");
    banner.append(el("span", undefined, message));
    const retry = el("button", "retry-button", "Retry");
    retry.addEventListener("click", () => this.retryPending());
    banner.append(retry);
    this.root.prepend(banner);
  }

  private renderError(message: string, retry: () => void): void {
    this.root.replaceChildren();
    const banner = el("div", "retry-banner");
    banner.append(el("span", undefined, message));
    const button = el("button", "retry-button", "Retry");
    button.addEventListener("click", retry);
    banner.append(button);
    this.root.append(banner);
  }

  private renderCompletion(): void {
    this.root.replaceChildren();
    const screen = el("div", "completion-screen");
    screen.append(el("h2", undefined, "All done"));
    screen.append(
      el(
        "p",
        "completion-count",
        `You judged ${this.progress.done} of ${this.progress.total} pairs.`,
      ),
    );
    this.root.append(screen);
  }
}
