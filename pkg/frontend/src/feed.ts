// Feed rendering: posts in ranked order, engagement toggles with optimistic
// UI, the interstitial modal, and the continue gate into the survey.

import { MonotonicStamper } from "./clock.js";
import { ClientEvent, SessionBootstrap, FeedEntry } from "./types.js";
import { ViewabilityTracker } from "./viewability.js";

/** The slice of EventQueue the feed needs; tests substitute a recorder. */
export interface EventSink {
  push(event: ClientEvent): void;
}

type ToggleAction = "share" | "like" | "bookmark";

const TOGGLE_EVENTS: Record<ToggleAction, { on: string; off: string }> = {
  share: { on: "share", off: "unshare" },
  like: { on: "like", off: "unlike" },
  bookmark: { on: "bookmark", off: "unbookmark" },
};

const TOGGLE_LABELS: Record<ToggleAction, { on: string; off: string }> = {
  share: { on: "Unshare", off: "Share" },
  like: { on: "Unlike", off: "Like" },
  bookmark: { on: "Unbookmark", off: "Bookmark" },
};

export interface FeedDeps {
  tracker: ViewabilityTracker;
  queue: EventSink;
  stamper: MonotonicStamper;
  onContinue: () => void;
}

export class FeedView {
  private toggles = new Map<string, Record<ToggleAction, boolean>>();
  private interstitialShown = new Set<number>();
  private modal: HTMLElement | null = null;
  private continueButton: HTMLButtonElement | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly bootstrap: SessionBootstrap,
    private readonly deps: FeedDeps,
  ) {
    for (const entry of bootstrap.feed) {
      this.toggles.set(entry.entity_id, { share: false, like: false, bookmark: false });
    }
  }

  mount(): void {
    this.root.innerHTML = "";
    this.root.classList.add("feedlab-feed", `skin-${this.bootstrap.skin}`);
    const list = document.createElement("main");
    list.className = "feed-list";
    for (const entry of this.bootstrap.feed) {
      list.appendChild(this.renderPost(entry));
    }
    const footer = document.createElement("footer");
    footer.className = "feed-footer";
    this.continueButton = document.createElement("button");
    this.continueButton.className = "continue-button";
    this.continueButton.textContent = "Continue to survey";
    this.continueButton.disabled = true;
    this.continueButton.addEventListener("click", () => {
      if (!this.continueButton!.disabled) this.deps.onContinue();
    });
    footer.appendChild(this.continueButton);
    this.root.append(list, footer);

    this.deps.queue.push({ type: "feed_opened", client_ts_ms: this.deps.stamper.now() });
    for (const entry of this.bootstrap.feed) {
      const el = this.root.querySelector(`[data-entity-id="${entry.entity_id}"]`);
      if (el) this.deps.tracker.observe(entry.entity_id, el);
    }
  }

  private renderPost(entry: FeedEntry): HTMLElement {
    const article = document.createElement("article");
    article.className = "post";
    article.dataset.entityId = entry.entity_id;
    article.dataset.position = String(entry.position);

    if (entry.entity.source_label) {
      const source = document.createElement("div");
      source.className = "post-source";
      source.textContent = entry.entity.source_label;
      article.appendChild(source);
    }
    const headline = document.createElement("h2");
    headline.className = "post-headline";
    headline.textContent = entry.entity.headline;
    article.appendChild(headline);
    if (entry.entity.image_ref) {
      const img = document.createElement("img");
      img.className = "post-image";
      img.src = entry.entity.image_ref;
      img.alt = "";
      article.appendChild(img);
    }
    if (entry.entity.body) {
      const body = document.createElement("p");
      body.className = "post-body";
      body.textContent = entry.entity.body;
      article.appendChild(body);
    }
    if (entry.shown_likes !== null || entry.shown_shares !== null) {
      const counts = document.createElement("div");
      counts.className = "post-counts";
      if (entry.shown_likes !== null) {
        const likes = document.createElement("span");
        likes.className = "count-likes";
        likes.textContent = `${entry.shown_likes} likes`;
        counts.appendChild(likes);
      }
      if (entry.shown_shares !== null) {
        const shares = document.createElement("span");
        shares.className = "count-shares";
        shares.textContent = `${entry.shown_shares} shares`;
        counts.appendChild(shares);
      }
      article.appendChild(counts);
    }
    const actions = document.createElement("div");
    actions.className = "post-actions";
    for (const action of ["share", "like", "bookmark"] as ToggleAction[]) {
      const button = document.createElement("button");
      button.className = `action-${action}`;
      button.textContent = TOGGLE_LABELS[action].off;
      button.setAttribute("aria-pressed", "false");
      button.addEventListener("click", () => this.toggle(entry.entity_id, action));
      actions.appendChild(button);
    }
    article.appendChild(actions);
    return article;
  }

  /** Optimistic toggle: the button flips immediately, the event is queued. */
  toggle(entityId: string, action: ToggleAction): void {
    const state = this.toggles.get(entityId);
    if (!state) return;
    state[action] = !state[action];
    const on = state[action];
    this.deps.queue.push({
      type: (on ? TOGGLE_EVENTS[action].on : TOGGLE_EVENTS[action].off) as never,
      entity_id: entityId,
      client_ts_ms: this.deps.stamper.next(),
    });
    const button = this.root.querySelector<HTMLButtonElement>(
      `[data-entity-id="${entityId}"] .action-${action}`,
    );
    if (button) {
      button.setAttribute("aria-pressed", String(on));
      button.textContent = on ? TOGGLE_LABELS[action].on : TOGGLE_LABELS[action].off;
    }
  }

  toggleState(entityId: string): Record<ToggleAction, boolean> | undefined {
    return this.toggles.get(entityId);
  }

  /** Called on every emitted visibility event (the app wires the tracker
   * through here) to drive the interstitial and the continue gate. */
  onVisibility(entityId: string, visible: boolean): void {
    if (visible) {
      const entry = this.bootstrap.feed.find((e) => e.entity_id === entityId);
      if (
        entry &&
        entry.intervention_before &&
        !this.interstitialShown.has(entry.position)
      ) {
        this.interstitialShown.add(entry.position);
        this.showInterstitial(entry);
      }
    }
    this.updateContinueGate();
  }

  private showInterstitial(entry: FeedEntry): void {
    const overlay = document.createElement("div");
    overlay.className = "interstitial-overlay";
    overlay.dataset.position = String(entry.position);
    const modal = document.createElement("div");
    modal.className = "interstitial-modal";
    modal.setAttribute("role", "dialog");
    const text = document.createElement("p");
    text.textContent = entry.intervention_before?.content ?? "";
    const dismiss = document.createElement("button");
    dismiss.className = "interstitial-dismiss";
    dismiss.textContent = "Continue";
    dismiss.addEventListener("click", () => this.dismissInterstitial());
    modal.append(text, dismiss);
    overlay.appendChild(modal);
    document.body.appendChild(overlay);
    document.body.classList.add("scroll-locked");
    this.modal = overlay;
  }

  dismissInterstitial(): void {
    this.modal?.remove();
    this.modal = null;
    document.body.classList.remove("scroll-locked");
  }

  interstitialOpen(): boolean {
    return this.modal !== null;
  }

  private updateContinueGate(): void {
    if (!this.continueButton) return;
    const feed = this.bootstrap.feed;
    if (feed.length === 0) {
      this.continueButton.disabled = false;
      return;
    }
    const last = feed[feed.length - 1];
    this.continueButton.disabled = !this.deps.tracker.everVisible(last.entity_id);
  }
}
