// Entry point: wires the session bootstrap into feed, survey and completion
// views. The server inlines the bootstrap into the page, so no further
// content fetches are needed to render.

import { SessionApi } from "./api.js";
import { makeSessionClock, MonotonicStamper } from "./clock.js";
import { FeedView } from "./feed.js";
import { EventQueue } from "./queue.js";
import { renderCompletion, SurveyView } from "./survey.js";
import { showToast } from "./toast.js";
import { SessionBootstrap } from "./types.js";
import { ViewabilityTracker } from "./viewability.js";

export interface AppHandles {
  feed: FeedView | null;
  tracker: ViewabilityTracker | null;
  queue: EventQueue | null;
  survey: SurveyView | null;
}

export function boot(
  root: HTMLElement,
  bootstrap: SessionBootstrap,
  fetcher: typeof fetch = fetch,
): AppHandles {
  const api = new SessionApi(bootstrap.session_id, fetcher);
  const handles: AppHandles = { feed: null, tracker: null, queue: null, survey: null };

  const toSurvey = () => {
    const survey = new SurveyView(root, bootstrap.survey, api, (token) =>
      renderCompletion(root, token),
    );
    handles.survey = survey;
    survey.mount();
  };

  if (bootstrap.phase === "complete" && bootstrap.completion_token) {
    renderCompletion(root, bootstrap.completion_token); // back-nav: token re-shown
    return handles;
  }
  if (bootstrap.phase === "in_survey") {
    toSurvey();
    return handles;
  }

  const stamper = new MonotonicStamper(makeSessionClock());
  const queue = new EventQueue((events) => api.postEvents(events).then(() => {}), {
    onPersistentFailure: () =>
      showToast("Having trouble saving your activity — retrying in the background."),
  });
  const tracker = new ViewabilityTracker(
    bootstrap.dwell_config.visibility_threshold,
    (event) => {
      queue.push(event);
      if (event.entity_id) feed.onVisibility(event.entity_id, event.visible === true);
    },
    stamper,
  );
  const feed: FeedView = new FeedView(root, bootstrap, {
    tracker,
    queue,
    stamper,
    onContinue: () => {
      tracker.hideAll(); // close every open interval before the horizon
      queue.push({ type: "feed_finished", client_ts_ms: stamper.now() });
      void queue.flushHard().then((delivered) => {
        if (!delivered) showToast("Still delivering your activity — answers will be kept.");
        toSurvey();
      });
    },
  });
  handles.feed = feed;
  handles.tracker = tracker;
  handles.queue = queue;

  feed.mount();

  document.addEventListener("visibilitychange", () => {
    if (document.visibilityState === "hidden") {
      tracker.hideAll();
      void queue.flush();
    }
  });
  window.addEventListener("pagehide", () => {
    tracker.hideAll();
    void queue.flush();
  });
  return handles;
}

declare global {
  interface Window {
    __FEEDLAB_BOOTSTRAP__?: SessionBootstrap;
  }
}

if (typeof window !== "undefined" && window.__FEEDLAB_BOOTSTRAP__) {
  const root = document.getElementById("feedlab-root");
  if (root) boot(root, window.__FEEDLAB_BOOTSTRAP__);
}
