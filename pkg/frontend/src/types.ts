// Wire types mirroring the server's session bootstrap and event formats.

export interface EntityContent {
  entity_id: string;
  headline: string;
  body: string;
  image_ref: string;
  source_label: string;
  tags: string[];
  created_at: string;
}

export interface Intervention {
  kind: string;
  position: number | string;
  content: string;
}

export interface FeedEntry {
  entity_id: string;
  position: number;
  shown_likes: number | null;
  shown_shares: number | null;
  intervention_before: Intervention | null;
  entity: EntityContent;
}

export interface SurveyQuestion {
  question_id: string;
  prompt: string;
  response_type: "likert7" | "free_text" | "numeric";
}

export interface DwellConfig {
  visibility_threshold: number;
  per_entity_cap_ms: number;
  idle_gap_ms: number;
}

export interface SessionBootstrap {
  session_id: string;
  experiment_id: string;
  slug: string;
  participant_id: string;
  condition_index: number;
  world_index: number;
  phase: "created" | "in_feed" | "in_survey" | "complete" | "abandoned";
  skin: "plain" | "facebook_like" | "instagram_like";
  dwell_config: DwellConfig;
  feed: FeedEntry[];
  survey: SurveyQuestion[];
  completion_token: string | null;
}

export type EventType =
  | "visibility"
  | "share"
  | "unshare"
  | "like"
  | "unlike"
  | "bookmark"
  | "unbookmark"
  | "feed_opened"
  | "feed_finished";

export interface ClientEvent {
  type: EventType;
  client_ts_ms: number;
  entity_id?: string;
  visible?: boolean;
  viewport_fraction?: number;
}

export interface BatchReply {
  accepted: number;
  rejected: { index: number; reason: string }[];
}
