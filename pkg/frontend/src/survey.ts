// Post-feed survey: renders the question list, blocks submission until
// every question is answered, retries transient failures without losing
// entered responses, then shows the completion code.

import { ApiError, SessionApi } from "./api.js";
import { SurveyQuestion } from "./types.js";

export class SurveyView {
  private values = new Map<string, unknown>();

  constructor(
    private readonly root: HTMLElement,
    private readonly questions: SurveyQuestion[],
    private readonly api: SessionApi,
    private readonly onComplete: (token: string) => void,
  ) {}

  mount(): void {
    this.root.innerHTML = "";
    this.root.classList.add("feedlab-survey");
    const form = document.createElement("form");
    form.className = "survey-form";
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.submit();
    });
    for (const question of this.questions) {
      form.appendChild(this.renderQuestion(question));
    }
    const submit = document.createElement("button");
    submit.type = "submit";
    submit.className = "survey-submit";
    submit.textContent = "Submit";
    form.appendChild(submit);
    const status = document.createElement("p");
    status.className = "survey-status";
    form.appendChild(status);
    this.root.appendChild(form);
  }

  private renderQuestion(question: SurveyQuestion): HTMLElement {
    const field = document.createElement("fieldset");
    field.className = "survey-question";
    field.dataset.questionId = question.question_id;
    const prompt = document.createElement("legend");
    prompt.textContent = question.prompt;
    field.appendChild(prompt);

    if (question.response_type === "likert7") {
      for (let value = 1; value <= 7; value++) {
        const label = document.createElement("label");
        const radio = document.createElement("input");
        radio.type = "radio";
        radio.name = question.question_id;
        radio.value = String(value);
        radio.addEventListener("change", () =>
          this.setValue(question.question_id, value),
        );
        label.append(radio, document.createTextNode(String(value)));
        field.appendChild(label);
      }
    } else if (question.response_type === "numeric") {
      const input = document.createElement("input");
      input.type = "number";
      input.name = question.question_id;
      input.addEventListener("input", () => {
        const parsed = input.value === "" ? undefined : Number(input.value);
        this.setValue(question.question_id, parsed);
      });
      field.appendChild(input);
    } else {
      const area = document.createElement("textarea");
      area.name = question.question_id;
      area.addEventListener("input", () =>
        this.setValue(question.question_id, area.value || undefined),
      );
      field.appendChild(area);
    }
    const message = document.createElement("p");
    message.className = "question-message";
    field.appendChild(message);
    return field;
  }

  setValue(questionId: string, value: unknown): void {
    if (value === undefined) {
      this.values.delete(questionId);
    } else {
      this.values.set(questionId, value);
    }
  }

  /** Unanswered questions get inline messages; nothing is submitted. */
  validate(): boolean {
    let ok = true;
    for (const question of this.questions) {
      const message = this.root.querySelector<HTMLElement>(
        `[data-question-id="${question.question_id}"] .question-message`,
      );
      if (!this.values.has(question.question_id)) {
        ok = false;
        if (message) message.textContent = "Please answer this question.";
      } else if (message) {
        message.textContent = "";
      }
    }
    return ok;
  }

  responses(): Record<string, unknown> {
    return Object.fromEntries(this.values);
  }

  async submit(): Promise<void> {
    if (!this.validate()) return;
    const status = this.root.querySelector<HTMLElement>(".survey-status");
    try {
      const token = await this.api.postSurvey(this.responses());
      this.onComplete(token);
    } catch (error) {
      // responses stay in this.values; the participant just retries
      if (status) {
        status.textContent =
          error instanceof ApiError && error.status < 500
            ? `Could not submit: ${error.message}`
            : "Network problem — your answers are kept, press Submit again.";
      }
    }
  }
}

export function renderCompletion(root: HTMLElement, token: string): void {
  root.innerHTML = "";
  root.classList.add("feedlab-complete");
  const heading = document.createElement("h1");
  heading.textContent = "Thank you!";
  const text = document.createElement("p");
  text.textContent = "Your completion code:";
  const code = document.createElement("code");
  code.className = "completion-token";
  code.textContent = token;
  root.append(heading, text, code);
}
