/** Blinded study flow state machine, independent of the DOM.
 *
 * The server decides which trial comes next, so resuming after a reload is
 * just "start again with the same session id". Double submission is blocked
 * here (answer() is a no-op outside the answering phase) and rejected
 * server-side as well.
 */
import {
  ApiClient,
  ApiError,
  isDone,
  type Answer,
  type Progress,
  type StudyReport,
  type TrialPayload,
} from "./api.js";

export type StudyPhase =
  | "idle"
  | "loading"
  | "answering"
  | "submitting"
  | "done"
  | "error";

export interface StudyState {
  phase: StudyPhase;
  trial: TrialPayload | null;
  progress: Progress | null;
  report: StudyReport | null;
  error: string | null;
}

export class StudyFlow {
  state: StudyState = {
    phase: "idle",
    trial: null,
    progress: null,
    report: null,
    error: null,
  };

  constructor(
    private readonly api: ApiClient,
    readonly sessionId: string,
    private readonly onChange: (state: StudyState) => void = () => {},
  ) {}

  private set(patch: Partial<StudyState>): void {
    this.state = { ...this.state, ...patch };
    this.onChange(this.state);
  }

  /** Load the first unanswered trial (also the resume path after reload). */
  async start(): Promise<void> {
    this.set({ phase: "loading", error: null });
    await this.advance();
  }

  private async advance(): Promise<void> {
    try {
      const next = await this.api.nextTrial(this.sessionId);
      if (isDone(next)) {
        const report = await this.api.report(this.sessionId);
        this.set({
          phase: "done",
          trial: null,
          progress: { answered: next.answered, total: next.total },
          report,
        });
        return;
      }
      this.set({ phase: "answering", trial: next, progress: next.progress });
    } catch (err) {
      this.set({ phase: "error", error: describeError(err) });
    }
  }

  /** Submit a forced choice for the current trial; ignored while busy. */
  async answer(answer: Answer): Promise<void> {
    if (this.state.phase !== "answering" || this.state.trial === null) {
      return;
    }
    const trialIndex = this.state.trial.trial_index;
    this.set({ phase: "submitting" });
    try {
      await this.api.submitResponse(this.sessionId, trialIndex, answer);
    } catch (err) {
      if (err instanceof ApiError && err.code === "DUPLICATE_RESPONSE") {
        // lost race with an earlier submit; fall through and advance
      } else {
        this.set({ phase: "error", error: describeError(err) });
        return;
      }
    }
    await this.advance();
  }

  /** Retry affordance after a network failure. */
  async retry(): Promise<void> {
    await this.start();
  }
}

export function describeError(err: unknown): string {
  if (err instanceof ApiError) return `${err.code}: ${err.detail}`;
  if (err instanceof Error) return `network failure: ${err.message}`;
  return "network failure";
}
