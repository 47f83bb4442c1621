/** Blinded trial presentation: fixed letterboxed viewport, two buttons.
 *
 * The only trial-specific things that ever reach this DOM are the image
 * bytes and the progress counter. Buttons stay disabled from submit until
 * the next trial is on screen.
 */
import { ApiClient } from "./api.js";
import { StudyFlow, type StudyState } from "./study.js";

export class StudyView {
  flow: StudyFlow | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
    private readonly onSessionChange: (sessionId: string) => void = () => {},
  ) {
    this.root.innerHTML = template();
    this.bind();
  }

  private el<T extends HTMLElement>(selector: string): T {
    const node = this.root.querySelector(selector);
    if (!node) throw new Error(`missing ${selector}`);
    return node as T;
  }

  private bind(): void {
    this.el<HTMLButtonElement>("#study-create").addEventListener("click", () => {
      const n = Number(this.el<HTMLInputElement>("#study-n").value);
      const seed = Number(this.el<HTMLInputElement>("#study-seed").value);
      void this.createSession(n, seed);
    });
    this.el<HTMLButtonElement>("#answer-real").addEventListener("click", () => {
      void this.flow?.answer("real");
    });
    this.el<HTMLButtonElement>("#answer-generated").addEventListener(
      "click",
      () => {
        void this.flow?.answer("generated");
      },
    );
    this.el<HTMLButtonElement>("#study-retry").addEventListener("click", () => {
      void this.flow?.retry();
    });
  }

  async createSession(nPerClass: number, seed: number): Promise<void> {
    try {
      const info = await this.api.createSession(nPerClass, seed);
      this.onSessionChange(info.session_id);
      await this.resume(info.session_id);
    } catch (err) {
      this.el<HTMLElement>("#study-error").hidden = false;
      this.el<HTMLElement>("#study-error").textContent = String(err);
    }
  }

  /** Attach to an existing session (fresh page load mid-study lands here). */
  async resume(sessionId: string): Promise<void> {
    this.flow = new StudyFlow(this.api, sessionId, (state) =>
      this.render(state),
    );
    await this.flow.start();
  }

  render(state: StudyState): void {
    const setup = this.el<HTMLElement>("#study-setup");
    const trial = this.el<HTMLElement>("#study-trial");
    const reportBox = this.el<HTMLElement>("#study-report");
    const errorBox = this.el<HTMLElement>("#study-error");
    const retry = this.el<HTMLButtonElement>("#study-retry");
    setup.hidden = state.phase !== "idle";
    trial.hidden = !(state.phase === "answering" || state.phase === "submitting"
      || state.phase === "loading");
    reportBox.hidden = state.phase !== "done";
    errorBox.hidden = state.phase !== "error";
    retry.hidden = state.phase !== "error";

    const busy = state.phase !== "answering";
    this.el<HTMLButtonElement>("#answer-real").disabled = busy;
    this.el<HTMLButtonElement>("#answer-generated").disabled = busy;

    if (state.progress) {
      const current = Math.min(state.progress.answered + 1, state.progress.total);
      this.el<HTMLElement>("#study-progress").textContent =
        state.phase === "done"
          ? `${state.progress.total} / ${state.progress.total}`
          : `${current} / ${state.progress.total}`;
    }
    if (state.trial) {
      this.el<HTMLImageElement>("#trial-image").src =
        `data:image/png;base64,${state.trial.image}`;
    }
    if (state.phase === "done" && state.report) {
      this.el<HTMLElement>("#report-accuracy").textContent =
        `${(state.report.accuracy * 100).toFixed(1)}%`;
      this.el<HTMLElement>("#report-rate-authentic").textContent =
        (state.report.per_class.real_correct_rate * 100).toFixed(1) + "%";
      this.el<HTMLElement>("#report-rate-modelmade").textContent =
        (state.report.per_class.generated_correct_rate * 100).toFixed(1) + "%";
    }
    if (state.phase === "error" && state.error) {
      errorBox.textContent = state.error;
    }
  }
}

function template(): string {
  return `
  <section class="study-view">
    <div id="study-setup">
      <label>trials per class
        <input type="number" id="study-n" value="10" min="1" />
      </label>
      <label>seed <input type="number" id="study-seed" value="0" /></label>
      <button id="study-create">start session</button>
    </div>
    <div id="study-trial" hidden>
      <div class="trial-viewport">
        <img id="trial-image" alt="trial" />
      </div>
      <div class="trial-controls">
        <button id="answer-real">REAL</button>
        <button id="answer-generated">GENERATED</button>
        <span id="study-progress" class="progress"></span>
      </div>
    </div>
    <div id="study-report" hidden>
      <h2>session report</h2>
      <dl>
        <dt>accuracy</dt><dd id="report-accuracy">–</dd>
        <dt>correct on authentic</dt><dd id="report-rate-authentic">–</dd>
        <dt>correct on model-made</dt><dd id="report-rate-modelmade">–</dd>
      </dl>
    </div>
    <div id="study-error" class="error" hidden></div>
    <button id="study-retry" hidden>retry</button>
  </section>`;
}
