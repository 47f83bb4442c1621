/** Upload-and-segment view: base image + tinted mask overlay + stats panel.
 *
 * The threshold slider re-issues the request and the view swaps overlay and
 * stats together only once the new response has fully rendered, so the
 * panel never shows numbers from a different mask than the one on screen.
 */
import { ApiClient, ApiError, type SegmentResponse } from "./api.js";
import { MASK_TINT, formatStats } from "./overlay.js";
import { canDraw, paintBaseImage, paintMaskOverlay } from "./pixels.js";

export class SegmentView {
  private file: Blob | null = null;
  private threshold = 0.5;
  private opacity = 0.45;
  lastResponse: SegmentResponse | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
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
    const input = this.el<HTMLInputElement>("#file-input");
    input.addEventListener("change", () => {
      const file = input.files?.[0];
      if (file) void this.segment(file);
    });
    const threshold = this.el<HTMLInputElement>("#threshold-slider");
    threshold.addEventListener("change", () => {
      void this.setThreshold(Number(threshold.value));
    });
    const opacity = this.el<HTMLInputElement>("#opacity-slider");
    opacity.addEventListener("input", () => {
      void this.setOpacity(Number(opacity.value));
    });
    const toggle = this.el<HTMLInputElement>("#overlay-toggle");
    toggle.addEventListener("change", () => {
      this.el<HTMLCanvasElement>("#overlay-canvas").style.visibility =
        toggle.checked ? "visible" : "hidden";
    });
    this.el<HTMLButtonElement>("#retry-button").addEventListener("click", () => {
      if (this.file) void this.segment(this.file);
    });
  }

  /** Upload (or re-upload) and render; the entry point tests drive. */
  async segment(file: Blob): Promise<void> {
    this.file = file;
    this.setError(null);
    this.el<HTMLElement>("#segment-status").textContent = "segmenting…";
    try {
      const response = await this.api.segment(file, this.threshold);
      await this.render(file, response);
    } catch (err) {
      this.setError(err);
    } finally {
      this.el<HTMLElement>("#segment-status").textContent = "";
    }
  }

  async setThreshold(threshold: number): Promise<void> {
    this.threshold = threshold;
    this.el<HTMLElement>("#threshold-value").textContent = threshold.toFixed(2);
    if (this.file) await this.segment(this.file);
  }

  async setOpacity(opacity: number): Promise<void> {
    this.opacity = opacity;
    if (this.file && this.lastResponse && canDraw()) {
      await paintMaskOverlay(
        this.el<HTMLCanvasElement>("#overlay-canvas"),
        this.lastResponse.mask,
        MASK_TINT,
        this.opacity,
      );
    }
  }

  private async render(file: Blob, response: SegmentResponse): Promise<void> {
    if (canDraw()) {
      await paintBaseImage(this.el<HTMLCanvasElement>("#base-canvas"), file);
      await paintMaskOverlay(
        this.el<HTMLCanvasElement>("#overlay-canvas"),
        response.mask,
        MASK_TINT,
        this.opacity,
      );
    }
    const stats = formatStats(response);
    this.el<HTMLElement>("#stat-coverage").textContent = stats.coverage;
    this.el<HTMLElement>("#stat-particles").textContent = stats.particles;
    this.el<HTMLElement>("#stat-threshold").textContent = stats.threshold;
    this.el<HTMLElement>("#stat-elapsed").textContent = stats.elapsed;
    this.el<HTMLElement>("#stat-model").textContent = stats.model;
    this.lastResponse = response;
  }

  private setError(err: unknown): void {
    const box = this.el<HTMLElement>("#segment-error");
    const retry = this.el<HTMLButtonElement>("#retry-button");
    if (err === null) {
      box.textContent = "";
      box.hidden = true;
      retry.hidden = true;
      return;
    }
    box.hidden = false;
    if (err instanceof ApiError) {
      box.textContent = `${err.code}: ${err.detail}`;
      retry.hidden = true; // server verdicts don't change on retry
    } else {
      box.textContent = "network failure — check the server and retry";
      retry.hidden = false;
    }
  }
}

function template(): string {
  return `
  <section class="segment-view">
    <div class="controls">
      <label class="file-label">
        choose image
        <input type="file" id="file-input" accept="image/png,image/jpeg" />
      </label>
      <label>
        threshold <span id="threshold-value">0.50</span>
        <input type="range" id="threshold-slider" min="0.05" max="0.95"
               step="0.05" value="0.5" />
      </label>
      <label>
        overlay <input type="checkbox" id="overlay-toggle" checked />
      </label>
      <label>
        opacity
        <input type="range" id="opacity-slider" min="0.1" max="1" step="0.05"
               value="0.45" />
      </label>
    </div>
    <div id="segment-status" class="status"></div>
    <div id="segment-error" class="error" hidden></div>
    <button id="retry-button" hidden>retry</button>
    <div class="canvas-stack">
      <canvas id="base-canvas"></canvas>
      <canvas id="overlay-canvas"></canvas>
    </div>
    <dl class="stats-panel">
      <dt>coverage</dt><dd id="stat-coverage">–</dd>
      <dt>particles</dt><dd id="stat-particles">–</dd>
      <dt>threshold</dt><dd id="stat-threshold">–</dd>
      <dt>latency</dt><dd id="stat-elapsed">–</dd>
      <dt>model</dt><dd id="stat-model">–</dd>
    </dl>
  </section>`;
}
