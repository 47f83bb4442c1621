/** Page wiring: tab switching plus session-id persistence in the URL hash,
 * which is what makes a mid-session reload resume at the right trial. */
import { ApiClient } from "./api.js";
import { SegmentView } from "./segmentView.js";
import { StudyView } from "./studyView.js";

export function parseStudyHash(hash: string): string | null {
  const match = /^#study=([0-9a-f]+)$/.exec(hash);
  return match ? match[1] : null;
}

function activate(tab: "segment" | "study"): void {
  document.getElementById("segment-root")!.hidden = tab !== "segment";
  document.getElementById("study-root")!.hidden = tab !== "study";
  document.getElementById("tab-segment")!.classList.toggle("active", tab === "segment");
  document.getElementById("tab-study")!.classList.toggle("active", tab === "study");
}

export function boot(): void {
  const api = new ApiClient("");
  new SegmentView(document.getElementById("segment-root")!, api);
  const studyView = new StudyView(
    document.getElementById("study-root")!,
    api,
    (sessionId) => {
      window.location.hash = `study=${sessionId}`;
    },
  );

  document.getElementById("tab-segment")!.addEventListener("click", () => {
    window.location.hash = "";
    activate("segment");
  });
  document.getElementById("tab-study")!.addEventListener("click", () => {
    activate("study");
  });

  const sessionId = parseStudyHash(window.location.hash);
  if (sessionId) {
    activate("study");
    void studyView.resume(sessionId);
  } else {
    activate("segment");
  }
}

if (typeof document !== "undefined" && document.getElementById("segment-root")) {
  boot();
}
