/** Application bootstrap: candidate review, display controls, metrics panel. */

import { ApiClient, Candidate } from "./api.js";
import {
  DisplayState,
  applyChannelMask,
  buildImageUrl,
  decodeDisplayState,
  encodeDisplayState,
} from "./display.js";
import { ReviewQueue } from "./labeling.js";
import { TrainController, cycleSeries, efficiencySeries, renderChart } from "./metrics.js";
import { setOffline, showToast } from "./toast.js";

const api = new ApiClient();
const state: { display: DisplayState; candidates: Candidate[] } = {
  display: decodeDisplayState(location.hash),
  candidates: [],
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function syncHash(): void {
  const encoded = encodeDisplayState(state.display);
  history.replaceState(null, "", encoded ? `#${encoded}` : location.pathname);
}

function renderMainImage(candidate: Candidate | null): void {
  const img = el<HTMLImageElement>("main-image");
  const caption = el<HTMLElement>("candidate-caption");
  if (!candidate) {
    img.removeAttribute("src");
    caption.textContent = "queue empty — train a cycle or load more candidates";
    return;
  }
  img.src = buildImageUrl(candidate.id, state.display);
  caption.textContent = `${candidate.id} — score ${candidate.score.toFixed(4)} (rank ${candidate.rank})`;
  const { r, g, b } = state.display.channels;
  if (!(r && g && b)) {
    img.onload = () => {
      const canvas = el<HTMLCanvasElement>("channel-canvas");
      canvas.width = img.naturalWidth;
      canvas.height = img.naturalHeight;
      const ctx = canvas.getContext("2d");
      if (!ctx) return;
      ctx.drawImage(img, 0, 0);
      const pixels = ctx.getImageData(0, 0, canvas.width, canvas.height);
      applyChannelMask(pixels.data, state.display.channels);
      ctx.putImageData(pixels, 0, 0);
      img.src = canvas.toDataURL();
      img.onload = null;
    };
  }
}

const queue = new ReviewQueue(api, {
  onAdvance: renderMainImage,
  onLabelled: (_id, _label, nLabelled) => {
    el("labelled-count").textContent = String(nLabelled);
    el("remaining-count").textContent = String(queue.remaining());
  },
  onError: (message) => showToast(`label failed: ${message} — press again to retry`, "error"),
});

async function refreshSession(): Promise<void> {
  const session = await api.getSession();
  el("labelled-count").textContent = String(session.n_labelled);
  el("cycle-count").textContent = String(session.cycle_index);
  el("unlabelled-count").textContent = String(session.n_unlabelled);
  setOffline(false);
}

async function refreshCandidates(): Promise<void> {
  const resp = await api.getCandidates(40);
  state.candidates = resp.candidates;
  queue.load(resp.candidates);
  el("remaining-count").textContent = String(queue.remaining());
  const strip = el("thumb-strip");
  strip.innerHTML = "";
  for (const candidate of resp.candidates.slice(0, 12)) {
    const thumb = document.createElement("img");
    thumb.className = "thumb";
    thumb.src = `data:image/png;base64,${candidate.thumbnail_png_base64}`;
    thumb.title = `${candidate.id} (${candidate.score.toFixed(3)})`;
    strip.appendChild(thumb);
  }
}

async function refreshMetrics(): Promise<void> {
  const metrics = await api.getMetrics();
  const empty = el("metrics-empty");
  const charts = el("metrics-charts");
  if (!metrics.history.length) {
    empty.hidden = false;
    charts.hidden = true;
    return;
  }
  empty.hidden = true;
  charts.hidden = false;
  renderChart(
    el<HTMLElement>("chart-cycles") as unknown as SVGSVGElement,
    [
      { points: cycleSeries(metrics.history, "auroc"), color: "#4c9f70", label: "auroc" },
      { points: cycleSeries(metrics.history, "auprc"), color: "#c25e4c", label: "auprc" },
    ],
    { yMax: 1 },
  );
  if (metrics.latest) {
    renderChart(
      el<HTMLElement>("chart-efficiency") as unknown as SVGSVGElement,
      [{ points: efficiencySeries(metrics.latest), color: "#3a6ea5", label: "efficiency" }],
      { logX: true, yMax: 100 },
    );
  }
}

const train = new TrainController(
  api,
  (buttonState, progress) => {
    const button = el<HTMLButtonElement>("train-button");
    button.disabled = buttonState !== "idle";
    button.textContent =
      buttonState === "idle"
        ? "train one cycle"
        : buttonState === "starting"
          ? "starting…"
          : `training ${(progress * 100).toFixed(0)}%`;
    el<HTMLProgressElement>("train-progress").value = progress;
  },
  () => {
    void refreshSession();
    void refreshCandidates();
    void refreshMetrics();
  },
);

function wireControls(): void {
  const bind = (id: string, key: "brightness" | "contrast" | "unsharp") => {
    const slider = el<HTMLInputElement>(id);
    slider.value = String(state.display[key]);
    slider.addEventListener("input", () => {
      state.display[key] = parseFloat(slider.value);
      syncHash();
      renderMainImage(queue.current());
    });
  };
  bind("slider-brightness", "brightness");
  bind("slider-contrast", "contrast");
  bind("slider-unsharp", "unsharp");

  const stretch = el<HTMLSelectElement>("select-stretch");
  stretch.value = state.display.stretch;
  stretch.addEventListener("change", () => {
    state.display.stretch = stretch.value;
    syncHash();
    renderMainImage(queue.current());
  });

  for (const channel of ["r", "g", "b"] as const) {
    const box = el<HTMLInputElement>(`channel-${channel}`);
    box.checked = state.display.channels[channel];
    box.addEventListener("change", () => {
      state.display.channels[channel] = box.checked;
      syncHash();
      renderMainImage(queue.current());
    });
  }

  el<HTMLButtonElement>("train-button").addEventListener("click", () => {
    train.start().catch((err) => showToast(`train failed: ${err.message}`, "error"));
  });
  el<HTMLButtonElement>("save-button").addEventListener("click", () => {
    api
      .saveSession()
      .then((r) => showToast(`session saved to ${r.path}`))
      .catch((err) => showToast(`save failed: ${err.message}`, "error"));
  });

  document.addEventListener("keydown", (event) => {
    if (event.target instanceof HTMLInputElement || event.target instanceof HTMLSelectElement)
      return;
    const action = queue.handleKey(event.key);
    if (action) event.preventDefault();
  });
}

async function pollLoop(): Promise<void> {
  try {
    const training = await train.poll();
    setOffline(false);
    setTimeout(pollLoop, training ? 700 : 2500);
  } catch {
    setOffline(true);
    setTimeout(pollLoop, 2500);
  }
}

async function boot(): Promise<void> {
  wireControls();
  try {
    await refreshSession();
    await refreshCandidates();
    await refreshMetrics();
  } catch (err) {
    setOffline(true);
    showToast(`service unreachable: ${err instanceof Error ? err.message : err}`, "error");
  }
  void pollLoop();
}

if (typeof document !== "undefined" && document.getElementById("main-image")) {
  void boot();
}
