/** Metrics panel: per-cycle AUROC/AUPRC lines, the efficiency curve, and the
 * train button's state machine (409 from the service means a cycle is
 * already running, so the button shows a disabled "training" state and the
 * panel keeps polling until the cycle finishes).
 */

import { ApiClient, CycleMetrics, HttpError, MetricsReport } from "./api.js";

export interface SeriesPoint {
  x: number;
  y: number;
}

export function cycleSeries(
  history: CycleMetrics[],
  metric: "auroc" | "auprc",
): SeriesPoint[] {
  return history.map((h) => ({ x: h.cycle, y: h.report[metric] }));
}

/** Efficiency curve points; the (100, 100) endpoint is always present. */
export function efficiencySeries(report: MetricsReport): SeriesPoint[] {
  const points = report.efficiency.map(([p, v]) => ({ x: p, y: v }));
  if (!points.some((pt) => pt.x === 100)) {
    points.push({ x: 100, y: 100 });
  }
  return points;
}

/** Render one polyline chart into an SVG element (log-x optional). */
export function renderChart(
  svg: SVGSVGElement,
  series: { points: SeriesPoint[]; color: string; label: string }[],
  opts: { logX?: boolean; yMax?: number } = {},
): void {
  const width = 320;
  const height = 180;
  const pad = 28;
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.innerHTML = "";
  const xs = series.flatMap((s) => s.points.map((p) => p.x));
  const ys = series.flatMap((s) => s.points.map((p) => p.y));
  if (!xs.length) return;
  const tx = (x: number) => (opts.logX ? Math.log10(Math.max(x, 1e-3)) : x);
  const xMin = Math.min(...xs.map(tx));
  const xMax = Math.max(...xs.map(tx));
  const yMax = opts.yMax ?? Math.max(...ys, 1);
  const sx = (x: number) =>
    pad + ((tx(x) - xMin) / Math.max(xMax - xMin, 1e-9)) * (width - 2 * pad);
  const sy = (y: number) => height - pad - (y / yMax) * (height - 2 * pad);

  const axis = document.createElementNS("http://www.w3.org/2000/svg", "path");
  axis.setAttribute(
    "d",
    `M ${pad} ${pad} L ${pad} ${height - pad} L ${width - pad} ${height - pad}`,
  );
  axis.setAttribute("class", "chart-axis");
  svg.appendChild(axis);

  for (const s of series) {
    if (!s.points.length) continue;
    const line = document.createElementNS("http://www.w3.org/2000/svg", "polyline");
    line.setAttribute(
      "points",
      s.points.map((p) => `${sx(p.x).toFixed(1)},${sy(p.y).toFixed(1)}`).join(" "),
    );
    line.setAttribute("fill", "none");
    line.setAttribute("stroke", s.color);
    line.setAttribute("stroke-width", "2");
    line.setAttribute("data-series", s.label);
    svg.appendChild(line);
    for (const p of s.points) {
      const dot = document.createElementNS("http://www.w3.org/2000/svg", "circle");
      dot.setAttribute("cx", sx(p.x).toFixed(1));
      dot.setAttribute("cy", sy(p.y).toFixed(1));
      dot.setAttribute("r", "3");
      dot.setAttribute("fill", s.color);
      dot.setAttribute("data-series", s.label);
      svg.appendChild(dot);
    }
  }
}

export type TrainButtonState = "idle" | "starting" | "training";

export class TrainController {
  state: TrainButtonState = "idle";
  progress = 0;

  constructor(
    private api: ApiClient,
    private onChange: (state: TrainButtonState, progress: number) => void,
    private onDone?: () => void,
  ) {}

  private set(state: TrainButtonState, progress = this.progress): void {
    this.state = state;
    this.progress = progress;
    this.onChange(state, progress);
  }

  /** Start a cycle; a 409 flips straight to the polling 'training' state. */
  async start(iterations?: number): Promise<void> {
    if (this.state !== "idle") return;
    this.set("starting");
    try {
      await this.api.postTrain(iterations);
      this.set("training", 0);
    } catch (err) {
      if (err instanceof HttpError && err.status === 409) {
        this.set("training");
      } else {
        this.set("idle");
        throw err;
      }
    }
  }

  /** One polling step; returns true while training continues. */
  async poll(): Promise<boolean> {
    const session = await this.api.getSession();
    if (session.training) {
      this.set("training", session.train_progress);
      return true;
    }
    if (this.state !== "idle") {
      this.set("idle", 0);
      this.onDone?.();
    }
    return false;
  }
}
