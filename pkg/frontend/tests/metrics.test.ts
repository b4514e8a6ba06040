import { beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient, MetricsReport } from "../src/api.js";
import {
  TrainController,
  cycleSeries,
  efficiencySeries,
  renderChart,
} from "../src/metrics.js";

function report(overrides: Partial<MetricsReport> = {}): MetricsReport {
  return {
    auroc: 0.9,
    auprc: 0.5,
    efficiency: [
      [1, 40],
      [10, 80],
      [100, 100],
    ],
    precision_at: { "0.1": 100, "1": 60 },
    n_anomalies: 20,
    n_total: 2000,
    ...overrides,
  };
}

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("series builders", () => {
  it("three-cycle history yields three points per metric", () => {
    const history = [1, 2, 3].map((cycle) => ({
      cycle,
      report: report({ auroc: 0.8 + cycle / 100 }),
    }));
    expect(cycleSeries(history, "auroc")).toHaveLength(3);
    expect(cycleSeries(history, "auprc")).toHaveLength(3);
    expect(cycleSeries(history, "auroc")[2].x).toBe(3);
    expect(cycleSeries(history, "auroc")[2].y).toBeCloseTo(0.83, 10);
  });

  it("efficiency series always contains the (100, 100) endpoint", () => {
    const points = efficiencySeries(report());
    expect(points.at(-1)).toEqual({ x: 100, y: 100 });
    const truncated = efficiencySeries(report({ efficiency: [[1, 40]] }));
    expect(truncated.some((p) => p.x === 100 && p.y === 100)).toBe(true);
  });
});

describe("renderChart", () => {
  it("draws one polyline and dot set per series", () => {
    const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
    renderChart(svg as SVGSVGElement, [
      { points: [{ x: 1, y: 0.5 }, { x: 2, y: 0.7 }], color: "red", label: "auroc" },
      { points: [{ x: 1, y: 0.2 }], color: "blue", label: "auprc" },
    ]);
    expect(svg.querySelectorAll("polyline")).toHaveLength(2);
    expect(svg.querySelectorAll("circle[data-series=auroc]")).toHaveLength(2);
  });

  it("empty series leaves only a cleared chart", () => {
    const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
    renderChart(svg as SVGSVGElement, [{ points: [], color: "red", label: "x" }]);
    expect(svg.querySelectorAll("polyline")).toHaveLength(0);
  });
});

describe("TrainController", () => {
  let fetchMock: ReturnType<typeof vi.fn>;
  let states: string[];
  let controller: TrainController;

  beforeEach(() => {
    fetchMock = vi.fn();
    vi.stubGlobal("fetch", fetchMock);
    states = [];
    controller = new TrainController(new ApiClient(), (s) => states.push(s));
  });

  it("successful start transitions to training", async () => {
    fetchMock.mockImplementationOnce(async () => jsonResponse({ started: true }, 202));
    await controller.start();
    expect(states).toEqual(["starting", "training"]);
  });

  it("409 lock puts the button into the disabled training state", async () => {
    fetchMock.mockImplementationOnce(async () => jsonResponse({ detail: "busy" }, 409));
    await controller.start();
    expect(controller.state).toBe("training");
    expect(states.at(-1)).toBe("training");
  });

  it("non-409 failure returns to idle and rethrows", async () => {
    fetchMock.mockImplementationOnce(async () => jsonResponse({ detail: "oops" }, 500));
    await expect(controller.start()).rejects.toThrow();
    expect(controller.state).toBe("idle");
  });

  it("start is a no-op while already training", async () => {
    fetchMock.mockImplementation(async () => jsonResponse({ started: true }, 202));
    await controller.start();
    await controller.start();
    expect(fetchMock).toHaveBeenCalledTimes(1);
  });

  it("polling tracks progress then fires completion once idle", async () => {
    const done = vi.fn();
    controller = new TrainController(new ApiClient(), (s) => states.push(s), done);
    fetchMock.mockImplementationOnce(async () => jsonResponse({ started: true }, 202));
    await controller.start();
    fetchMock.mockImplementationOnce(async () =>
      jsonResponse({ training: true, train_progress: 0.5 }),
    );
    expect(await controller.poll()).toBe(true);
    expect(controller.progress).toBe(0.5);
    fetchMock.mockImplementationOnce(async () =>
      jsonResponse({ training: false, train_progress: 0 }),
    );
    expect(await controller.poll()).toBe(false);
    expect(controller.state).toBe("idle");
    expect(done).toHaveBeenCalledTimes(1);
  });
});
