import { beforeEach, describe, expect, it } from "vitest";

import {
  ApiError,
  Client,
  type AdvancePayload,
  type CreatePayload,
  type MetricsPayload,
  type QueryPayload,
  type RoundRecord,
} from "../src/api.js";
import { App, installKeyboard } from "../src/ui.js";

function descriptors(n: number, round = 1): QueryPayload {
  return {
    session_id: "sess",
    state: "awaiting_labels",
    round,
    remaining: n,
    query: Array.from({ length: n }, (_, i) => ({
      sample_id: `s${i}`,
      has_image: false,
      coords: [0.1 * i, -0.1 * i] as [number, number],
      label: null,
    })),
  };
}

class FakeClient extends Client {
  labels: Record<string, string> = {};
  failWith: ApiError | Error | null = null;
  advanced = 0;
  metricsCalls = 0;
  rounds: RoundRecord[] = [];
  nextAdvance: AdvancePayload | null = null;

  constructor(private size: number) {
    super("");
  }

  override async createSession(): Promise<CreatePayload> {
    return {
      ...descriptors(this.size),
      budget: this.size,
      rounds: 2,
      id_class_names: ["alpha", "beta", "gamma"],
      pool_scatter: [
        [0, 0],
        [0.5, 0.5],
      ],
    };
  }

  override async getQuery(): Promise<QueryPayload> {
    return descriptors(this.size);
  }

  override async postLabel(
    _session: string,
    sampleId: string,
    value: string,
  ): Promise<{ remaining: number }> {
    if (this.failWith) throw this.failWith;
    this.labels[sampleId] = value;
    return { remaining: this.size - Object.keys(this.labels).length };
  }

  override async advance(): Promise<AdvancePayload> {
    this.advanced += 1;
    if (this.nextAdvance) return this.nextAdvance;
    return descriptors(this.size, 2);
  }

  override async getMetrics(): Promise<MetricsPayload> {
    this.metricsCalls += 1;
    return { session_id: "sess", state: "awaiting_labels", rounds: this.rounds };
  }
}

async function freshApp(size = 3): Promise<{ app: App; fake: FakeClient; root: HTMLElement }> {
  document.body.innerHTML = '<div id="app"></div>';
  const root = document.getElementById("app") as HTMLElement;
  const fake = new FakeClient(size);
  const app = new App(root, fake);
  await app.start();
  return { app, fake, root };
}

function patchCells(root: HTMLElement): HTMLElement[] {
  return Array.from(root.querySelectorAll("figure.patch"));
}

describe("grid rendering", () => {
  it("shows one cell per queried sample with palette and scatter fallback", async () => {
    const { root } = await freshApp(3);
    expect(patchCells(root)).toHaveLength(3);
    expect(root.querySelectorAll("button.palette")).toHaveLength(4); // 3 classes + non-target
    expect(root.querySelectorAll("svg.scatter").length).toBe(3);
  });

  it("disables advance until every patch is committed", async () => {
    const { app, root } = await freshApp(2);
    const advance = () => root.querySelector<HTMLButtonElement>("#advance")!;
    expect(advance().disabled).toBe(true);
    await app.labelPatch("s0", "class:0");
    expect(advance().disabled).toBe(true);
    await app.labelPatch("s1", "non-target");
    expect(advance().disabled).toBe(false);
  });
});

describe("labeling through the DOM", () => {
  it("palette click labels the selected patch and advances selection", async () => {
    const { app, fake, root } = await freshApp(2);
    (root.querySelector('button.palette[data-value="class:1"]') as HTMLButtonElement).click();
    await app.settle();
    expect(fake.labels).toEqual({ s0: "class:1" });
    const cells = patchCells(app["root"] as HTMLElement);
    expect(cells[0].dataset.status).toBe("committed");
    expect(cells[1].classList.contains("selected")).toBe(true);
  });

  it("keyboard digits label the selected patch", async () => {
    const { app, fake } = await freshApp(2);
    installKeyboard(app, document);
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "2" }));
    await app.settle();
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "0" }));
    await app.settle();
    expect(fake.labels).toEqual({ s0: "class:1", s1: "non-target" });
  });

  it("a 4xx reverts the patch and shows the error inline", async () => {
    const { app, fake, root } = await freshApp(1);
    fake.failWith = new ApiError(409, "sample s0 is already labeled");
    await app.labelPatch("s0", "class:0");
    const cell = patchCells(root)[0];
    expect(cell.dataset.status).toBe("unlabeled");
    expect(cell.dataset.choice).toBe("");
    expect(cell.querySelector(".patch-error")?.textContent).toContain("409");
    expect(root.querySelector("#retry-banner")).toBeNull();
  });

  it("a network failure reverts the patch and offers a retry banner", async () => {
    const { app, fake, root } = await freshApp(1);
    fake.failWith = new TypeError("fetch failed");
    await app.labelPatch("s0", "class:0");
    expect(patchCells(root)[0].dataset.status).toBe("unlabeled");
    expect(root.querySelector("#retry-banner")?.textContent).toContain("not saved");
    fake.failWith = null;
    (root.querySelector("#retry-button") as HTMLButtonElement).click();
    await app.settle();
    expect(fake.labels).toEqual({ s0: "class:0" });
    expect(root.querySelector("#retry-banner")).toBeNull();
  });
});

describe("rounds and metrics", () => {
  it("advance renders the next round and refreshes metrics from the server", async () => {
    const { app, fake, root } = await freshApp(1);
    await app.labelPatch("s0", "class:0");
    fake.rounds = [
      {
        round: 1,
        query_ids: ["s0"],
        id_hits: 1,
        ood_hits: 0,
        qp: 1.0,
        aqr: 0.25,
        macc: 0.875,
        loss_trace: [],
      },
    ];
    (root.querySelector("#advance") as HTMLButtonElement).click();
    await app.settle();
    expect(fake.advanced).toBe(1);
    expect(root.querySelector("#status")?.textContent).toContain("Round 2");
    const row = root.querySelector('#metrics-table tr[data-round="1"]')!;
    expect(row.querySelector('[data-cell="qp"]')?.textContent).toBe("1.000");
    expect(row.querySelector('[data-cell="aqr"]')?.textContent).toBe("0.250");
    expect(row.querySelector('[data-cell="macc"]')?.textContent).toBe("0.875");
    expect(root.querySelector("#chart svg")).not.toBeNull();
    expect(fake.metricsCalls).toBeGreaterThan(0);
  });

  it("done state hides the grid and shows the final report", async () => {
    const { app, fake, root } = await freshApp(1);
    await app.labelPatch("s0", "non-target");
    const final: RoundRecord = {
      round: 2,
      query_ids: ["s0"],
      id_hits: 0,
      ood_hits: 1,
      qp: 0.0,
      aqr: null,
      macc: null,
      loss_trace: [],
    };
    fake.nextAdvance = { session_id: "sess", state: "done", report: [final] };
    fake.rounds = [final];
    await app.advanceRound();
    expect(root.querySelector("#grid")).toBeNull();
    expect(root.querySelector("#advance")).toBeNull();
    expect(root.querySelector("#status")?.textContent).toContain("complete");
    expect(root.querySelector('[data-cell="aqr"]')?.textContent).toBe("—");
  });
});
