// DOM layer: renders the patch grid, palette, metrics, and wires events.
// Full re-render on every state change keeps the logic flat; batches are
// small (tens of patches), so this is plenty fast.

import {
  ApiError,
  Client,
  type CreateSessionOptions,
  type DonePayload,
  type QueryPayload,
  type RoundRecord,
} from "./api.js";
import { metricsChartSvg } from "./chart.js";
import {
  canAdvance,
  fromQuery,
  labelValueForKey,
  markCommitted,
  markFailed,
  markSaving,
  NON_TARGET,
  remaining,
  select,
  type PatchState,
  type SessionView,
} from "./state.js";

const SCATTER_LIMIT = 150;

export class App {
  view: SessionView | null = null;
  classNames: string[] = [];
  scatter: [number, number][] = [];
  metrics: RoundRecord[] = [];
  totalRounds = 0;
  banner: { message: string; retry: () => Promise<void> } | null = null;
  private inflight: Promise<void> = Promise.resolve();

  constructor(
    private readonly root: HTMLElement,
    readonly client: Client,
  ) {}

  /** Await every in-flight request issued by event handlers. */
  settle(): Promise<void> {
    return this.inflight;
  }

  private track(work: Promise<void>): Promise<void> {
    this.inflight = this.inflight.then(() => work).catch(() => {});
    return work;
  }

  async start(options: CreateSessionOptions = {}): Promise<void> {
    const created = await this.client.createSession(options);
    this.classNames = created.id_class_names;
    this.scatter = created.pool_scatter.filter(
      (_, i) => i % Math.max(1, Math.floor(created.pool_scatter.length / SCATTER_LIMIT)) === 0,
    );
    this.totalRounds = created.rounds;
    this.view = fromQuery(created);
    await this.refreshMetrics();
    this.render();
  }

  // -- actions ---------------------------------------------------------------

  async labelPatch(sampleId: string, value: string): Promise<void> {
    if (!this.view || this.view.state === "done") return;
    this.view = markSaving(this.view, sampleId, value);
    this.render();
    try {
      await this.client.postLabel(this.view.sessionId, sampleId, value);
      this.view = markCommitted(this.view, sampleId);
      this.banner = null;
    } catch (error) {
      if (error instanceof ApiError) {
        this.view = markFailed(this.view, sampleId, `${error.status}: ${error.message}`);
      } else {
        this.view = markFailed(this.view, sampleId, "network failure");
        this.banner = {
          message: `label for ${sampleId} was not saved (network failure)`,
          retry: () => this.labelPatch(sampleId, value),
        };
      }
    }
    this.render();
  }

  async advanceRound(): Promise<void> {
    if (!this.view || !canAdvance(this.view)) return;
    try {
      let payload = await this.client.advance(this.view.sessionId);
      while (payload.state === "training") {
        await new Promise((resolve) => setTimeout(resolve, 100));
        payload = (await this.client.getQuery(this.view.sessionId)) as QueryPayload;
      }
      if (payload.state === "done") {
        this.view = { ...this.view, state: "done", patches: [], selected: 0 };
        this.metrics = (payload as DonePayload).report;
      } else {
        this.view = fromQuery(payload as QueryPayload);
      }
      this.banner = null;
      await this.refreshMetrics();
    } catch (error) {
      const message = error instanceof ApiError ? error.message : "network failure";
      this.banner = { message: `advance failed: ${message}`, retry: () => this.advanceRound() };
    }
    this.render();
  }

  async refreshMetrics(): Promise<void> {
    // displayed metrics always come from the metrics endpoint, never from
    // client-side arithmetic
    if (!this.view) return;
    const payload = await this.client.getMetrics(this.view.sessionId);
    this.metrics = payload.rounds;
  }

  handleKey(key: string): void {
    if (!this.view || this.view.state === "done") return;
    const value = labelValueForKey(key, this.classNames.length);
    if (value === null) return;
    const patch = this.view.patches[this.view.selected];
    if (!patch || patch.status === "committed") return;
    void this.track(this.labelPatch(patch.sampleId, value));
  }

  // -- rendering ---------------------------------------------------------------

  render(): void {
    if (!this.view) return;
    const done = this.view.state === "done";
    this.root.innerHTML = [
      this.renderBanner(),
      `<header><h1>Annotation session ${this.view.sessionId}</h1>`,
      done
        ? `<p id="status">All ${this.totalRounds} rounds complete.</p>`
        : `<p id="status">Round ${this.view.round} of ${this.totalRounds} — ` +
          `<span id="remaining">${remaining(this.view)}</span> patches left</p>`,
      `</header>`,
      done ? "" : this.renderPalette(),
      done ? "" : this.renderGrid(),
      done ? "" : this.renderAdvance(),
      this.renderMetrics(),
    ].join("");
    this.bind();
  }

  private renderBanner(): string {
    if (!this.banner) return "";
    return (
      `<div id="retry-banner" class="banner">` +
      `<span>${escapeHtml(this.banner.message)}</span>` +
      `<button id="retry-button">Retry</button></div>`
    );
  }

  private renderPalette(): string {
    const buttons = this.classNames
      .map(
        (name, c) =>
          `<button class="palette" data-value="class:${c}">` +
          `<kbd>${c + 1}</kbd> ${escapeHtml(name)}</button>`,
      )
      .join("");
    return (
      `<div id="palette">${buttons}` +
      `<button class="palette" data-value="${NON_TARGET}"><kbd>0</kbd> non-target</button></div>`
    );
  }

  private patchThumb(patch: PatchState): string {
    if (patch.hasImage && this.view) {
      const url = this.client.imageUrl(this.view.sessionId, patch.sampleId);
      return `<img src="${url}" alt="${patch.sampleId}" loading="lazy">`;
    }
    return this.scatterThumb(patch);
  }

  private scatterThumb(patch: PatchState): string {
    const dots = this.scatter
      .map(
        ([x, y]) =>
          `<circle cx="${(24 + x * 22).toFixed(1)}" cy="${(24 - y * 22).toFixed(1)}" r="0.7" fill="#bbb"/>`,
      )
      .join("");
    const [px, py] = patch.coords;
    return (
      `<svg class="scatter" viewBox="0 0 48 48">` +
      dots +
      `<circle cx="${(24 + px * 22).toFixed(1)}" cy="${(24 - py * 22).toFixed(1)}" r="2.4" fill="#e63946"/>` +
      `</svg>`
    );
  }

  private renderGrid(): string {
    if (!this.view) return "";
    const cells = this.view.patches
      .map((patch, index) => {
        const classes = ["patch", patch.status];
        if (index === this.view!.selected) classes.push("selected");
        const label =
          patch.choice === null
            ? "&mdash;"
            : patch.choice === NON_TARGET
              ? "non-target"
              : escapeHtml(this.classNames[Number(patch.choice.split(":")[1])] ?? patch.choice);
        const error = patch.error
          ? `<div class="patch-error">${escapeHtml(patch.error)}</div>`
          : "";
        return (
          `<figure class="${classes.join(" ")}" data-sample="${patch.sampleId}" ` +
          `data-status="${patch.status}" data-choice="${patch.choice ?? ""}" data-index="${index}">` +
          this.patchThumb(patch) +
          `<figcaption>${patch.sampleId}<br><strong>${label}</strong></figcaption>` +
          error +
          `</figure>`
        );
      })
      .join("");
    return `<div id="grid">${cells}</div>`;
  }

  private renderAdvance(): string {
    const enabled = this.view !== null && canAdvance(this.view);
    return (
      `<div id="controls"><button id="advance" ${enabled ? "" : "disabled"}>` +
      `Train &amp; next round</button></div>`
    );
  }

  private renderMetrics(): string {
    if (this.metrics.length === 0) {
      return `<section id="metrics"><h2>Metrics</h2><p>No completed rounds yet.</p></section>`;
    }
    const rows = this.metrics
      .map(
        (r) =>
          `<tr data-round="${r.round}"><td>${r.round}</td><td>${r.query_ids.length}</td>` +
          `<td>${r.id_hits}</td><td>${r.ood_hits}</td>` +
          `<td data-cell="qp">${fmt(r.qp)}</td>` +
          `<td data-cell="aqr">${fmt(r.aqr)}</td>` +
          `<td data-cell="macc">${fmt(r.macc)}</td></tr>`,
      )
      .join("");
    return (
      `<section id="metrics"><h2>Metrics</h2>` +
      `<table id="metrics-table"><thead><tr>` +
      `<th>round</th><th>queried</th><th>id</th><th>ood</th>` +
      `<th>qp</th><th>aqr</th><th>macc</th></tr></thead>` +
      `<tbody>${rows}</tbody></table>` +
      `<div id="chart">${metricsChartSvg(this.metrics)}</div></section>`
    );
  }

  private bind(): void {
    this.root.querySelectorAll<HTMLElement>("figure.patch").forEach((cell) => {
      cell.addEventListener("click", () => {
        if (!this.view) return;
        this.view = select(this.view, Number(cell.dataset.index));
        this.render();
      });
    });
    this.root.querySelectorAll<HTMLButtonElement>("button.palette").forEach((button) => {
      button.addEventListener("click", () => {
        if (!this.view) return;
        const patch = this.view.patches[this.view.selected];
        if (!patch || patch.status === "committed") return;
        void this.track(this.labelPatch(patch.sampleId, button.dataset.value ?? ""));
      });
    });
    const advance = this.root.querySelector<HTMLButtonElement>("#advance");
    advance?.addEventListener("click", () => {
      void this.track(this.advanceRound());
    });
    const retry = this.root.querySelector<HTMLButtonElement>("#retry-button");
    retry?.addEventListener("click", () => {
      const action = this.banner?.retry;
      this.banner = null;
      if (action) void this.track(action());
    });
  }
}

export function installKeyboard(app: App, target: Document): void {
  target.addEventListener("keydown", (event) => {
    app.handleKey((event as KeyboardEvent).key);
  });
}

function fmt(value: number | null): string {
  return value === null ? "—" : value.toFixed(3);
}

function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}
