// Pure session-view state: what the grid shows and when advancing is legal.
// The server is the source of truth; a patch only counts as committed once
// the server has acknowledged its label.

import type { QueryPayload, SampleDescriptor } from "./api.js";

export type PatchStatus = "unlabeled" | "saving" | "committed";

export interface PatchState {
  sampleId: string;
  hasImage: boolean;
  coords: [number, number];
  choice: string | null;
  status: PatchStatus;
  error: string | null;
}

export interface SessionView {
  sessionId: string;
  round: number;
  state: string;
  patches: PatchState[];
  selected: number;
}

export const NON_TARGET = "non-target";

function patchFromDescriptor(sample: SampleDescriptor): PatchState {
  return {
    sampleId: sample.sample_id,
    hasImage: sample.has_image,
    coords: sample.coords,
    choice: sample.label,
    status: sample.label === null ? "unlabeled" : "committed",
    error: null,
  };
}

export function fromQuery(payload: QueryPayload): SessionView {
  const patches = payload.query.map(patchFromDescriptor);
  return {
    sessionId: payload.session_id,
    round: payload.round,
    state: payload.state,
    patches,
    selected: firstUnlabeled(patches),
  };
}

export function firstUnlabeled(patches: PatchState[]): number {
  const index = patches.findIndex((p) => p.status === "unlabeled");
  return index === -1 ? 0 : index;
}

export function canAdvance(view: SessionView): boolean {
  return view.patches.length > 0 && view.patches.every((p) => p.status === "committed");
}

export function remaining(view: SessionView): number {
  return view.patches.filter((p) => p.status !== "committed").length;
}

function updatePatch(
  view: SessionView,
  sampleId: string,
  update: (patch: PatchState) => PatchState,
): SessionView {
  return {
    ...view,
    patches: view.patches.map((p) => (p.sampleId === sampleId ? update(p) : p)),
  };
}

export function markSaving(view: SessionView, sampleId: string, choice: string): SessionView {
  return updatePatch(view, sampleId, (p) => ({
    ...p,
    choice,
    status: "saving",
    error: null,
  }));
}

export function markCommitted(view: SessionView, sampleId: string): SessionView {
  const next = updatePatch(view, sampleId, (p) => ({ ...p, status: "committed" }));
  return { ...next, selected: firstUnlabeled(next.patches) };
}

export function markFailed(view: SessionView, sampleId: string, error: string): SessionView {
  // failed optimistic labels fully revert; nothing un-acknowledged survives
  return updatePatch(view, sampleId, (p) => ({
    ...p,
    choice: null,
    status: "unlabeled",
    error,
  }));
}

export function select(view: SessionView, index: number): SessionView {
  if (index < 0 || index >= view.patches.length) return view;
  return { ...view, selected: index };
}

// Keyboard palette: digits 1..C pick the ID class, 0 picks non-target.
export function labelValueForKey(key: string, classCount: number): string | null {
  if (key === "0") return NON_TARGET;
  if (/^[1-9]$/.test(key)) {
    const classIndex = Number(key) - 1;
    if (classIndex < classCount) return `class:${classIndex}`;
  }
  return null;
}
