// Session state: loaded images with their latents, the per-row source plan,
// attribute slider values and the sampling seed. The state is serializable;
// re-importing an exported plan reproduces the same previews because every
// preview is a deterministic function of (plan, seed) on the server.

export type SourceId = string; // "A", "B", ... or the RANDOM marker
export const RANDOM: SourceId = "RND";

export interface LoadedImage {
  id: SourceId;
  latent: number[];
  // object URL or data URL of the uploaded image, for display only
  thumbnail?: string;
}

export interface ScaleRow {
  name: string; // preset name: coarse / intermediate / fine
  range: [number, number];
  source: SourceId;
}

export interface SessionExport {
  rows: { name: string; source: SourceId }[];
  seed: number;
  latents: Record<SourceId, number[]>;
  sliders: Record<string, number>;
  base: SourceId | null;
}

export class PlanError extends Error {}

export class SessionState {
  images = new Map<SourceId, LoadedImage>();
  rows: ScaleRow[] = [];
  seed = 0;
  sliders = new Map<string, number>();
  base: SourceId | null = null; // image the attribute panel edits

  constructor(presets: Record<string, [number, number]>, order: string[] = ["coarse", "intermediate", "fine"]) {
    for (const name of order) {
      if (name in presets) {
        this.rows.push({ name, range: presets[name], source: RANDOM });
      }
    }
    if (this.rows.length === 0) {
      throw new PlanError("service exposes no scale presets");
    }
  }

  addImage(img: LoadedImage): void {
    this.images.set(img.id, img);
    if (this.base === null) this.base = img.id;
    // first image becomes the default source everywhere
    for (const row of this.rows) {
      if (row.source === RANDOM && this.images.size === 1) row.source = img.id;
    }
  }

  setRowSource(name: string, source: SourceId): void {
    const row = this.rows.find((r) => r.name === name);
    if (!row) throw new PlanError(`unknown scale row ${name}`);
    if (source !== RANDOM && !this.images.has(source)) {
      throw new PlanError(`unknown source ${source}`);
    }
    row.source = source;
  }

  /** Every scale row is covered by exactly one source. */
  checkInvariant(): void {
    const seen = new Set<string>();
    for (const row of this.rows) {
      if (seen.has(row.name)) throw new PlanError(`duplicate row ${row.name}`);
      seen.add(row.name);
      if (row.source !== RANDOM && !this.images.has(row.source)) {
        throw new PlanError(`row ${row.name} references missing source ${row.source}`);
      }
    }
  }

  exportPlan(): SessionExport {
    this.checkInvariant();
    const latents: Record<SourceId, number[]> = {};
    for (const [id, img] of this.images) latents[id] = img.latent;
    return {
      rows: this.rows.map((r) => ({ name: r.name, source: r.source })),
      seed: this.seed,
      latents,
      sliders: Object.fromEntries(this.sliders),
      base: this.base,
    };
  }

  static importPlan(data: SessionExport, presets: Record<string, [number, number]>): SessionState {
    const s = new SessionState(presets, data.rows.map((r) => r.name));
    for (const [id, latent] of Object.entries(data.latents)) {
      s.images.set(id, { id, latent });
    }
    for (const row of data.rows) s.setRowSource(row.name, row.source);
    s.seed = data.seed;
    s.base = data.base;
    for (const [k, v] of Object.entries(data.sliders ?? {})) s.sliders.set(k, v);
    s.checkInvariant();
    return s;
  }
}

// --- request composition ------------------------------------------------------

export type PreviewRequest =
  | { kind: "decode"; latent: number[] }
  | { kind: "mix"; latentA: number[]; latentB: number[]; rangeB: [number, number] }
  | { kind: "sample"; fixedLatent: number[]; fixedRange: [number, number]; seed: number };

/**
 * Translate the per-row plan into one service call.
 *
 * Two distinct image sources are expressible as a single /mix because with
 * contiguous scale rows either the B-rows or the A-rows form one interval
 * (if B's rows are split, swap roles). Random rows require the remaining
 * rows to agree on one source and be contiguous, matching /sample.
 */
export function composePreview(state: SessionState): PreviewRequest {
  state.checkInvariant();
  const rows = state.rows;
  const latentOf = (id: SourceId) => {
    const img = state.images.get(id);
    if (!img) throw new PlanError(`no latent for source ${id}`);
    return img.latent;
  };

  const span = (idxs: number[]): [number, number] => [
    Math.min(...idxs.map((i) => rows[i].range[0])),
    Math.max(...idxs.map((i) => rows[i].range[1])),
  ];
  const contiguous = (idxs: number[]) => {
    const sorted = [...idxs].sort((a, b) => a - b);
    return sorted.every((v, k) => k === 0 || v === sorted[k - 1] + 1);
  };

  const randomIdx = rows.flatMap((r, i) => (r.source === RANDOM ? [i] : []));
  if (randomIdx.length > 0) {
    const fixedIdx = rows.flatMap((r, i) => (r.source !== RANDOM ? [i] : []));
    if (fixedIdx.length === 0) {
      throw new PlanError("fully random plans need at least one fixed row; load an image first");
    }
    const fixedSources = new Set(fixedIdx.map((i) => rows[i].source));
    if (fixedSources.size > 1) {
      throw new PlanError("with random rows, the fixed rows must share one source");
    }
    if (!contiguous(fixedIdx)) {
      throw new PlanError("with random rows, the fixed rows must be adjacent scales");
    }
    const src = fixedIdx.length ? rows[fixedIdx[0]].source : null;
    return {
      kind: "sample",
      fixedLatent: latentOf(src as SourceId),
      fixedRange: span(fixedIdx),
      seed: state.seed,
    };
  }

  const sources = [...new Set(rows.map((r) => r.source))];
  if (sources.length === 1) {
    return { kind: "decode", latent: latentOf(sources[0]) };
  }
  if (sources.length === 2) {
    let [a, b] = sources;
    let bIdx = rows.flatMap((r, i) => (r.source === b ? [i] : []));
    if (!contiguous(bIdx)) {
      [a, b] = [b, a];
      bIdx = rows.flatMap((r, i) => (r.source === b ? [i] : []));
    }
    if (!contiguous(bIdx)) {
      throw new PlanError("row assignment is not expressible as a single mix");
    }
    return {
      kind: "mix",
      latentA: latentOf(a),
      latentB: latentOf(b),
      rangeB: span(bIdx),
    };
  }
  throw new PlanError("at most two image sources per preview (plus random rows)");
}
