// DOM wiring for the two panels. All computation happens server-side; this
// file only moves bytes between inputs, the API client and <img> elements.

import { StudioApi } from "./api.js";
import { PanelSequencer, debounce } from "./requests.js";
import {
  PlanError,
  RANDOM,
  SessionState,
  SourceId,
  composePreview,
} from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function b64ToUrl(b64: string): string {
  return `data:image/png;base64,${b64}`;
}

export class StudioUi {
  private state!: SessionState;
  private previewSeq = new PanelSequencer();
  private attrSeq = new PanelSequencer();
  private nextSourceId = 0;

  constructor(private api: StudioApi) {}

  async boot(): Promise<void> {
    const info = await this.api.modelInfo();
    this.state = new SessionState(info.layer_range_presets);
    el<HTMLSpanElement>("model-line").textContent =
      `${info.checkpoint_id} · ${info.resolution}px · latent ${info.latent_dim} · ` +
      `digest ${info.checkpoint_digest.slice(0, 12)}`;
    this.renderRows();
    this.renderAttributes(info.attributes);
    el<HTMLInputElement>("upload").addEventListener("change", (e) => this.onUpload(e));
    el<HTMLButtonElement>("resample").addEventListener("click", () => {
      this.state.seed = (this.state.seed + 1) >>> 0;
      void this.refreshPreview();
    });
    el<HTMLButtonElement>("export").addEventListener("click", () => this.onExport());
    el<HTMLButtonElement>("import").addEventListener("click", () => void this.onImport());
  }

  private setError(msg: string): void {
    el<HTMLDivElement>("error").textContent = msg;
  }

  private sourceIds(): SourceId[] {
    return [...this.state.images.keys()];
  }

  private async onUpload(event: Event): Promise<void> {
    const input = event.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    try {
      const encoded = await this.api.encode(file);
      const id = String.fromCharCode(65 + this.nextSourceId++); // A, B, C...
      this.state.addImage({ id, latent: encoded.latent, thumbnail: URL.createObjectURL(file) });
      this.renderSources();
      this.renderRows();
      this.setError("");
      await this.refreshPreview();
    } catch (err) {
      this.setError(String(err));
    } finally {
      input.value = "";
    }
  }

  private renderSources(): void {
    const host = el<HTMLDivElement>("sources");
    host.innerHTML = "";
    for (const [id, img] of this.state.images) {
      const chip = document.createElement("div");
      chip.className = "chip";
      if (img.thumbnail) {
        const im = document.createElement("img");
        im.src = img.thumbnail;
        chip.appendChild(im);
      }
      const label = document.createElement("span");
      label.textContent = id;
      chip.appendChild(label);
      host.appendChild(chip);
    }
  }

  private renderRows(): void {
    const host = el<HTMLDivElement>("rows");
    host.innerHTML = "";
    for (const row of this.state.rows) {
      const line = document.createElement("div");
      line.className = "row";
      const name = document.createElement("span");
      name.textContent = `${row.name} (blocks ${row.range[0]}-${row.range[1]})`;
      const select = document.createElement("select");
      for (const opt of [...this.sourceIds(), RANDOM]) {
        const o = document.createElement("option");
        o.value = opt;
        o.textContent = opt === RANDOM ? "random" : `image ${opt}`;
        o.selected = row.source === opt;
        select.appendChild(o);
      }
      select.addEventListener("change", () => {
        try {
          this.state.setRowSource(row.name, select.value);
          this.setError("");
          void this.refreshPreview();
        } catch (err) {
          this.setError(String(err));
        }
      });
      line.append(name, select);
      host.appendChild(line);
    }
  }

  async refreshPreview(): Promise<void> {
    if (this.state.images.size === 0) return;
    let request;
    try {
      request = composePreview(this.state);
    } catch (err) {
      if (err instanceof PlanError) {
        this.setError(err.message);
        return; // keep the previous preview and state
      }
      throw err;
    }
    await this.previewSeq.run(
      async () => {
        switch (request.kind) {
          case "decode":
            return URL.createObjectURL(await this.api.decode(request.latent));
          case "mix":
            return URL.createObjectURL(
              await this.api.mix(request.latentA, request.latentB, request.rangeB),
            );
          case "sample": {
            const imgs = await this.api.sample(1, request.seed, request.fixedLatent,
                                               request.fixedRange);
            return b64ToUrl(imgs[0]);
          }
        }
      },
      (url) => {
        el<HTMLImageElement>("preview").src = url;
        this.setError("");
      },
      (err) => this.setError(String(err)),
    );
  }

  private renderAttributes(names: string[]): void {
    const host = el<HTMLDivElement>("attributes");
    host.innerHTML = "";
    if (names.length === 0) {
      host.textContent = "no attribute vectors on the server";
      return;
    }
    for (const name of names) {
      const line = document.createElement("div");
      line.className = "row";
      const label = document.createElement("span");
      label.textContent = name;
      const slider = document.createElement("input");
      slider.type = "range";
      slider.min = "-2";
      slider.max = "2";
      slider.step = "0.05";
      slider.value = "0";
      const value = document.createElement("span");
      value.textContent = "0.00";
      const push = debounce(() => void this.applyAttribute(name, Number(slider.value)), 150);
      slider.addEventListener("input", () => {
        value.textContent = Number(slider.value).toFixed(2);
        this.state.sliders.set(name, Number(slider.value));
        push();
      });
      line.append(label, slider, value);
      host.appendChild(line);
    }
  }

  private async applyAttribute(name: string, strength: number): Promise<void> {
    const base = this.state.base && this.state.images.get(this.state.base);
    if (!base) {
      this.setError("upload an image before editing attributes");
      return;
    }
    await this.attrSeq.run(
      async () => URL.createObjectURL(await this.api.applyAttribute(base.latent, name, strength)),
      (url) => {
        el<HTMLImageElement>("attr-preview").src = url;
        this.setError("");
      },
      (err) => this.setError(String(err)),
    );
  }

  private onExport(): void {
    try {
      const data = JSON.stringify(this.state.exportPlan(), null, 1);
      el<HTMLTextAreaElement>("plan-io").value = data;
      this.setError("");
    } catch (err) {
      this.setError(String(err));
    }
  }

  private async onImport(): Promise<void> {
    try {
      const info = await this.api.modelInfo();
      const data = JSON.parse(el<HTMLTextAreaElement>("plan-io").value);
      this.state = SessionState.importPlan(data, info.layer_range_presets);
      this.nextSourceId = this.state.images.size;
      this.renderSources();
      this.renderRows();
      this.setError("");
      await this.refreshPreview();
    } catch (err) {
      this.setError(String(err));
    }
  }
}
