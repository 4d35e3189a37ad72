// Typed client for the inference service. The UI never computes anything
// model-related itself; every pixel comes from these endpoints.

export interface ModelInfo {
  latent_dim: number;
  resolution: number;
  level: number;
  n_blocks: number;
  layer_range_presets: Record<string, [number, number]>;
  checkpoint_digest: string;
  checkpoint_id: string;
  attributes: string[];
}

export interface EncodeResult {
  latent: number[];
  norm: number;
}

export class ServiceError extends Error {
  constructor(public status: number, public detail: string) {
    super(`service ${status}: ${detail}`);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class StudioApi {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body.detail);
      } catch {
        /* non-JSON error body */
      }
      throw new ServiceError(resp.status, detail);
    }
    return resp;
  }

  private async json<T>(path: string, payload?: unknown): Promise<T> {
    const init: RequestInit = payload === undefined
      ? {}
      : {
          method: "POST",
          headers: { "content-type": "application/json" },
          body: JSON.stringify(payload),
        };
    const resp = await this.request(path, init);
    return (await resp.json()) as T;
  }

  private async imageBytes(path: string, payload: unknown): Promise<Blob> {
    const resp = await this.request(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
    return await resp.blob();
  }

  modelInfo(): Promise<ModelInfo> {
    return this.json<ModelInfo>("/model/info");
  }

  async encode(image: Blob | ArrayBuffer): Promise<EncodeResult> {
    const resp = await this.request("/encode", { method: "POST", body: image as BodyInit });
    return (await resp.json()) as EncodeResult;
  }

  decode(latent: number[]): Promise<Blob> {
    return this.imageBytes("/decode", { latent });
  }

  mix(latentA: number[], latentB: number[], rangeB: string | [number, number]): Promise<Blob> {
    return this.imageBytes("/mix", { latent_a: latentA, latent_b: latentB, range_b: rangeB });
  }

  async sample(
    n: number,
    seed: number,
    fixedLatent?: number[],
    fixedRange?: string | [number, number],
  ): Promise<string[]> {
    const payload: Record<string, unknown> = { n, seed };
    if (fixedLatent !== undefined) payload.fixed_latent = fixedLatent;
    if (fixedRange !== undefined) payload.fixed_range = fixedRange;
    const out = await this.json<{ images: string[] }>("/sample", payload);
    return out.images;
  }

  applyAttribute(latent: number[], attributeId: string, strength: number): Promise<Blob> {
    return this.imageBytes("/attribute/apply", {
      latent,
      attribute_id: attributeId,
      strength,
    });
  }
}
