/** Typed client for the scene service. The fetch implementation is injected
 * so tests can run without a server. */

export interface SceneLight {
  type: "quad" | "ibl";
  intensity: [number, number, number];
  vertices?: number[][];
  panorama?: string;
  rotation?: number[];
}

export interface SceneDoc {
  camera: { f: number; cx: number; cy: number; rotation: number[] };
  depth: string;
  albedo: string;
  gamma: number;
  lights: SceneLight[];
}

export interface JobStateDoc {
  job_id: string;
  stage: string;
  progress: number;
  artifacts: Record<string, string>;
  error: string | null;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class SceneApi {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (...a) => fetch(...a),
  ) {}

  private async checked(url: string, init?: RequestInit): Promise<Response> {
    const resp = await this.fetchImpl(this.baseUrl + url, init);
    if (!resp.ok) {
      let detail = `${resp.status}`;
      try {
        const doc = await resp.json();
        if (doc && doc.error) detail = `${resp.status}: ${doc.error}`;
      } catch {
        // non-JSON error body
      }
      throw new Error(`${url} failed (${detail})`);
    }
    return resp;
  }

  async getScene(): Promise<SceneDoc> {
    return (await this.checked("/scene")).json();
  }

  async getDepthPfm(): Promise<ArrayBuffer> {
    return (await this.checked("/depth.pfm")).arrayBuffer();
  }

  async getBasisPfm(k: number): Promise<ArrayBuffer> {
    return (await this.checked(`/basis/${k}.pfm`)).arrayBuffer();
  }

  inputPngUrl(): string {
    return this.baseUrl + "/input.png";
  }

  async relight(w: number[], gamma: number): Promise<Blob> {
    const resp = await this.checked("/relight", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ w, gamma }),
    });
    return resp.blob();
  }

  async dofExact(d: number, a: number, w?: number[],
                 gamma?: number): Promise<Blob> {
    const resp = await this.checked("/dof", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ d, a, w, gamma }),
    });
    return resp.blob();
  }

  async insert(objId: string, x: number, y: number, scale: number,
               rotation: number): Promise<string> {
    const resp = await this.checked("/insert", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ obj_id: objId, x, y, scale, rotation }),
    });
    return (await resp.json()).job_id;
  }

  async jobState(jobId: string): Promise<JobStateDoc> {
    return (await this.checked(`/job/${jobId}`)).json();
  }

  resultUrl(jobId: string): string {
    return `${this.baseUrl}/result/${jobId}.png`;
  }

  /** Poll until the job reaches done or reports an error. */
  async awaitJob(
    jobId: string, intervalMs = 400, timeoutMs = 300000,
    sleep: (ms: number) => Promise<void> =
      (ms) => new Promise((r) => setTimeout(r, ms)),
  ): Promise<JobStateDoc> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const state = await this.jobState(jobId);
      if (state.error) throw new Error(`job ${jobId} failed: ${state.error}`);
      if (state.stage === "done") return state;
      if (Date.now() > deadline) throw new Error(`job ${jobId} timed out`);
      await sleep(intervalMs);
    }
  }
}
