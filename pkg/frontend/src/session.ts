/** Editor session state: slider values, DOF scrub state, placed objects and
 * their render jobs. Slider interactions never touch the server; only insert
 * submissions and exact-DOF requests do. */

import { SceneApi, SceneDoc } from "./api";
import { BasisPreview } from "./basis";

export interface PlacedObject {
  key: number;
  catalogId: string;
  x: number;
  y: number;
  scale: number;
  rotation: number;
  jobId: string | null;
  resultUrl: string | null;
  error: string | null;
}

export type SessionListener = (session: EditorSession) => void;

export class EditorSession {
  readonly solvedWeights: number[];
  readonly solvedGamma: number;
  weights: number[];
  gamma: number;
  focus = 2.0;
  aperture = 0.0;
  basisPreviews: BasisPreview[] = [];
  depthPreview: Float32Array | null = null;
  placed: PlacedObject[] = [];
  /** Composite on screen no longer matches the slider state. */
  compositeStale = false;
  private nextKey = 1;
  private listeners: SessionListener[] = [];

  constructor(readonly api: SceneApi, readonly scene: SceneDoc) {
    this.solvedWeights = scene.lights.map((l) => l.intensity[0]);
    this.solvedGamma = scene.gamma;
    this.weights = [...this.solvedWeights];
    this.gamma = scene.gamma;
  }

  get basesLoaded(): boolean {
    return this.basisPreviews.length === this.scene.lights.length &&
      this.basisPreviews.length > 0;
  }

  onChange(fn: SessionListener): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this);
  }

  /** Local-only slider update (no server traffic). */
  setWeight(k: number, value: number): void {
    if (k < 0 || k >= this.weights.length) {
      throw new RangeError(`light index ${k} out of range`);
    }
    this.weights[k] = Math.max(0, value);
    this.markCompositeStale();
    this.emit();
  }

  setGamma(value: number): void {
    this.gamma = Math.max(0.1, value);
    this.markCompositeStale();
    this.emit();
  }

  setDof(focus: number, aperture: number): void {
    if (focus <= 0) throw new RangeError("focus depth must be positive");
    if (aperture < 0) throw new RangeError("aperture must be nonnegative");
    this.focus = focus;
    this.aperture = aperture;
    this.emit();
  }

  resetLighting(): void {
    this.weights = [...this.solvedWeights];
    this.gamma = this.solvedGamma;
    this.markCompositeStale();
    this.emit();
  }

  private markCompositeStale(): void {
    if (this.placed.some((p) => p.resultUrl !== null)) {
      this.compositeStale = true;
    }
  }

  /** Register a placement; at most one in-flight insert job per object. */
  beginPlacement(catalogId: string, x: number, y: number, scale: number,
                 rotation: number): PlacedObject {
    const obj: PlacedObject = {
      key: this.nextKey++, catalogId, x, y, scale, rotation,
      jobId: null, resultUrl: null, error: null,
    };
    this.placed.push(obj);
    this.emit();
    return obj;
  }

  async submitPlacement(obj: PlacedObject): Promise<void> {
    if (obj.jobId !== null) {
      throw new Error(`object ${obj.key} already has an in-flight job`);
    }
    obj.jobId = "pending";  // claim synchronously: one job per object
    try {
      obj.jobId = await this.api.insert(
        obj.catalogId, obj.x, obj.y, obj.scale, obj.rotation);
    } catch (err) {
      obj.jobId = null;
      this.placed = this.placed.filter((p) => p.key !== obj.key);
      throw err;
    }
    this.emit();
    try {
      const state = await this.api.awaitJob(obj.jobId);
      obj.resultUrl = this.api.resultUrl(state.job_id);
      this.compositeStale = false;
    } catch (err) {
      obj.error = err instanceof Error ? err.message : String(err);
      this.placed = this.placed.filter((p) => p.key !== obj.key);
      throw err;
    } finally {
      this.emit();
    }
  }
}
