/** Editor session state: slider values, DOF scrub state, placed objects and
 * their render jobs. Slider interactions never touch the server; only insert
 * submissions and exact-DOF requests do. */
export class EditorSession {
    constructor(api, scene) {
        this.api = api;
        this.scene = scene;
        this.focus = 2.0;
        this.aperture = 0.0;
        this.basisPreviews = [];
        this.depthPreview = null;
        this.placed = [];
        /** Composite on screen no longer matches the slider state. */
        this.compositeStale = false;
        this.nextKey = 1;
        this.listeners = [];
        this.solvedWeights = scene.lights.map((l) => l.intensity[0]);
        this.solvedGamma = scene.gamma;
        this.weights = [...this.solvedWeights];
        this.gamma = scene.gamma;
    }
    get basesLoaded() {
        return this.basisPreviews.length === this.scene.lights.length &&
            this.basisPreviews.length > 0;
    }
    onChange(fn) {
        this.listeners.push(fn);
    }
    emit() {
        for (const fn of this.listeners)
            fn(this);
    }
    /** Local-only slider update (no server traffic). */
    setWeight(k, value) {
        if (k < 0 || k >= this.weights.length) {
            throw new RangeError(`light index ${k} out of range`);
        }
        this.weights[k] = Math.max(0, value);
        this.markCompositeStale();
        this.emit();
    }
    setGamma(value) {
        this.gamma = Math.max(0.1, value);
        this.markCompositeStale();
        this.emit();
    }
    setDof(focus, aperture) {
        if (focus <= 0)
            throw new RangeError("focus depth must be positive");
        if (aperture < 0)
            throw new RangeError("aperture must be nonnegative");
        this.focus = focus;
        this.aperture = aperture;
        this.emit();
    }
    resetLighting() {
        this.weights = [...this.solvedWeights];
        this.gamma = this.solvedGamma;
        this.markCompositeStale();
        this.emit();
    }
    markCompositeStale() {
        if (this.placed.some((p) => p.resultUrl !== null)) {
            this.compositeStale = true;
        }
    }
    /** Register a placement; at most one in-flight insert job per object. */
    beginPlacement(catalogId, x, y, scale, rotation) {
        const obj = {
            key: this.nextKey++, catalogId, x, y, scale, rotation,
            jobId: null, resultUrl: null, error: null,
        };
        this.placed.push(obj);
        this.emit();
        return obj;
    }
    async submitPlacement(obj) {
        if (obj.jobId !== null) {
            throw new Error(`object ${obj.key} already has an in-flight job`);
        }
        obj.jobId = "pending"; // claim synchronously: one job per object
        try {
            obj.jobId = await this.api.insert(obj.catalogId, obj.x, obj.y, obj.scale, obj.rotation);
        }
        catch (err) {
            obj.jobId = null;
            this.placed = this.placed.filter((p) => p.key !== obj.key);
            throw err;
        }
        this.emit();
        try {
            const state = await this.api.awaitJob(obj.jobId);
            obj.resultUrl = this.api.resultUrl(state.job_id);
            this.compositeStale = false;
        }
        catch (err) {
            obj.error = err instanceof Error ? err.message : String(err);
            this.placed = this.placed.filter((p) => p.key !== obj.key);
            throw err;
        }
        finally {
            this.emit();
        }
    }
}
