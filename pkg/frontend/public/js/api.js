/** Typed client for the scene service. The fetch implementation is injected
 * so tests can run without a server. */
export class SceneApi {
    constructor(baseUrl, fetchImpl = (...a) => fetch(...a)) {
        this.baseUrl = baseUrl;
        this.fetchImpl = fetchImpl;
    }
    async checked(url, init) {
        const resp = await this.fetchImpl(this.baseUrl + url, init);
        if (!resp.ok) {
            let detail = `${resp.status}`;
            try {
                const doc = await resp.json();
                if (doc && doc.error)
                    detail = `${resp.status}: ${doc.error}`;
            }
            catch {
                // non-JSON error body
            }
            throw new Error(`${url} failed (${detail})`);
        }
        return resp;
    }
    async getScene() {
        return (await this.checked("/scene")).json();
    }
    async getDepthPfm() {
        return (await this.checked("/depth.pfm")).arrayBuffer();
    }
    async getBasisPfm(k) {
        return (await this.checked(`/basis/${k}.pfm`)).arrayBuffer();
    }
    inputPngUrl() {
        return this.baseUrl + "/input.png";
    }
    async relight(w, gamma) {
        const resp = await this.checked("/relight", {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ w, gamma }),
        });
        return resp.blob();
    }
    async dofExact(d, a, w, gamma) {
        const resp = await this.checked("/dof", {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ d, a, w, gamma }),
        });
        return resp.blob();
    }
    async insert(objId, x, y, scale, rotation) {
        const resp = await this.checked("/insert", {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ obj_id: objId, x, y, scale, rotation }),
        });
        return (await resp.json()).job_id;
    }
    async jobState(jobId) {
        return (await this.checked(`/job/${jobId}`)).json();
    }
    resultUrl(jobId) {
        return `${this.baseUrl}/result/${jobId}.png`;
    }
    /** Poll until the job reaches done or reports an error. */
    async awaitJob(jobId, intervalMs = 400, timeoutMs = 300000, sleep = (ms) => new Promise((r) => setTimeout(r, ms))) {
        const deadline = Date.now() + timeoutMs;
        for (;;) {
            const state = await this.jobState(jobId);
            if (state.error)
                throw new Error(`job ${jobId} failed: ${state.error}`);
            if (state.stage === "done")
                return state;
            if (Date.now() > deadline)
                throw new Error(`job ${jobId} timed out`);
            await sleep(intervalMs);
        }
    }
}
