/** Typed client for the workbench HTTP API. */

import type {
  AnnotationDoc,
  AnnotationObject,
  DetectionRecord,
  DetectorConfigBody,
  ExportDoc,
  ImageSummary,
  JobRecord,
  ModelSummary,
  PutAnnotationsResponse,
  ReviewBody,
  ReviewRecord,
} from "./types.js";

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(`${status}: ${detail}`);
  }
}

/** Another writer changed the annotations since our last fetch (409). */
export class ConflictError extends ApiError {}

async function parseDetail(response: Response): Promise<string> {
  try {
    const body = await response.json();
    if (body && typeof body.detail === "string") return body.detail;
    return JSON.stringify(body);
  } catch {
    return response.statusText;
  }
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.base + path, init);
    if (!response.ok) {
      const detail = await parseDetail(response);
      if (response.status === 409) throw new ConflictError(409, detail);
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  listImages(): Promise<ImageSummary[]> {
    return this.request("/api/images");
  }

  /** Raster URL for an <img> or drawImage source. */
  imageUrl(imageId: string): string {
    return `${this.base}/api/images/${encodeURIComponent(imageId)}`;
  }

  getAnnotations(imageId: string): Promise<AnnotationDoc> {
    return this.request(`/api/images/${encodeURIComponent(imageId)}/annotations`);
  }

  putAnnotations(
    imageId: string,
    payload: { version: string; objects: AnnotationObject[] },
  ): Promise<PutAnnotationsResponse> {
    return this.request(
      `/api/images/${encodeURIComponent(imageId)}/annotations`,
      {
        method: "PUT",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(payload),
      },
    );
  }

  listModels(): Promise<ModelSummary[]> {
    return this.request("/api/models");
  }

  submitDetect(
    imageId: string,
    modelId: string,
    config: DetectorConfigBody = {},
  ): Promise<JobRecord> {
    return this.request("/api/jobs/detect", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ image_id: imageId, model_id: modelId, config }),
    });
  }

  getJob(jobId: string): Promise<JobRecord> {
    return this.request(`/api/jobs/${encodeURIComponent(jobId)}`);
  }

  /** Poll until the job settles; resolves with the final record either way. */
  async waitForJob(
    jobId: string,
    intervalMs = 250,
    timeoutMs = 120_000,
  ): Promise<JobRecord> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const job = await this.getJob(jobId);
      if (job.status === "done" || job.status === "failed") return job;
      if (Date.now() > deadline) {
        throw new ApiError(504, `job ${jobId} still ${job.status} after ${timeoutMs}ms`);
      }
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
  }

  getDetections(imageId: string): Promise<DetectionRecord[]> {
    return this.request(`/api/images/${encodeURIComponent(imageId)}/detections`);
  }

  postReview(body: ReviewBody): Promise<ReviewRecord> {
    return this.request("/api/reviews", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  exportAnnotations(): Promise<ExportDoc> {
    return this.request("/api/export/annotations");
  }
}
