/** Wire types shared with the workbench HTTP API. */

/** [x_min, y_min, x_max, y_max] in original image pixels, min-inclusive. */
export type Bbox = [number, number, number, number];

export interface AnnotationObject {
  label: string;
  bbox: Bbox;
}

export interface AnnotationDoc {
  image_id: string;
  width: number;
  height: number;
  /** Opaque optimistic-concurrency token; echo it back on PUT. */
  version: string;
  objects: AnnotationObject[];
}

export interface PutAnnotationsResponse {
  image_id: string;
  version: string;
  objects: AnnotationObject[];
}

export interface ImageSummary {
  id: string;
  file: string;
  width: number;
  height: number;
  n_objects: number;
}

export interface ModelSummary {
  id: string;
  patch_size: number;
  target_label: string | null;
  epochs_trained: number;
}

export interface DetectionRecord {
  bbox: Bbox;
  probability: number;
}

export type JobStatus = "queued" | "running" | "done" | "failed";

export interface JobRecord {
  id: string;
  kind: string;
  status: JobStatus;
  progress: number;
  artifacts: string[];
  error: string | null;
}

export interface DetectorConfigBody {
  stride?: number;
  probability_threshold?: number;
  overlap_threshold?: number;
}

export interface ReviewBody {
  image_id: string;
  detection_index?: number;
  bbox?: Bbox;
  verdict: "confirm" | "reject";
  reviewer?: string;
  timestamp?: string;
}

export interface ReviewRecord {
  image_id: string;
  detection_index: number;
  bbox: Bbox;
  probability: number;
  label: string;
  verdict: "confirm" | "reject";
  reviewer: string;
  timestamp: string | null;
}

export interface ExportImage {
  id: string;
  file: string;
  width: number;
  height: number;
  objects: AnnotationObject[];
}

export interface ExportDoc {
  version: number;
  images: ExportImage[];
}
