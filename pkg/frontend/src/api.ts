// Thin typed client for the annotation service's JSON API. The UI is
// served by the same process, so all paths are same-origin relative.

import type { ExportPayload } from "./session.js";

export interface LabelGuide {
  labels: { label: number; anchors: string[] }[];
  ref_labels: string[];
}

export interface SubmitReceipt {
  image_id: string;
  written: string[];
}

export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, message: string) {
    super(message);
    this.name = "ApiError";
    this.status = status;
  }
}

async function getJson<T>(path: string): Promise<T> {
  const response = await fetch(path);
  if (!response.ok) {
    throw new ApiError(response.status, await errorDetail(response));
  }
  return (await response.json()) as T;
}

async function errorDetail(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { error?: string };
    if (typeof body.error === "string") {
      return body.error;
    }
  } catch {
    // fall through to the generic message
  }
  return `${response.status} ${response.statusText}`;
}

export function fetchImages(): Promise<string[]> {
  return getJson<{ images: string[] }>("/api/images").then((body) => body.images);
}

export function fetchLabelGuide(): Promise<LabelGuide> {
  return getJson<LabelGuide>("/api/labels");
}

export function fetchAnnotated(): Promise<string[]> {
  return getJson<{ annotated: string[] }>("/api/annotations").then(
    (body) => body.annotated,
  );
}

/** A stored annotation as an export payload, or null if none exists. */
export async function fetchAnnotation(imageId: string): Promise<ExportPayload | null> {
  const response = await fetch(`/api/annotation/${encodeURIComponent(imageId)}`);
  if (response.status === 404) {
    return null;
  }
  if (!response.ok) {
    throw new ApiError(response.status, await errorDetail(response));
  }
  return (await response.json()) as ExportPayload;
}

export async function submitAnnotation(payload: ExportPayload): Promise<SubmitReceipt> {
  const response = await fetch("/api/annotations", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(payload),
  });
  if (!response.ok) {
    throw new ApiError(response.status, await errorDetail(response));
  }
  return (await response.json()) as SubmitReceipt;
}

export function imageUrl(name: string): string {
  return `/api/image/${encodeURIComponent(name)}`;
}
