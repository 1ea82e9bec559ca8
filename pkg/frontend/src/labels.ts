// The fixed placement sequence and display names for the landmarks the
// pipeline measures. This mirrors the annotation service's /api/labels
// guide; the sequence is part of the HTTP/file contract, so it is kept
// static here rather than fetched.

export type RefLabel = "REF_A" | "REF_B";
export type LabelId = number | RefLabel;

export const REF_A: RefLabel = "REF_A";
export const REF_B: RefLabel = "REF_B";
export const REF_LABELS: readonly RefLabel[] = [REF_A, REF_B] as const;

export const SOURCE_SIZE = 224;

/** Distances keyed by id, named after the pinna features they span. */
export const DISTANCE_NAMES = {
  d1: "cavum concha height",
  d2: "cymba concha height",
  d3: "cavum concha width",
  d4: "fossa height",
  d5: "pinna height",
  d6: "pinna width",
  d7: "intertragal incisure width",
} as const;

export interface LabelGuideEntry {
  readonly label: number;
  readonly anchors: readonly string[];
}

/**
 * Required labels in placement order, each with the distances it
 * anchors. Labels 20, 37 and 48 each anchor two distances, which is
 * why 7 distances need only 11 points.
 */
export const LABEL_GUIDE: readonly LabelGuideEntry[] = [
  { label: 4, anchors: ["d5 pinna height"] },
  { label: 18, anchors: ["d5 pinna height"] },
  { label: 20, anchors: ["d1 cavum concha height", "d2 cymba concha height"] },
  { label: 25, anchors: ["d4 fossa height"] },
  { label: 33, anchors: ["d6 pinna width"] },
  { label: 37, anchors: ["d3 cavum concha width", "d6 pinna width"] },
  { label: 38, anchors: ["d7 intertragal incisure width"] },
  { label: 39, anchors: ["d1 cavum concha height"] },
  { label: 40, anchors: ["d7 intertragal incisure width"] },
  { label: 43, anchors: ["d3 cavum concha width"] },
  { label: 48, anchors: ["d2 cymba concha height", "d4 fossa height"] },
] as const;

/** The placement sequence: every required label, in order. */
export const REQUIRED_SEQUENCE: readonly number[] = LABEL_GUIDE.map(
  (entry) => entry.label,
);

export function isRefLabel(label: LabelId): label is RefLabel {
  return label === REF_A || label === REF_B;
}

export function describeLabel(label: LabelId): string {
  if (isRefLabel(label)) {
    return label === REF_A
      ? "REF_A (reference segment start)"
      : "REF_B (reference segment end)";
  }
  const entry = LABEL_GUIDE.find((e) => e.label === label);
  const anchors = entry ? entry.anchors.join(", ") : "unknown label";
  return `${label} (${anchors})`;
}
