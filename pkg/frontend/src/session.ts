// Annotation session state: which labels are placed where, which label
// the next click lands on, and a faithful undo/redo stack. Coordinates
// are stored in the 224x224 source frame regardless of on-screen zoom;
// mapping from screen clicks happens before place() is called.

import {
  type LabelId,
  type RefLabel,
  REF_A,
  REF_B,
  REQUIRED_SEQUENCE,
  SOURCE_SIZE,
  isRefLabel,
} from "./labels.js";
import { insideImage, type Point } from "./transform.js";

// Same token rule the annotation service enforces for image ids.
const IMAGE_ID_RE = /^[A-Za-z0-9][A-Za-z0-9._-]*$/;

export interface Placement {
  readonly label: LabelId;
  readonly x: number;
  readonly y: number;
}

export interface ExportPoint {
  label: LabelId;
  x: number;
  y: number;
}

export interface ExportPayload {
  image_id: string;
  points: ExportPoint[];
  reference_length_cm?: number;
}

export type PlaceOutcome =
  | { ok: true; label: LabelId; replaced: boolean }
  | { ok: false; reason: "outside-image" | "no-label-pending" };

interface Snapshot {
  entries: ReadonlyArray<readonly [LabelId, Point]>;
  selected: LabelId | null;
  dirty: boolean;
}

export class AnnotationSession {
  readonly imageId: string;
  readonly required: readonly number[];

  private placed = new Map<LabelId, Point>();
  private selected: LabelId | null = null;
  private dirtyFlag = false;
  private undoStack: Snapshot[] = [];
  private redoStack: Snapshot[] = [];

  constructor(imageId: string, required: readonly number[] = REQUIRED_SEQUENCE) {
    if (!IMAGE_ID_RE.test(imageId)) {
      throw new Error(
        `image id must be a plain token (letters, digits, . _ -), got ${JSON.stringify(imageId)}`,
      );
    }
    if (required.length === 0) {
      throw new Error("a session needs at least one required label");
    }
    this.imageId = imageId;
    this.required = [...required];
  }

  get dirty(): boolean {
    return this.dirtyFlag;
  }

  get placedCount(): number {
    return this.placed.size;
  }

  placementFor(label: LabelId): Point | undefined {
    return this.placed.get(label);
  }

  get missingLabels(): number[] {
    return this.required.filter((label) => !this.placed.has(label));
  }

  get isComplete(): boolean {
    return this.missingLabels.length === 0;
  }

  /** The label the next click is assigned to, or null when idle. */
  get cursorLabel(): LabelId | null {
    if (this.selected !== null) {
      return this.selected;
    }
    return this.missingLabels[0] ?? null;
  }

  /** Aim the next click at a specific label (to adjust or place refs). */
  select(label: LabelId): void {
    if (!isRefLabel(label) && !this.required.includes(label)) {
      throw new Error(`label ${label} is not part of this session`);
    }
    this.selected = label;
  }

  clearSelection(): void {
    this.selected = null;
  }

  /**
   * Place the cursor label at a source-frame point. Clicks outside the
   * image or with no label pending are ignored and reported so the UI
   * can show a cue.
   */
  place(source: Point): PlaceOutcome {
    const label = this.cursorLabel;
    if (label === null) {
      return { ok: false, reason: "no-label-pending" };
    }
    if (!insideImage(source, SOURCE_SIZE, SOURCE_SIZE)) {
      return { ok: false, reason: "outside-image" };
    }
    this.undoStack.push(this.snapshot());
    this.redoStack = [];
    const replaced = this.placed.has(label);
    this.placed.set(label, { x: source.x, y: source.y });
    this.selected = null;
    this.dirtyFlag = true;
    return { ok: true, label, replaced };
  }

  undo(): boolean {
    const snapshot = this.undoStack.pop();
    if (snapshot === undefined) {
      return false;
    }
    this.redoStack.push(this.snapshot());
    this.restore(snapshot);
    return true;
  }

  redo(): boolean {
    const snapshot = this.redoStack.pop();
    if (snapshot === undefined) {
      return false;
    }
    this.undoStack.push(this.snapshot());
    this.restore(snapshot);
    return true;
  }

  /** Placements in display order: required sequence, then references. */
  get placements(): Placement[] {
    const order: LabelId[] = [...this.required, REF_A, REF_B];
    const out: Placement[] = [];
    for (const label of order) {
      const point = this.placed.get(label);
      if (point !== undefined) {
        out.push({ label, x: point.x, y: point.y });
      }
    }
    return out;
  }

  refState(): "none" | "partial" | "both" {
    const count = Number(this.placed.has(REF_A)) + Number(this.placed.has(REF_B));
    return count === 2 ? "both" : count === 1 ? "partial" : "none";
  }

  /** Why export is blocked, or null when it may proceed. */
  exportBlocker(): string | null {
    if (!this.isComplete) {
      const missing = this.missingLabels;
      return `labels still missing: ${missing.join(", ")}`;
    }
    if (this.refState() === "partial") {
      return "REF_A and REF_B must be placed together";
    }
    return null;
  }

  get canExport(): boolean {
    return this.exportBlocker() === null;
  }

  /** The submission document for POST /api/annotations. */
  exportPayload(referenceLengthCm?: number): ExportPayload {
    const blocker = this.exportBlocker();
    if (blocker !== null) {
      throw new Error(`cannot export: ${blocker}`);
    }
    const points: ExportPoint[] = [];
    for (const label of this.required) {
      const point = this.placed.get(label)!;
      points.push({ label, x: point.x, y: point.y });
    }
    for (const ref of [REF_A, REF_B] as RefLabel[]) {
      const point = this.placed.get(ref);
      if (point !== undefined) {
        points.push({ label: ref, x: point.x, y: point.y });
      }
    }
    const payload: ExportPayload = { image_id: this.imageId, points };
    if (referenceLengthCm !== undefined) {
      if (this.refState() !== "both") {
        throw new Error("a reference length needs both reference points placed");
      }
      if (!Number.isFinite(referenceLengthCm) || referenceLengthCm <= 0) {
        throw new Error(
          `reference length must be a positive number of centimetres, got ${referenceLengthCm}`,
        );
      }
      payload.reference_length_cm = referenceLengthCm;
    }
    return payload;
  }

  /** Mark the session saved (after a successful export). */
  markClean(): void {
    this.dirtyFlag = false;
  }

  private snapshot(): Snapshot {
    return {
      entries: [...this.placed.entries()].map(
        ([label, point]) => [label, point] as const,
      ),
      selected: this.selected,
      dirty: this.dirtyFlag,
    };
  }

  private restore(snapshot: Snapshot): void {
    this.placed = new Map(snapshot.entries);
    this.selected = snapshot.selected;
    this.dirtyFlag = snapshot.dirty;
  }
}
