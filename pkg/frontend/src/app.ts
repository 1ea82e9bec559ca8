// DOM wiring for the annotation page: image list, canvas with zoom and
// pan, the placement checklist, undo/redo, and export to the service.

import {
  fetchAnnotated,
  fetchImages,
  imageUrl,
  submitAnnotation,
  ApiError,
} from "./api.js";
import {
  type LabelId,
  LABEL_GUIDE,
  REF_A,
  REF_B,
  SOURCE_SIZE,
  describeLabel,
  isRefLabel,
} from "./labels.js";
import { AnnotationSession } from "./session.js";
import {
  type ViewTransform,
  fitView,
  panBy,
  screenToSource,
  sourceToScreen,
  zoomAbout,
} from "./transform.js";

function element<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) {
    throw new Error(`missing #${id} in the page`);
  }
  return node as T;
}

const canvas = element<HTMLCanvasElement>("canvas");
const ctx = canvas.getContext("2d")!;
const imageList = element<HTMLUListElement>("image-list");
const labelList = element<HTMLOListElement>("label-list");
const statusLine = element<HTMLParagraphElement>("status");
const undoButton = element<HTMLButtonElement>("undo-btn");
const redoButton = element<HTMLButtonElement>("redo-btn");
const exportButton = element<HTMLButtonElement>("export-btn");
const refAButton = element<HTMLButtonElement>("ref-a-btn");
const refBButton = element<HTMLButtonElement>("ref-b-btn");
const refLengthInput = element<HTMLInputElement>("ref-length");

let session: AnnotationSession | null = null;
let view: ViewTransform | null = null;
let image: HTMLImageElement | null = null;
let annotated = new Set<string>();
let panFrom: { x: number; y: number } | null = null;

function status(message: string, isError = false): void {
  statusLine.textContent = message;
  statusLine.classList.toggle("error", isError);
}

function imageIdOf(name: string): string {
  return name.replace(/\.[^.]+$/, "");
}

// -- rendering -------------------------------------------------------

function draw(): void {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (image === null || view === null || session === null) {
    return;
  }
  ctx.imageSmoothingEnabled = view.scale < 1;
  ctx.drawImage(
    image,
    view.offsetX,
    view.offsetY,
    image.naturalWidth * view.scale,
    image.naturalHeight * view.scale,
  );
  for (const placement of session.placements) {
    const p = sourceToScreen(view, placement);
    const isRef = isRefLabel(placement.label);
    ctx.strokeStyle = isRef ? "#e08020" : "#20c040";
    ctx.fillStyle = ctx.strokeStyle;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.arc(p.x, p.y, 5, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.beginPath();
    ctx.moveTo(p.x - 8, p.y);
    ctx.lineTo(p.x + 8, p.y);
    ctx.moveTo(p.x, p.y - 8);
    ctx.lineTo(p.x, p.y + 8);
    ctx.stroke();
    ctx.font = "12px sans-serif";
    ctx.fillText(String(placement.label), p.x + 7, p.y - 7);
  }
}

function refreshControls(): void {
  const active = session !== null;
  undoButton.disabled = !active;
  redoButton.disabled = !active;
  exportButton.disabled = !(active && session!.canExport);
  refAButton.disabled = !active;
  refBButton.disabled = !active;
  refLengthInput.disabled = !(active && session!.refState() === "both");

  labelList.replaceChildren();
  if (session === null) {
    return;
  }
  const cursor = session.cursorLabel;
  for (const entry of LABEL_GUIDE) {
    const item = document.createElement("li");
    const placed = session.placementFor(entry.label) !== undefined;
    item.textContent = `${placed ? "✓ " : "· "}${describeLabel(entry.label)}`;
    item.classList.toggle("placed", placed);
    item.classList.toggle("cursor", entry.label === cursor);
    item.addEventListener("click", () => {
      session!.select(entry.label);
      status(`next click places label ${entry.label}`);
      refreshControls();
      draw();
    });
    labelList.appendChild(item);
  }
  const blocker = session.exportBlocker();
  exportButton.title = blocker ?? "POST the annotation to the service";
}

function refreshImageList(): void {
  imageList.replaceChildren();
  for (const name of imageNames) {
    const item = document.createElement("li");
    const id = imageIdOf(name);
    item.textContent = (annotated.has(id) ? "✓ " : "") + name;
    item.classList.toggle("active", session?.imageId === id);
    item.addEventListener("click", () => void selectImage(name));
    imageList.appendChild(item);
  }
}

// -- image + session lifecycle ----------------------------------------

let imageNames: string[] = [];

async function selectImage(name: string): Promise<void> {
  if (session?.dirty && !window.confirm("Discard unsaved placements?")) {
    return;
  }
  const img = new Image();
  img.src = imageUrl(name);
  try {
    await img.decode();
  } catch {
    status(`could not load ${name}`, true);
    return;
  }
  image = img;
  session = new AnnotationSession(imageIdOf(name));
  view = fitView(canvas.width, canvas.height, img.naturalWidth, img.naturalHeight);
  status(`annotating ${name}: click label ${session.cursorLabel}`);
  refreshImageList();
  refreshControls();
  draw();
}

// -- event handlers ----------------------------------------------------

canvas.addEventListener("pointerdown", (event) => {
  if (event.shiftKey) {
    panFrom = { x: event.offsetX, y: event.offsetY };
    canvas.setPointerCapture(event.pointerId);
  }
});

canvas.addEventListener("pointermove", (event) => {
  if (panFrom !== null && view !== null) {
    view = panBy(view, event.offsetX - panFrom.x, event.offsetY - panFrom.y);
    panFrom = { x: event.offsetX, y: event.offsetY };
    draw();
  }
});

canvas.addEventListener("pointerup", (event) => {
  if (panFrom !== null) {
    panFrom = null;
    canvas.releasePointerCapture(event.pointerId);
    return;
  }
  if (session === null || view === null) {
    return;
  }
  const source = screenToSource(view, { x: event.offsetX, y: event.offsetY });
  const outcome = session.place(source);
  if (!outcome.ok) {
    status(
      outcome.reason === "outside-image"
        ? "click landed outside the image"
        : "all labels placed — pick one from the list to adjust",
      true,
    );
    canvas.classList.add("rejected");
    window.setTimeout(() => canvas.classList.remove("rejected"), 300);
    return;
  }
  const next = session.cursorLabel;
  status(
    `placed ${outcome.label}${outcome.replaced ? " (adjusted)" : ""}` +
      (next === null ? " — all set, ready to export" : `; next: ${next}`),
  );
  refreshControls();
  draw();
});

canvas.addEventListener("wheel", (event) => {
  if (view === null) {
    return;
  }
  event.preventDefault();
  const factor = event.deltaY < 0 ? 1.2 : 1 / 1.2;
  view = zoomAbout(view, factor, { x: event.offsetX, y: event.offsetY });
  draw();
});

undoButton.addEventListener("click", () => {
  if (session?.undo()) {
    status("undid last placement");
    refreshControls();
    draw();
  }
});

redoButton.addEventListener("click", () => {
  if (session?.redo()) {
    status("redid placement");
    refreshControls();
    draw();
  }
});

document.addEventListener("keydown", (event) => {
  if (!event.ctrlKey && !event.metaKey) {
    return;
  }
  if (event.key.toLowerCase() === "z" && !event.shiftKey) {
    event.preventDefault();
    undoButton.click();
  } else if (event.key.toLowerCase() === "y" || (event.key.toLowerCase() === "z" && event.shiftKey)) {
    event.preventDefault();
    redoButton.click();
  }
});

function selectRef(label: LabelId): void {
  if (session === null) {
    return;
  }
  session.select(label);
  status(`next click places ${label}`);
  refreshControls();
}

refAButton.addEventListener("click", () => selectRef(REF_A));
refBButton.addEventListener("click", () => selectRef(REF_B));

exportButton.addEventListener("click", () => {
  void (async () => {
    if (session === null) {
      return;
    }
    const raw = refLengthInput.value.trim();
    const length = raw === "" ? undefined : Number(raw);
    try {
      const payload = session.exportPayload(length);
      const receipt = await submitAnnotation(payload);
      session.markClean();
      annotated.add(receipt.image_id);
      status(`saved ${receipt.image_id}: ${receipt.written.length} files written`);
      refreshImageList();
      refreshControls();
    } catch (error) {
      const detail =
        error instanceof ApiError
          ? `service rejected the annotation: ${error.message}`
          : String(error instanceof Error ? error.message : error);
      status(detail, true);
    }
  })();
});

window.addEventListener("beforeunload", (event) => {
  if (session?.dirty) {
    event.preventDefault();
  }
});

// -- startup -----------------------------------------------------------

async function init(): Promise<void> {
  try {
    [imageNames, annotated] = [await fetchImages(), new Set(await fetchAnnotated())];
  } catch (error) {
    status(
      `could not reach the annotation service: ${
        error instanceof Error ? error.message : error
      }`,
      true,
    );
    return;
  }
  refreshImageList();
  refreshControls();
  if (imageNames.length === 0) {
    status("no images found — point the service at a directory of ear images");
  } else {
    status(`loaded ${imageNames.length} images (${SOURCE_SIZE}x${SOURCE_SIZE} frame)`);
  }
}

void init();
