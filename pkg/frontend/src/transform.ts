// Screen <-> source coordinate mapping. The view is a uniform scale
// plus translation, so the mapping is an exact invertible affine
// transform for any zoom/pan state.

export interface Point {
  readonly x: number;
  readonly y: number;
}

export interface ViewTransform {
  readonly scale: number;
  readonly offsetX: number;
  readonly offsetY: number;
}

export const MIN_SCALE = 0.25;
export const MAX_SCALE = 32;

export const IDENTITY: ViewTransform = { scale: 1, offsetX: 0, offsetY: 0 };

function checkView(view: ViewTransform): void {
  if (!Number.isFinite(view.scale) || view.scale <= 0) {
    throw new RangeError(`view scale must be a positive number, got ${view.scale}`);
  }
  if (!Number.isFinite(view.offsetX) || !Number.isFinite(view.offsetY)) {
    throw new RangeError(
      `view offsets must be finite, got (${view.offsetX}, ${view.offsetY})`,
    );
  }
}

export function sourceToScreen(view: ViewTransform, p: Point): Point {
  checkView(view);
  return { x: p.x * view.scale + view.offsetX, y: p.y * view.scale + view.offsetY };
}

export function screenToSource(view: ViewTransform, p: Point): Point {
  checkView(view);
  return {
    x: (p.x - view.offsetX) / view.scale,
    y: (p.y - view.offsetY) / view.scale,
  };
}

/** Scale-to-fit the image in the viewport and center it. */
export function fitView(
  viewportWidth: number,
  viewportHeight: number,
  imageWidth: number,
  imageHeight: number,
): ViewTransform {
  if (viewportWidth <= 0 || viewportHeight <= 0) {
    throw new RangeError(
      `viewport must have positive size, got ${viewportWidth}x${viewportHeight}`,
    );
  }
  if (imageWidth <= 0 || imageHeight <= 0) {
    throw new RangeError(
      `image must have positive size, got ${imageWidth}x${imageHeight}`,
    );
  }
  const scale = Math.min(viewportWidth / imageWidth, viewportHeight / imageHeight);
  return {
    scale,
    offsetX: (viewportWidth - imageWidth * scale) / 2,
    offsetY: (viewportHeight - imageHeight * scale) / 2,
  };
}

/**
 * Zoom by `factor` keeping the source point under `anchor` fixed on
 * screen. The resulting scale is clamped to [MIN_SCALE, MAX_SCALE].
 */
export function zoomAbout(
  view: ViewTransform,
  factor: number,
  anchor: Point,
): ViewTransform {
  checkView(view);
  if (!Number.isFinite(factor) || factor <= 0) {
    throw new RangeError(`zoom factor must be a positive number, got ${factor}`);
  }
  const scale = Math.min(MAX_SCALE, Math.max(MIN_SCALE, view.scale * factor));
  const pivot = screenToSource(view, anchor);
  return {
    scale,
    offsetX: anchor.x - pivot.x * scale,
    offsetY: anchor.y - pivot.y * scale,
  };
}

export function panBy(view: ViewTransform, dx: number, dy: number): ViewTransform {
  checkView(view);
  if (!Number.isFinite(dx) || !Number.isFinite(dy)) {
    throw new RangeError(`pan delta must be finite, got (${dx}, ${dy})`);
  }
  return { scale: view.scale, offsetX: view.offsetX + dx, offsetY: view.offsetY + dy };
}

/** Whether a source-frame point lies inside a width x height image. */
export function insideImage(p: Point, width: number, height: number): boolean {
  return p.x >= 0 && p.x < width && p.y >= 0 && p.y < height;
}
