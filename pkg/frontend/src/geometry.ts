import type { Vec2 } from "./types";

export const PICK_RADIUS_PX = 12;

/**
 * Index of the projected vertex closest to a click, or null when nothing
 * lies within the pick radius. Distances are measured in image pixels;
 * exact ties resolve to the lower index (scan order guarantees it).
 */
export function pickVertex(
  points: readonly Vec2[],
  click: Vec2,
  radiusPx: number = PICK_RADIUS_PX,
): number | null {
  let best: number | null = null;
  let bestD2 = radiusPx * radiusPx;
  for (let i = 0; i < points.length; i++) {
    const dx = points[i][0] - click[0];
    const dy = points[i][1] - click[1];
    const d2 = dx * dx + dy * dy;
    if (d2 < bestD2 || (d2 === bestD2 && best === null)) {
      best = i;
      bestD2 = d2;
    }
  }
  return best;
}

/** Zoom/pan mapping between image pixels and canvas (screen) pixels. */
export interface ViewTransform {
  zoom: number;
  panX: number;
  panY: number;
}

export function imageToScreen(view: ViewTransform, p: Vec2): Vec2 {
  return [p[0] * view.zoom + view.panX, p[1] * view.zoom + view.panY];
}

export function screenToImage(view: ViewTransform, p: Vec2): Vec2 {
  return [(p[0] - view.panX) / view.zoom, (p[1] - view.panY) / view.zoom];
}

/** Zoom about a fixed screen point so the pixel under the cursor stays put. */
export function zoomAbout(view: ViewTransform, screen: Vec2, factor: number): ViewTransform {
  const zoom = Math.min(Math.max(view.zoom * factor, 0.1), 40);
  const scale = zoom / view.zoom;
  return {
    zoom,
    panX: screen[0] - (screen[0] - view.panX) * scale,
    panY: screen[1] - (screen[1] - view.panY) * scale,
  };
}
