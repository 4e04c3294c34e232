import { imageToScreen, type ViewTransform } from "./geometry";
import type { OverlayState } from "./session";
import type { PinPayload, Vec2 } from "./types";

export interface OverlayStyle {
  pointColor: string;
  pinColor: string;
  optimisticPinColor: string;
  selectedColor: string;
  pointRadius: number;
  pinRadius: number;
}

export const DEFAULT_STYLE: OverlayStyle = {
  pointColor: "rgba(80, 200, 255, 0.85)",
  pinColor: "#ff5252",
  optimisticPinColor: "rgba(255, 82, 82, 0.4)",
  selectedColor: "#ffd740",
  pointRadius: 2,
  pinRadius: 5,
};

export function drawOverlay(
  ctx: CanvasRenderingContext2D,
  image: HTMLImageElement | null,
  view: ViewTransform,
  overlay: OverlayState,
  optimisticPins: PinPayload[],
  selectedVertex: number | null,
  style: OverlayStyle = DEFAULT_STYLE,
): void {
  const { canvas } = ctx;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (image) {
    ctx.save();
    ctx.setTransform(view.zoom, 0, 0, view.zoom, view.panX, view.panY);
    ctx.drawImage(image, 0, 0);
    ctx.restore();
  }

  ctx.fillStyle = style.pointColor;
  for (const p of overlay.points) {
    const [x, y] = imageToScreen(view, p);
    ctx.beginPath();
    ctx.arc(x, y, style.pointRadius, 0, Math.PI * 2);
    ctx.fill();
  }

  const drawPin = (pixel: Vec2, color: string) => {
    const [x, y] = imageToScreen(view, pixel);
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.arc(x, y, style.pinRadius, 0, Math.PI * 2);
    ctx.stroke();
    ctx.beginPath();
    ctx.moveTo(x - style.pinRadius, y);
    ctx.lineTo(x + style.pinRadius, y);
    ctx.moveTo(x, y - style.pinRadius);
    ctx.lineTo(x, y + style.pinRadius);
    ctx.stroke();
  };

  for (const pin of overlay.pins) {
    drawPin(pin.pixel, pin.vertex_id === selectedVertex ? style.selectedColor : style.pinColor);
  }
  for (const pin of optimisticPins) {
    drawPin(pin.pixel, style.optimisticPinColor);
  }
}
