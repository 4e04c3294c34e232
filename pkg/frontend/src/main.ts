import { ApiClient } from "./api";
import { ATTRIBUTE_OPTIONS, cardViolations, emptyCard } from "./attributes";
import { PICK_RADIUS_PX, pickVertex, screenToImage, zoomAbout, type ViewTransform } from "./geometry";
import { drawOverlay } from "./overlay";
import { SessionStore } from "./session";
import type { AttributeCard, Vec2 } from "./types";

const SUBSET_CYCLE = ["landmark68", "landmark191", "landmark445", "head"];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const serverUrl = params.get("server") ?? "http://127.0.0.1:8321";
  const imageUrl = params.get("image");

  const canvas = el<HTMLCanvasElement>("canvas");
  const ctx = canvas.getContext("2d")!;
  const status = el<HTMLDivElement>("status");
  const subsetLabel = el<HTMLSpanElement>("subset-label");
  const pendingBadge = el<HTMLSpanElement>("pending");
  const rmsLabel = el<HTMLSpanElement>("rms");
  const revisionLabel = el<HTMLSpanElement>("revision");
  const exportButton = el<HTMLButtonElement>("export");
  const attributesForm = el<HTMLFormElement>("attributes");

  const api = new ApiClient(serverUrl);
  if (!(await api.health())) {
    status.textContent = `cannot reach service at ${serverUrl}`;
    return;
  }
  const models = await api.listModels();
  const modelId = params.get("model") ?? Object.keys(models)[0];
  if (!modelId) {
    status.textContent = "service has no models loaded";
    return;
  }

  const image = imageUrl ? new Image() : null;
  let imageSize: [number, number] = [canvas.width, canvas.height];
  if (image && imageUrl) {
    await new Promise<void>((resolve, reject) => {
      image.onload = () => resolve();
      image.onerror = () => reject(new Error(`cannot load ${imageUrl}`));
      image.src = imageUrl;
    });
    imageSize = [image.naturalWidth, image.naturalHeight];
  }

  const info = await api.createSession(modelId, imageSize);
  let view: ViewTransform = { zoom: 1, panX: 0, panY: 0 };

  const store = new SessionStore(api, info.session_id, {
    onOverlay(overlay) {
      revisionLabel.textContent = `rev ${overlay.revision}`;
      rmsLabel.textContent = `rms ${overlay.rmsPinError.toFixed(2)} px`;
      redraw();
    },
    onPending(pending) {
      pendingBadge.style.visibility = pending ? "visible" : "hidden";
      exportButton.disabled = pending;
    },
    onStatus(message) {
      status.textContent = message;
    },
  });

  function redraw(): void {
    drawOverlay(ctx, image, view, store.overlay, store.optimisticPins, store.selectedVertex);
  }

  function canvasPoint(ev: MouseEvent): Vec2 {
    const rect = canvas.getBoundingClientRect();
    return [ev.clientX - rect.left, ev.clientY - rect.top];
  }

  // -- pin interaction: click on a projected vertex to pin it where it
  // already projects, then drag the marker to the intended image pixel.
  let draggingVertex: number | null = null;

  canvas.addEventListener("mousedown", (ev) => {
    const imagePt = screenToImage(view, canvasPoint(ev));
    const pinned = store.overlay.pins.map((p) => p.pixel);
    const hitPin = pickVertex(pinned, imagePt, PICK_RADIUS_PX / view.zoom);
    if (hitPin !== null) {
      draggingVertex = store.overlay.pins[hitPin].vertex_id;
      store.selectedVertex = draggingVertex;
      redraw();
      return;
    }
    const hit = pickVertex(store.overlay.points, imagePt, PICK_RADIUS_PX / view.zoom);
    if (hit !== null) {
      // Overlay points are subset-relative; pins address model vertices.
      store.selectedVertex = subsetVertexId(hit);
      void store.placePin(store.selectedVertex, imagePt);
    }
  });

  canvas.addEventListener("mousemove", (ev) => {
    if (draggingVertex === null) return;
    const imagePt = screenToImage(view, canvasPoint(ev));
    store.optimisticPins = store.optimisticPins
      .filter((p) => p.vertex_id !== draggingVertex)
      .concat([{ vertex_id: draggingVertex, pixel: imagePt }]);
    redraw();
  });

  canvas.addEventListener("mouseup", (ev) => {
    if (draggingVertex === null) return;
    const imagePt = screenToImage(view, canvasPoint(ev));
    void store.dragPin(draggingVertex, imagePt);
    draggingVertex = null;
  });

  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    view = zoomAbout(view, canvasPoint(ev as unknown as MouseEvent), ev.deltaY < 0 ? 1.15 : 1 / 1.15);
    redraw();
  });

  let subsetVertexIds: number[] = [];
  function subsetVertexId(subsetIndex: number): number {
    return subsetVertexIds[subsetIndex] ?? subsetIndex;
  }

  async function loadSubsetIds(): Promise<void> {
    // The export payload carries the subset index lists; fetch them once
    // so clicks on overlay points resolve to model vertex ids.
    const payload = await api.exportAnnotation(info.session_id);
    subsetVertexIds = payload.subsets[store.subset] ?? [];
  }

  window.addEventListener("keydown", (ev) => {
    if (ev.key === "Delete" || ev.key === "Backspace") {
      if (store.selectedVertex !== null) {
        void store.deletePin(store.selectedVertex);
        store.selectedVertex = null;
      }
    } else if (ev.key === "z" || ev.key === "x") {
      const at = SUBSET_CYCLE.indexOf(store.subset);
      const next =
        ev.key === "x"
          ? SUBSET_CYCLE[(at + 1) % SUBSET_CYCLE.length]
          : SUBSET_CYCLE[(at + SUBSET_CYCLE.length - 1) % SUBSET_CYCLE.length];
      void store.setSubset(next).then(() => {
        subsetLabel.textContent = next;
        return loadSubsetIds();
      });
    }
  });

  // -- attribute card form + export download -------------------------------
  for (const [field, options] of Object.entries(ATTRIBUTE_OPTIONS)) {
    const select = attributesForm.querySelector<HTMLSelectElement>(`[name=${field}]`);
    if (!select) continue;
    for (const value of options) {
      const opt = document.createElement("option");
      opt.value = value;
      opt.textContent = value;
      select.appendChild(opt);
    }
  }

  exportButton.addEventListener("click", async () => {
    const payload = await api.exportAnnotation(info.session_id);
    const data = new FormData(attributesForm);
    const card: AttributeCard = {
      ...emptyCard(),
      pose: (data.get("pose") as AttributeCard["pose"]) ?? "front",
      expression: (data.get("expression") as AttributeCard["expression"]) ?? "neutral",
      occlusion: data.get("occlusion") === "on",
      gender: (data.get("gender") as AttributeCard["gender"]) ?? "unknown",
      age_group: (data.get("age_group") as AttributeCard["age_group"]) ?? "unknown",
      quality: (data.get("quality") as AttributeCard["quality"]) ?? "high",
      illumination: (data.get("illumination") as AttributeCard["illumination"]) ?? "standard",
    };
    const problems = cardViolations(card);
    if (problems.length > 0) {
      status.textContent = `attribute card invalid: ${problems.join("; ")}`;
      return;
    }
    payload.attributes = card;
    const blob = new Blob([JSON.stringify(payload, null, 1)], { type: "application/json" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = `annotation-rev${payload.revision}.json`;
    link.click();
    URL.revokeObjectURL(link.href);
    status.textContent = `exported revision ${payload.revision}`;
  });

  subsetLabel.textContent = store.subset;
  await store.refresh();
  await loadSubsetIds();
  status.textContent = `session ${info.session_id.slice(0, 8)} on model ${modelId}`;
}

boot().catch((err) => {
  const status = document.getElementById("status");
  if (status) status.textContent = String(err);
});
