import { ApiError } from "./api";
import type { MutateResponse, PinOp, PinPayload, StatePayload, Vec2 } from "./types";

/** The slice of the API client the store needs (mockable in tests). */
export interface SessionApi {
  mutatePins(
    sessionId: string,
    op: PinOp,
    pin: PinPayload,
    expectedRevision?: number,
  ): Promise<MutateResponse>;
  getState(sessionId: string, subset: string): Promise<StatePayload>;
}

export interface OverlayState {
  /** Revision the displayed geometry belongs to (never mixed). */
  revision: number;
  points: Vec2[];
  pins: PinPayload[];
  subset: string;
  rmsPinError: number;
}

export interface SessionEvents {
  onOverlay?(state: OverlayState): void;
  onPending?(pending: boolean): void;
  onStatus?(message: string): void;
}

interface QueuedMutation {
  op: PinOp;
  pin: PinPayload;
}

/**
 * Client-side session store.
 *
 * Guarantees, matching the service contract:
 * - the overlay always comes from one acknowledged server revision;
 * - at most one mutation is in flight; user actions queue behind it;
 * - every mutation carries the expected revision, so a retry of a lost
 *   response is rejected by the server instead of applied twice;
 * - a pending indicator is raised whenever the displayed revision lags
 *   the highest requested one.
 */
export class SessionStore {
  overlay: OverlayState;
  subset = "landmark68";
  selectedVertex: number | null = null;
  /** Optimistic markers shown until the server acknowledges. */
  optimisticPins: PinPayload[] = [];

  private requestedRevision = 0;
  private acknowledgedRevision = 0;
  private queue: QueuedMutation[] = [];
  private inFlight = false;

  constructor(
    private readonly api: SessionApi,
    readonly sessionId: string,
    private readonly events: SessionEvents = {},
  ) {
    this.overlay = {
      revision: -1,
      points: [],
      pins: [],
      subset: this.subset,
      rmsPinError: 0,
    };
  }

  get pending(): boolean {
    return this.overlay.revision < this.requestedRevision || this.inFlight || this.queue.length > 0;
  }

  get exportEnabled(): boolean {
    return !this.pending;
  }

  async refresh(): Promise<OverlayState> {
    const state = await this.api.getState(this.sessionId, this.subset);
    this.applyState(state);
    return this.overlay;
  }

  private applyState(state: StatePayload): void {
    // Never replace newer geometry with an older snapshot.
    if (state.revision < this.overlay.revision && state.subset === this.overlay.subset) {
      return;
    }
    this.overlay = {
      revision: state.revision,
      points: state.points,
      pins: state.pins,
      subset: state.subset,
      rmsPinError: state.rms_pin_error,
    };
    this.acknowledgedRevision = Math.max(this.acknowledgedRevision, state.latest_revision);
    this.events.onOverlay?.(this.overlay);
    this.events.onPending?.(this.pending);
  }

  async setSubset(subset: string): Promise<OverlayState> {
    this.subset = subset;
    return this.refresh();
  }

  placePin(vertexId: number, pixel: Vec2): Promise<void> {
    return this.enqueue({ op: "add", pin: { vertex_id: vertexId, pixel } });
  }

  dragPin(vertexId: number, pixel: Vec2): Promise<void> {
    return this.enqueue({ op: "move", pin: { vertex_id: vertexId, pixel } });
  }

  deletePin(vertexId: number): Promise<void> {
    return this.enqueue({ op: "delete", pin: { vertex_id: vertexId, pixel: [0, 0] } });
  }

  private enqueue(mutation: QueuedMutation): Promise<void> {
    if (mutation.op !== "delete") {
      this.optimisticPins = this.optimisticPins
        .filter((p) => p.vertex_id !== mutation.pin.vertex_id)
        .concat([mutation.pin]);
    }
    this.queue.push(mutation);
    this.events.onPending?.(true);
    return this.drain();
  }

  private async drain(): Promise<void> {
    if (this.inFlight) return;
    this.inFlight = true;
    try {
      while (this.queue.length > 0) {
        const mutation = this.queue.shift()!;
        await this.runMutation(mutation);
      }
    } finally {
      this.inFlight = false;
      this.events.onPending?.(this.pending);
    }
  }

  private async runMutation(mutation: QueuedMutation): Promise<void> {
    try {
      const out = await this.api.mutatePins(
        this.sessionId,
        mutation.op,
        mutation.pin,
        this.acknowledgedRevision,
      );
      this.requestedRevision = Math.max(this.requestedRevision, out.revision);
      this.acknowledgedRevision = out.revision;
      // Authoritative state replaces the optimistic marker.
      const state = await this.api.getState(this.sessionId, this.subset);
      this.optimisticPins = this.optimisticPins.filter(
        (p) => !state.pins.some((q) => q.vertex_id === p.vertex_id),
      );
      this.applyState(state);
      this.events.onStatus?.(
        `revision ${out.revision}: rms ${out.rms_pin_error.toFixed(2)} px`,
      );
    } catch (err) {
      if (err instanceof ApiError && err.code === "ConflictingRevision") {
        // Somebody (perhaps our own lost retry) advanced the session:
        // resynchronize and replay the mutation once.
        const state = await this.api.getState(this.sessionId, this.subset);
        this.applyState(state);
        this.acknowledgedRevision = Math.max(this.acknowledgedRevision, state.latest_revision);
        await this.runMutation(mutation);
        return;
      }
      this.optimisticPins = this.optimisticPins.filter(
        (p) => p.vertex_id !== mutation.pin.vertex_id,
      );
      const message = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
      this.events.onStatus?.(message);
    }
  }
}
