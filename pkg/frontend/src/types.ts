// Wire payloads exchanged with the annotation service. These mirror the
// server's JSON schemas field for field.

export type Vec2 = [number, number];

export interface PinPayload {
  vertex_id: number;
  pixel: Vec2;
  weight?: number;
}

export type PinOp = "add" | "move" | "delete";

export interface SessionInfo {
  session_id: string;
  model_id: string;
  image_size: [number, number];
  revision: number;
}

export interface FitParamsPayload {
  beta: number[];
  psi: number[];
  theta_jaw: number[];
  rot6: number[];
  scale: number;
  translation: number[];
}

export interface StatePayload {
  revision: number;
  latest_revision: number;
  subset: string;
  points: Vec2[];
  pins: PinPayload[];
  rms_pin_error: number;
  params: FitParamsPayload;
}

export interface MutateResponse {
  revision: number;
  rms_pin_error: number;
  converged: boolean;
}

export interface AttributeCard {
  pose: "front" | "side" | "atypical";
  expression: "neutral" | "non-neutral";
  occlusion: boolean;
  gender: "female" | "male" | "unknown";
  age_group: "child" | "young" | "middle" | "senior" | "unknown";
  quality: "high" | "low";
  illumination: "standard" | "non-standard";
}

export interface ExportPayload {
  schema_version: number;
  kind: "annotation";
  units: string;
  image_size: [number, number];
  vertices: number[][];
  model_view: number[][];
  frustum: number[][];
  bbox: { x: number; y: number; w: number; h: number; units: string };
  attributes: AttributeCard;
  subsets: Record<string, number[]>;
  revision: number;
  model_id: string;
}

export interface ModelInfo {
  num_vertices: number;
  num_shape: number;
  num_expr: number;
  subsets: Record<string, number>;
}

export interface ServiceError {
  code: string;
  message: string;
}
