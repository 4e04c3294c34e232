import type { AttributeCard } from "./types";

export const ATTRIBUTE_OPTIONS = {
  pose: ["front", "side", "atypical"],
  expression: ["neutral", "non-neutral"],
  gender: ["female", "male", "unknown"],
  age_group: ["child", "young", "middle", "senior", "unknown"],
  quality: ["high", "low"],
  illumination: ["standard", "non-standard"],
} as const;

export function emptyCard(): AttributeCard {
  return {
    pose: "front",
    expression: "neutral",
    occlusion: false,
    gender: "unknown",
    age_group: "unknown",
    quality: "high",
    illumination: "standard",
  };
}

export function cardViolations(card: AttributeCard): string[] {
  const out: string[] = [];
  for (const [field, allowed] of Object.entries(ATTRIBUTE_OPTIONS)) {
    const value = (card as unknown as Record<string, unknown>)[field];
    if (!(allowed as readonly string[]).includes(value as string)) {
      out.push(`${field}: ${String(value)} not in ${allowed.join("/")}`);
    }
  }
  if (typeof card.occlusion !== "boolean") {
    out.push("occlusion: must be a boolean");
  }
  return out;
}
