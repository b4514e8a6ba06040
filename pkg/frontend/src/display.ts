/** Display adjustments: slider state, image URL building, URL-hash encoding.
 *
 * Neutral state maps to a parameter-less image URL, so the stored image is
 * served byte-identical. Channel toggles are applied client-side via a
 * canvas filter since the service returns the full PNG.
 */

export interface DisplayState {
  brightness: number; // [-1, 1], neutral 0
  contrast: number; // [0, 3], neutral 1
  unsharp: number; // [0, 2], neutral 0
  stretch: string; // "none" neutral
  channels: { r: boolean; g: boolean; b: boolean };
}

export const NEUTRAL: DisplayState = {
  brightness: 0,
  contrast: 1,
  unsharp: 0,
  stretch: "none",
  channels: { r: true, g: true, b: true },
};

export function isNeutral(s: DisplayState): boolean {
  return (
    s.brightness === 0 && s.contrast === 1 && s.unsharp === 0 && s.stretch === "none"
  );
}

/** Image endpoint URL; neutral adjustments produce no query parameters. */
export function buildImageUrl(id: string, s: DisplayState, base = ""): string {
  const params = new URLSearchParams();
  if (s.brightness !== 0) params.set("brightness", String(s.brightness));
  if (s.contrast !== 1) params.set("contrast", String(s.contrast));
  if (s.unsharp !== 0) params.set("unsharp", String(s.unsharp));
  if (s.stretch !== "none") params.set("stretch", s.stretch);
  const query = params.toString();
  return `${base}/api/image/${encodeURIComponent(id)}${query ? "?" + query : ""}`;
}

/** Encode non-neutral display state into a URL hash fragment. */
export function encodeDisplayState(s: DisplayState): string {
  const params = new URLSearchParams();
  if (s.brightness !== 0) params.set("b", String(s.brightness));
  if (s.contrast !== 1) params.set("c", String(s.contrast));
  if (s.unsharp !== 0) params.set("u", String(s.unsharp));
  if (s.stretch !== "none") params.set("s", s.stretch);
  const off = ["r", "g", "b"].filter((ch) => !s.channels[ch as "r" | "g" | "b"]);
  if (off.length) params.set("off", off.join(""));
  return params.toString();
}

export function decodeDisplayState(hash: string): DisplayState {
  const params = new URLSearchParams(hash.replace(/^#/, ""));
  const off = params.get("off") ?? "";
  return {
    brightness: clamp(parseFloat(params.get("b") ?? "0"), -1, 1),
    contrast: clamp(parseFloat(params.get("c") ?? "1"), 0, 3),
    unsharp: clamp(parseFloat(params.get("u") ?? "0"), 0, 2),
    stretch: params.get("s") ?? "none",
    channels: { r: !off.includes("r"), g: !off.includes("g"), b: !off.includes("b") },
  };
}

function clamp(v: number, lo: number, hi: number): number {
  if (Number.isNaN(v)) return lo === -1 ? 0 : lo === 0 && hi === 3 ? 1 : lo;
  return Math.min(hi, Math.max(lo, v));
}

/** Zero out deselected RGB channels on a canvas-drawn image. */
export function applyChannelMask(
  data: Uint8ClampedArray,
  channels: { r: boolean; g: boolean; b: boolean },
): void {
  if (channels.r && channels.g && channels.b) return;
  for (let i = 0; i < data.length; i += 4) {
    if (!channels.r) data[i] = 0;
    if (!channels.g) data[i + 1] = 0;
    if (!channels.b) data[i + 2] = 0;
  }
}
