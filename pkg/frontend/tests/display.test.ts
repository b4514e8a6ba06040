import { describe, expect, it } from "vitest";

import {
  NEUTRAL,
  applyChannelMask,
  buildImageUrl,
  decodeDisplayState,
  encodeDisplayState,
  isNeutral,
} from "../src/display.js";

describe("buildImageUrl", () => {
  it("neutral controls produce a parameter-less URL (the stored image)", () => {
    expect(buildImageUrl("img42", NEUTRAL)).toBe("/api/image/img42");
  });

  it("non-neutral sliders map to query parameters", () => {
    const url = buildImageUrl("img42", {
      ...NEUTRAL,
      brightness: 0.25,
      contrast: 1.5,
      unsharp: 1,
      stretch: "asinh",
    });
    const params = new URL(url, "http://x").searchParams;
    expect(params.get("brightness")).toBe("0.25");
    expect(params.get("contrast")).toBe("1.5");
    expect(params.get("unsharp")).toBe("1");
    expect(params.get("stretch")).toBe("asinh");
  });

  it("ids are URL-encoded", () => {
    expect(buildImageUrl("a b", NEUTRAL)).toBe("/api/image/a%20b");
  });
});

describe("display state URL round trip", () => {
  it("neutral state encodes to an empty hash", () => {
    expect(encodeDisplayState(NEUTRAL)).toBe("");
    expect(isNeutral(decodeDisplayState(""))).toBe(true);
  });

  it("state survives encode/decode exactly", () => {
    const state = {
      brightness: -0.3,
      contrast: 2.15,
      unsharp: 0.85,
      stretch: "zscale-like",
      channels: { r: true, g: false, b: true },
    };
    const decoded = decodeDisplayState(`#${encodeDisplayState(state)}`);
    expect(decoded).toEqual(state);
  });

  it("out-of-range hash values clamp to valid ranges", () => {
    const decoded = decodeDisplayState("#b=9&c=-4&u=99");
    expect(decoded.brightness).toBe(1);
    expect(decoded.contrast).toBe(0);
    expect(decoded.unsharp).toBe(2);
  });
});

describe("applyChannelMask", () => {
  it("zeroes deselected channels only", () => {
    const data = new Uint8ClampedArray([10, 20, 30, 255, 40, 50, 60, 255]);
    applyChannelMask(data, { r: true, g: false, b: true });
    expect(Array.from(data)).toEqual([10, 0, 30, 255, 40, 0, 60, 255]);
  });

  it("all-on mask leaves data untouched", () => {
    const data = new Uint8ClampedArray([1, 2, 3, 4]);
    applyChannelMask(data, { r: true, g: true, b: true });
    expect(Array.from(data)).toEqual([1, 2, 3, 4]);
  });
});
