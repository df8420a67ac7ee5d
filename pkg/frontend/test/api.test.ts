import { describe, expect, it, vi } from "vitest";

import { ApiClient, ServiceError } from "../src/api.js";

function mockFetch(status: number, payload: unknown) {
  return vi.fn(async () => ({
    ok: status >= 200 && status < 300,
    status,
    json: async () => payload,
  })) as unknown as typeof fetch;
}

describe("api client", () => {
  it("posts encode bodies with and without labels", async () => {
    const fetchFn = mockFetch(200, { model_id: "m000001", part_presence: [true],
                                     k: 4, l: 64, seed: 0, checkpoint: "x" });
    const api = new ApiClient("http://svc", fetchFn);
    await api.encode([[0, 0, 0]], [1]);
    let [url, init] = (fetchFn as any).mock.calls[0];
    expect(url).toBe("http://svc/encode");
    expect(JSON.parse(init.body)).toEqual({ points: [[0, 0, 0]], labels: [1] });
    await api.encode([[0, 0, 0]]);
    [, init] = (fetchFn as any).mock.calls[1];
    expect(JSON.parse(init.body)).toEqual({ points: [[0, 0, 0]] });
  });

  it("builds edit ops for every interaction", async () => {
    const fetchFn = mockFetch(200, { model_id: "m2", cloud: { points: [], labels: [] } });
    const api = new ApiClient("http://svc", fetchFn);
    await api.exchange("a", "b", 3);
    await api.interpolate("a", "b", 0.5, 2);
    await api.interpolate("a", "b", 0.5, null);
    await api.compose([["a", 1], ["b", 2]]);
    await api.regenerate("a", 4, "wgan");
    const bodies = (fetchFn as any).mock.calls.map((c: any) => JSON.parse(c[1].body).op);
    expect(bodies[0]).toEqual({ kind: "exchange", part_id: 3, sources: ["a", "b"] });
    expect(bodies[1]).toEqual({ kind: "interpolate-part", part_id: 2, t: 0.5,
                                sources: ["a", "b"] });
    expect(bodies[2]).toEqual({ kind: "interpolate-global", t: 0.5,
                                sources: ["a", "b"] });
    expect(bodies[3]).toEqual({ kind: "compose", sources: [["a", 1], ["b", 2]] });
    expect(bodies[4]).toEqual({ kind: "regenerate-part", part_id: 4,
                                head: "wgan", sources: ["a"] });
  });

  it("surfaces the server diagnostic on errors", async () => {
    const api = new ApiClient("http://svc",
                              mockFetch(400, { error: "part id 9 outside valid range 1..4" }));
    await expect(api.exchange("a", "b", 9)).rejects.toThrowError(
      /outside valid range 1\.\.4/);
    await expect(api.exchange("a", "b", 9)).rejects.toBeInstanceOf(ServiceError);
  });

  it("falls back to a status message when the body is not json", async () => {
    const fetchFn = vi.fn(async () => ({
      ok: false,
      status: 502,
      json: async () => { throw new Error("no body"); },
    })) as unknown as typeof fetch;
    const api = new ApiClient("http://svc", fetchFn);
    await expect(api.health()).rejects.toThrowError(/status 502/);
  });
});
