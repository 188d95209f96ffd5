/**
 * Client-side render of the synthetic audio instruction channel: one
 * 2048-sample sine window per token plus a STOP window, matching the
 * decoder's vocabulary (12 content tokens = 3 arms x 4 slots).
 */

import { SLOT_NAMES } from "./geometry.js";

export const SAMPLE_RATE = 8000;
export const WINDOW = 2048;
export const STOP_TOKEN = 12;
const FREQ_JITTER = 0.025;

export function tokenOf(arm: number, slot: string): number {
  const si = SLOT_NAMES.indexOf(slot.toUpperCase() as "A");
  if (si < 0 || arm < 1 || arm > 3) {
    throw new Error(`no token for arm ${arm} slot ${slot}`);
  }
  return (arm - 1) * 4 + si;
}

export function tokenFreq(token: number): number {
  return 400 + 60 * token;
}

/**
 * Float64 samples for the token sequence. `rand` supplies phase and
 * frequency jitter; pass a seeded function for reproducible clips.
 */
export function synthesizeAudio(
  tokens: number[],
  rand: () => number = Math.random,
): Float64Array {
  const seq = [...tokens, STOP_TOKEN];
  const clip = new Float64Array(seq.length * WINDOW);
  seq.forEach((token, w) => {
    const f = tokenFreq(token) * (1 + (rand() * 2 - 1) * FREQ_JITTER);
    const phase = rand() * 2 * Math.PI;
    const base = w * WINDOW;
    for (let n = 0; n < WINDOW; n++) {
      clip[base + n] = Math.sin((2 * Math.PI * f * n) / SAMPLE_RATE + phase);
    }
  });
  return clip;
}

/** Little-endian float64 bytes, base64-encoded (the wire layout). */
export function base64FromFloat64(clip: Float64Array): string {
  const bytes = new Uint8Array(clip.length * 8);
  const view = new DataView(bytes.buffer);
  clip.forEach((v, i) => view.setFloat64(i * 8, v, true));
  let binary = "";
  const chunk = 0x2000;
  for (let i = 0; i < bytes.length; i += chunk) {
    binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
  }
  return btoa(binary);
}
