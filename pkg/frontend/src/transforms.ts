/** Viewer-side scene transforms: foveation keep-masks, focus keep-masks,
 * and the artistic per-level presets, mirroring the reference transforms.
 */

import { ViewerModel } from "./parser.js";
import { CameraDict } from "./render.js";

const SH_C0 = 0.28209479177387814;

export interface FoveaSpec {
  gaze: [number, number]; // pixels
  sigmas: number[]; // per level, strictly decreasing
  tau: number;
}

export function defaultFoveaSpec(
  cam: CameraDict,
  numLevels: number,
  gaze?: [number, number],
  tau = 0.01,
): FoveaSpec {
  const sigma1 = Math.hypot(cam.width, cam.height) / 2;
  const sigmas: number[] = [];
  for (let l = 0; l < numLevels; l++) sigmas.push(sigma1 / 2 ** l);
  return { gaze: gaze ?? [cam.width / 2, cam.height / 2], sigmas, tau };
}

function projectCenter(
  model: ViewerModel,
  cam: CameraDict,
  i: number,
): [number, number, boolean] {
  const r = cam.rotation;
  const t = cam.translation;
  const px = model.positions[3 * i];
  const py = model.positions[3 * i + 1];
  const pz = model.positions[3 * i + 2];
  const zc = r[6] * px + r[7] * py + r[8] * pz + t[2];
  if (zc <= cam.near) return [0, 0, false];
  const xc = r[0] * px + r[1] * py + r[2] * pz + t[0];
  const yc = r[3] * px + r[4] * py + r[5] * pz + t[1];
  return [(cam.fx * xc) / zc + cam.cx, (cam.fy * yc) / zc + cam.cy, true];
}

/** Keep mask for foveated rendering: level-1 always kept; higher levels kept
 * when sigmoid(opacity) * exp(-d^2 / 2 sigma_l^2) clears tau. */
export function foveaKeepMask(
  model: ViewerModel,
  cam: CameraDict,
  spec: FoveaSpec,
): Uint8Array {
  if (spec.sigmas.length < model.numLevels) {
    throw new Error("spec needs a sigma for every level");
  }
  const keep = new Uint8Array(model.count);
  for (let i = 0; i < model.count; i++) {
    if (model.levels[i] === 1) {
      keep[i] = 1;
      continue;
    }
    const [u, v, valid] = projectCenter(model, cam, i);
    if (!valid) continue;
    const sigma = spec.sigmas[model.levels[i] - 1];
    const d2 = (u - spec.gaze[0]) ** 2 + (v - spec.gaze[1]) ** 2;
    const weight = Math.exp(-d2 / (2 * sigma * sigma));
    const alpha = 1 / (1 + Math.exp(-model.opacityLogits[i]));
    if (alpha * weight >= spec.tau) keep[i] = 1;
  }
  return keep;
}

export interface LevelTransform {
  colorScale?: [number, number, number];
  colorOffset?: [number, number, number];
  opacity?: number;
  drop?: boolean;
}

export type Recipe = Record<number, LevelTransform>;

/** Named presets matching the reference toolkit (sans position jitter,
 * which a static viewer has no seed contract for). */
export function makePreset(name: string, numLevels: number): Recipe {
  const has = (l: number) => l <= numLevels;
  const recipe: Recipe = {};
  if (name === "brush") {
    for (const l of [2, 4]) if (has(l)) recipe[l] = { colorOffset: [0.2, 0.2, 0.2] };
    for (const l of [3, 5]) if (has(l)) recipe[l] = { colorOffset: [-0.2, -0.2, -0.2] };
  } else if (name === "xray") {
    for (const l of [1, 2]) {
      if (has(l)) recipe[l] = { colorScale: [0, 0, 0], colorOffset: [0.05, 0.05, 0.25] };
    }
    if (has(3)) recipe[3] = { colorOffset: [0.1, 0.1, 0.1] };
    for (const l of [4, 5]) if (has(l)) recipe[l] = { colorOffset: [0.25, 0.25, 0.25] };
  } else if (name === "sharp") {
    if (has(2)) recipe[2] = { drop: true };
    for (const l of [3, 4]) if (has(l)) recipe[l] = { opacity: 1.0 };
    if (has(5)) recipe[5] = { opacity: 1.0, colorOffset: [-0.1, -0.1, -0.1] };
  } else {
    throw new Error(`unknown preset '${name}'`);
  }
  return recipe;
}

/** Apply a recipe to a parsed model, returning a transformed copy.
 * Color scale/offset act in each level's native color space (raw for
 * level 1, signed residual for >= 2) through the DC SH coefficient. */
export function applyRecipe(model: ViewerModel, recipe: Recipe): ViewerModel {
  for (const key of Object.keys(recipe)) {
    const level = Number(key);
    if (level < 1 || level > model.numLevels) {
      throw new Error(`recipe level ${level} outside [1, ${model.numLevels}]`);
    }
  }
  const keepIdx: number[] = [];
  for (let i = 0; i < model.count; i++) {
    if (!recipe[model.levels[i]]?.drop) keepIdx.push(i);
  }
  const n = keepIdx.length;
  const basis = model.shBasis;
  const out: ViewerModel = {
    count: n,
    numLevels: model.numLevels,
    shBasis: basis,
    background: model.background.slice(),
    positions: new Float32Array(n * 3),
    quaternions: new Float32Array(n * 4),
    logScales: new Float32Array(n * 3),
    opacityLogits: new Float32Array(n),
    shCoeffs: new Float32Array(n * 3 * basis),
    levels: new Uint8Array(n),
  };
  for (let j = 0; j < n; j++) {
    const i = keepIdx[j];
    out.positions.set(model.positions.subarray(3 * i, 3 * i + 3), 3 * j);
    out.quaternions.set(model.quaternions.subarray(4 * i, 4 * i + 4), 4 * j);
    out.logScales.set(model.logScales.subarray(3 * i, 3 * i + 3), 3 * j);
    out.shCoeffs.set(
      model.shCoeffs.subarray(3 * i * basis, 3 * (i + 1) * basis),
      3 * j * basis,
    );
    out.levels[j] = model.levels[i];

    const tr = recipe[model.levels[i]];
    let logit = model.opacityLogits[i];
    if (tr?.opacity !== undefined) {
      const p = Math.min(Math.max(tr.opacity, 1e-4), 1 - 1e-4);
      logit = Math.log(p / (1 - p));
    }
    out.opacityLogits[j] = logit;

    if (tr && (tr.colorScale || tr.colorOffset)) {
      const scale = tr.colorScale ?? [1, 1, 1];
      const offset = tr.colorOffset ?? [0, 0, 0];
      const residual = model.levels[i] >= 2;
      for (let ch = 0; ch < 3; ch++) {
        const base = (3 * j + ch) * basis;
        // native color c = raw or 2*raw - 1; c' = scale*c + offset maps
        // back onto the DC coefficient; directional terms scale through.
        const raw = 0.5 + SH_C0 * out.shCoeffs[base];
        const c0 = residual ? raw * 2 - 1 : raw;
        const c1 = scale[ch] * c0 + offset[ch];
        const rawNew = residual ? (c1 + 1) / 2 : c1;
        out.shCoeffs[base] = (rawNew - 0.5) / SH_C0;
        for (let m = 1; m < basis; m++) {
          out.shCoeffs[base + m] *= scale[ch];
        }
      }
    }
  }
  return out;
}
