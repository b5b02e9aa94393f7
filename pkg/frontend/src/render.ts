/** Forward-only CPU renderer: a port of the reference rasterizer's forward
 * pipeline with a global depth sort instead of tiles (fine at viewer scale).
 * Per-pixel math mirrors the reference implementation so renders agree up to
 * blend-precision differences.
 */

import { ViewerModel } from "./parser.js";

export interface CameraDict {
  width: number;
  height: number;
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  rotation: number[]; // row-major 3x3, world-to-camera
  translation: number[];
  near: number;
}

export interface RenderSettings {
  /** Per-Gaussian keep mask (e.g. foveation/focus selection). */
  keep?: Uint8Array | boolean[] | null;
  /** Honor signed residual colors for levels >= 2 (default true). */
  residualColors?: boolean;
}

const SH_C0 = 0.28209479177387814;
const SH_C1 = 0.4886025119029199;
const BLUR_REG = 0.3;
const CUTOFF = 18.0;
const EARLY_STOP = 1e-4;
const FRUSTUM_MARGIN = 1.3;

interface Splat {
  depth: number;
  index: number;
  mx: number;
  my: number;
  ia: number;
  ib: number;
  ic: number;
  alpha: number;
  r: number;
  g: number;
  b: number;
  extX: number;
  extY: number;
}

function cameraCenter(cam: CameraDict): [number, number, number] {
  const r = cam.rotation;
  const t = cam.translation;
  // center = -R^T t
  return [
    -(r[0] * t[0] + r[3] * t[1] + r[6] * t[2]),
    -(r[1] * t[0] + r[4] * t[1] + r[7] * t[2]),
    -(r[2] * t[0] + r[5] * t[1] + r[8] * t[2]),
  ];
}

function projectSplats(
  model: ViewerModel,
  cam: CameraDict,
  k: number,
  settings: RenderSettings,
): Splat[] {
  const splats: Splat[] = [];
  const rot = cam.rotation;
  const t = cam.translation;
  const center = cameraCenter(cam);
  const residual = settings.residualColors !== false;
  const keep = settings.keep ?? null;
  const basis = model.shBasis;

  for (let i = 0; i < model.count; i++) {
    if (model.levels[i] > k) continue;
    if (keep && !keep[i]) continue;

    const px = model.positions[3 * i];
    const py = model.positions[3 * i + 1];
    const pz = model.positions[3 * i + 2];
    const xc = rot[0] * px + rot[1] * py + rot[2] * pz + t[0];
    const yc = rot[3] * px + rot[4] * py + rot[5] * pz + t[1];
    const zc = rot[6] * px + rot[7] * py + rot[8] * pz + t[2];
    if (zc <= cam.near) continue;

    const mx = (cam.fx * xc) / zc + cam.cx;
    const my = (cam.fy * yc) / zc + cam.cy;

    // rotation matrix from the (w, x, y, z) quaternion, renormalized
    let qw = model.quaternions[4 * i];
    let qx = model.quaternions[4 * i + 1];
    let qy = model.quaternions[4 * i + 2];
    let qz = model.quaternions[4 * i + 3];
    const qn = Math.hypot(qw, qx, qy, qz);
    qw /= qn;
    qx /= qn;
    qy /= qn;
    qz /= qn;
    const R = [
      1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz), 2 * (qx * qz + qw * qy),
      2 * (qx * qy + qw * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx),
      2 * (qx * qz - qw * qy), 2 * (qy * qz + qw * qx), 1 - 2 * (qx * qx + qy * qy),
    ];
    const s0 = Math.exp(2 * model.logScales[3 * i]);
    const s1 = Math.exp(2 * model.logScales[3 * i + 1]);
    const s2 = Math.exp(2 * model.logScales[3 * i + 2]);
    // cov3d = R diag(s) R^T
    const cov = new Float64Array(9);
    for (let r0 = 0; r0 < 3; r0++) {
      for (let c0 = 0; c0 < 3; c0++) {
        cov[3 * r0 + c0] =
          R[3 * r0] * s0 * R[3 * c0] +
          R[3 * r0 + 1] * s1 * R[3 * c0 + 1] +
          R[3 * r0 + 2] * s2 * R[3 * c0 + 2];
      }
    }

    // EWA Jacobian rows, then M = J * camRot (2x3)
    const j00 = cam.fx / zc;
    const j02 = (-cam.fx * xc) / (zc * zc);
    const j11 = cam.fy / zc;
    const j12 = (-cam.fy * yc) / (zc * zc);
    const m0 = [
      j00 * rot[0] + j02 * rot[6],
      j00 * rot[1] + j02 * rot[7],
      j00 * rot[2] + j02 * rot[8],
    ];
    const m1 = [
      j11 * rot[3] + j12 * rot[6],
      j11 * rot[4] + j12 * rot[7],
      j11 * rot[5] + j12 * rot[8],
    ];
    const covM = (m: number[], n: number[]): number => {
      let acc = 0;
      for (let r0 = 0; r0 < 3; r0++) {
        for (let c0 = 0; c0 < 3; c0++) {
          acc += m[r0] * cov[3 * r0 + c0] * n[c0];
        }
      }
      return acc;
    };
    const preA = covM(m0, m0);
    const preB = covM(m0, m1);
    const preC = covM(m1, m1);

    const a = preA + BLUR_REG;
    const b = preB;
    const c = preC + BLUR_REG;
    const det = a * c - b * b;
    const detPre = preA * preC - preB * preB;
    const aaScale = Math.sqrt(Math.max(detPre, 0) / det);
    const alphaSig = 1 / (1 + Math.exp(-model.opacityLogits[i]));
    const alpha = alphaSig * aaScale;

    const extX = Math.sqrt(CUTOFF * a);
    const extY = Math.sqrt(CUTOFF * c);
    const ex = (FRUSTUM_MARGIN - 1) * 0.5 * cam.width;
    const ey = (FRUSTUM_MARGIN - 1) * 0.5 * cam.height;
    if (
      mx + extX < -ex || mx - extX > cam.width + ex ||
      my + extY < -ey || my - extY > cam.height + ey
    ) {
      continue;
    }

    // view-dependent color from SH, residual mapping for levels >= 2
    const vx = px - center[0];
    const vy = py - center[1];
    const vz = pz - center[2];
    const dist = Math.max(Math.hypot(vx, vy, vz), 1e-12);
    const dx = vx / dist;
    const dy = vy / dist;
    const dz = vz / dist;
    const color = [0, 0, 0];
    for (let ch = 0; ch < 3; ch++) {
      const base = (3 * i + ch) * basis;
      let raw = 0.5 + SH_C0 * model.shCoeffs[base];
      if (basis === 4) {
        raw +=
          -SH_C1 * dy * model.shCoeffs[base + 1] +
          SH_C1 * dz * model.shCoeffs[base + 2] -
          SH_C1 * dx * model.shCoeffs[base + 3];
      }
      color[ch] = residual && model.levels[i] >= 2 ? raw * 2 - 1 : raw;
    }

    splats.push({
      depth: zc,
      index: i,
      mx,
      my,
      ia: c / det,
      ib: -b / det,
      ic: a / det,
      alpha,
      r: color[0],
      g: color[1],
      b: color[2],
      extX,
      extY,
    });
  }
  splats.sort((p, q) => p.depth - q.depth || p.index - q.index);
  return splats;
}

/** Render levels <= k to a clamped (h*w*3) float image in [0, 1]. */
export function renderView(
  model: ViewerModel,
  cam: CameraDict,
  k: number,
  settings: RenderSettings = {},
): Float64Array {
  if (k < 1 || k > model.numLevels) {
    throw new RangeError(`level ${k} outside [1, ${model.numLevels}]`);
  }
  const w = cam.width;
  const h = cam.height;
  const img = new Float64Array(h * w * 3);
  const trans = new Float64Array(h * w).fill(1);
  const splats = projectSplats(model, cam, k, settings);

  for (const s of splats) {
    const x0 = Math.min(Math.max(Math.floor(s.mx - s.extX), 0), w);
    const x1 = Math.min(Math.max(Math.ceil(s.mx + s.extX) + 1, 0), w);
    const y0 = Math.min(Math.max(Math.floor(s.my - s.extY), 0), h);
    const y1 = Math.min(Math.max(Math.ceil(s.my + s.extY) + 1, 0), h);
    for (let py = y0; py < y1; py++) {
      for (let px = x0; px < x1; px++) {
        const p = py * w + px;
        const tr = trans[p];
        if (tr < EARLY_STOP) continue;
        const ddx = px + 0.5 - s.mx;
        const ddy = py + 0.5 - s.my;
        const m2 = s.ia * ddx * ddx + 2 * s.ib * ddx * ddy + s.ic * ddy * ddy;
        if (m2 > CUTOFF) continue;
        const sig = s.alpha * Math.exp(-0.5 * m2);
        const wgt = sig * tr;
        img[3 * p] += s.r * wgt;
        img[3 * p + 1] += s.g * wgt;
        img[3 * p + 2] += s.b * wgt;
        trans[p] = tr * (1 - sig);
      }
    }
  }

  const bg = model.background;
  for (let p = 0; p < h * w; p++) {
    for (let ch = 0; ch < 3; ch++) {
      const v = img[3 * p + ch] + bg[ch] * trans[p];
      img[3 * p + ch] = v < 0 ? 0 : v > 1 ? 1 : v;
    }
  }
  return img;
}
