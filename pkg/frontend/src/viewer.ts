/** Interactive viewer: loads an exported bundle (index.json + model.fags +
 * manifest.json) over static HTTP and re-renders on UI changes. State
 * (camera index, level k, gaze, preset) is kept URL-encodable in the hash.
 */

import { ViewerModel, parseModel, levelSubsetCount } from "./parser.js";
import { CameraDict, renderView } from "./render.js";
import {
  defaultFoveaSpec,
  foveaKeepMask,
  makePreset,
  applyRecipe,
} from "./transforms.js";

interface UiState {
  cam: number;
  k: number;
  fovea: boolean;
  gazeX: number;
  gazeY: number;
  preset: string; // "none" | "brush" | "xray" | "sharp"
}

function readState(defaults: UiState): UiState {
  const params = new URLSearchParams(location.hash.slice(1));
  const num = (key: string, fallback: number) => {
    const raw = params.get(key);
    const v = raw === null ? NaN : Number(raw);
    return Number.isFinite(v) ? v : fallback;
  };
  return {
    cam: num("cam", defaults.cam),
    k: num("k", defaults.k),
    fovea: params.get("fovea") === "1",
    gazeX: num("gx", defaults.gazeX),
    gazeY: num("gy", defaults.gazeY),
    preset: params.get("preset") ?? defaults.preset,
  };
}

function writeState(state: UiState): void {
  const params = new URLSearchParams();
  params.set("cam", String(state.cam));
  params.set("k", String(state.k));
  if (state.fovea) {
    params.set("fovea", "1");
    params.set("gx", state.gazeX.toFixed(1));
    params.set("gy", state.gazeY.toFixed(1));
  }
  if (state.preset !== "none") params.set("preset", state.preset);
  history.replaceState(null, "", `#${params.toString()}`);
}

async function fetchBuffer(url: string): Promise<ArrayBuffer> {
  const res = await fetch(url);
  if (!res.ok) throw new Error(`${url}: HTTP ${res.status}`);
  return res.arrayBuffer();
}

export async function startViewer(root: HTMLElement): Promise<void> {
  const index = JSON.parse(
    new TextDecoder().decode(await fetchBuffer("index.json")),
  );
  const model = parseModel(await fetchBuffer(index.model));
  const manifest = JSON.parse(
    new TextDecoder().decode(await fetchBuffer(index.manifest)),
  );
  const cameras: CameraDict[] = manifest.images.map(
    (e: { camera: CameraDict }) => e.camera,
  );

  const state = readState({
    cam: 0,
    k: model.numLevels,
    fovea: false,
    gazeX: cameras[0].width / 2,
    gazeY: cameras[0].height / 2,
    preset: "none",
  });

  root.innerHTML = `
    <div style="font-family: sans-serif">
      <canvas id="fs-canvas" style="image-rendering: pixelated; width: 512px"></canvas>
      <div>
        level k: <input id="fs-level" type="range" min="1" max="${model.numLevels}" step="1">
        <span id="fs-level-label"></span>
      </div>
      <div>
        camera: <input id="fs-cam" type="range" min="0" max="${cameras.length - 1}" step="1">
        foveation: <input id="fs-fovea" type="checkbox"> (click image to set gaze)
        preset: <select id="fs-preset">
          <option>none</option><option>brush</option>
          <option>xray</option><option>sharp</option>
        </select>
      </div>
      <div id="fs-hud"></div>
    </div>`;
  const canvas = root.querySelector<HTMLCanvasElement>("#fs-canvas")!;
  const level = root.querySelector<HTMLInputElement>("#fs-level")!;
  const camSlider = root.querySelector<HTMLInputElement>("#fs-cam")!;
  const foveaBox = root.querySelector<HTMLInputElement>("#fs-fovea")!;
  const presetSel = root.querySelector<HTMLSelectElement>("#fs-preset")!;
  const hud = root.querySelector<HTMLDivElement>("#fs-hud")!;

  const redraw = () => {
    writeState(state);
    const cam = cameras[state.cam];
    canvas.width = cam.width;
    canvas.height = cam.height;
    let scene: ViewerModel = model;
    if (state.preset !== "none") {
      scene = applyRecipe(model, makePreset(state.preset, model.numLevels));
    }
    let keep: Uint8Array | null = null;
    if (state.fovea) {
      const spec = defaultFoveaSpec(cam, scene.numLevels, [
        state.gazeX,
        state.gazeY,
      ]);
      keep = foveaKeepMask(scene, cam, spec);
    }
    const img = renderView(scene, cam, state.k, { keep });
    const ctx = canvas.getContext("2d")!;
    const pixels = ctx.createImageData(cam.width, cam.height);
    for (let p = 0; p < cam.width * cam.height; p++) {
      pixels.data[4 * p] = Math.round(img[3 * p] * 255);
      pixels.data[4 * p + 1] = Math.round(img[3 * p + 1] * 255);
      pixels.data[4 * p + 2] = Math.round(img[3 * p + 2] * 255);
      pixels.data[4 * p + 3] = 255;
    }
    ctx.putImageData(pixels, 0, 0);

    let shown = 0;
    for (let i = 0; i < scene.count; i++) {
      if (scene.levels[i] <= state.k && (!keep || keep[i])) shown++;
    }
    hud.textContent =
      `showing ${shown} / ${scene.count} splats; ` +
      `level subset <= ${state.k}: ${levelSubsetCount(scene, state.k)}`;
    level.value = String(state.k);
    camSlider.value = String(state.cam);
    foveaBox.checked = state.fovea;
    presetSel.value = state.preset;
    root.querySelector("#fs-level-label")!.textContent =
      `${state.k} / ${model.numLevels}`;
  };

  level.addEventListener("input", () => {
    state.k = Number(level.value);
    redraw();
  });
  camSlider.addEventListener("input", () => {
    state.cam = Number(camSlider.value);
    redraw();
  });
  foveaBox.addEventListener("change", () => {
    state.fovea = foveaBox.checked;
    redraw();
  });
  presetSel.addEventListener("change", () => {
    state.preset = presetSel.value;
    redraw();
  });
  canvas.addEventListener("click", (ev) => {
    if (!state.fovea) return;
    const rect = canvas.getBoundingClientRect();
    state.gazeX = ((ev.clientX - rect.left) / rect.width) * canvas.width;
    state.gazeY = ((ev.clientY - rect.top) / rect.height) * canvas.height;
    redraw();
  });

  redraw();
}
