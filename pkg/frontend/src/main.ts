/** DOM wiring for the viewer: sliders in, frames out, nothing computed locally. */

import { Debouncer, FrameResult, LatestFrame } from "./net.js";
import { psnrRgba, PSNR_CAP } from "./psnr.js";
import {
  bindArity,
  CheckpointInfo,
  clampState,
  masksQuery,
  renderQuery,
  RESOLUTIONS,
  ViewerState,
} from "./state.js";

const base =
  (document.getElementById("service-url") as HTMLInputElement)?.value ?? "";

interface Pane {
  img: HTMLImageElement;
  canvas: HTMLCanvasElement;
  latency: HTMLElement;
  stream: LatestFrame;
}

let meta: CheckpointInfo[] = [];
let state: ViewerState = {
  ckpt: "",
  t: 0,
  orbitDeg: 0,
  width: 128,
  height: 128,
  alpha: [],
};
let compare = false;
let overlayMask = -1; // -1 off, otherwise mask slot index

const debounce = new Debouncer(80);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function fetchFrame(url: string, signal: AbortSignal): Promise<FrameResult> {
  const resp = await fetch(base + url, { signal });
  if (!resp.ok) {
    const body = await resp.text();
    throw new Error(`${resp.status}: ${body}`);
  }
  const millis = parseFloat(resp.headers.get("X-Render-Millis") ?? "");
  return { blob: await resp.blob(), millis: Number.isFinite(millis) ? millis : null };
}

function makePane(prefix: string): Pane {
  const img = el<HTMLImageElement>(`${prefix}-img`);
  const canvas = el<HTMLCanvasElement>(`${prefix}-canvas`);
  const latency = el(`${prefix}-latency`);
  const pane: Pane = {
    img,
    canvas,
    latency,
    stream: new LatestFrame(
      fetchFrame,
      (result) => showFrame(pane, result),
      (err) => showError(String(err)),
    ),
  };
  return pane;
}

function showFrame(pane: Pane, result: FrameResult): void {
  const url = URL.createObjectURL(result.blob as Blob);
  pane.img.onload = () => {
    URL.revokeObjectURL(url);
    drawPane(pane);
    if (compare) updateBadge();
  };
  pane.img.src = url;
  pane.latency.textContent =
    result.millis !== null ? `${result.millis.toFixed(0)} ms` : "";
}

function drawPane(pane: Pane): void {
  const ctx = pane.canvas.getContext("2d");
  if (!ctx) return;
  pane.canvas.width = state.width;
  pane.canvas.height = state.height;
  ctx.drawImage(pane.img, 0, 0, state.width, state.height);
}

function showError(message: string): void {
  const box = el("error-box");
  box.textContent = message;
  box.classList.add("visible");
  setTimeout(() => box.classList.remove("visible"), 4000);
}

function currentInfo(id: string): CheckpointInfo | undefined {
  return meta.find((c) => c.id === id);
}

function readPixels(pane: Pane): Uint8ClampedArray | null {
  const ctx = pane.canvas.getContext("2d");
  if (!ctx || pane.canvas.width === 0) return null;
  return ctx.getImageData(0, 0, pane.canvas.width, pane.canvas.height).data;
}

function updateBadge(): void {
  const a = readPixels(paneA);
  const b = readPixels(paneB);
  const badge = el("psnr-badge");
  if (!a || !b || a.length !== b.length) {
    badge.textContent = "";
    return;
  }
  const value = psnrRgba(a, b);
  badge.textContent =
    value >= PSNR_CAP ? `identical (${PSNR_CAP} dB cap)` : `${value.toFixed(2)} dB`;
}

function syncRender(): void {
  debounce.schedule(() => {
    state = clampState(state);
    paneA.stream.request(renderQuery(state));
    if (compare) {
      const other = { ...state, ckpt: el<HTMLSelectElement>("ckpt-b").value };
      const info = currentInfo(other.ckpt);
      paneB.stream.request(renderQuery(info ? bindArity(other, info) : other));
    }
    if (overlayMask >= 0) fetchMasks();
  });
}

async function fetchMasks(): Promise<void> {
  try {
    const resp = await fetch(base + masksQuery(state));
    if (!resp.ok) throw new Error(`${resp.status}`);
    const form = await resp.formData();
    const part = form.get(`mask${overlayMask}`);
    if (!(part instanceof Blob)) return;
    const url = URL.createObjectURL(part);
    const maskImg = new Image();
    maskImg.onload = () => {
      URL.revokeObjectURL(url);
      const ctx = paneA.canvas.getContext("2d");
      if (!ctx) return;
      ctx.globalAlpha = 0.45;
      ctx.drawImage(maskImg, 0, 0, state.width, state.height);
      ctx.globalAlpha = 1.0;
    };
    maskImg.src = url;
  } catch (err) {
    showError(`masks: ${err}`);
  }
}

function rebuildAlphaSliders(): void {
  const host = el("alpha-sliders");
  host.innerHTML = "";
  state.alpha.forEach((value, i) => {
    const label = document.createElement("label");
    label.textContent = `alpha ${i + 1}`;
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = "-1";
    slider.max = "1";
    slider.step = "0.05";
    slider.value = String(value);
    slider.addEventListener("input", () => {
      state.alpha[i] = parseFloat(slider.value);
      syncRender();
    });
    label.appendChild(slider);
    host.appendChild(label);
  });
  const maskSel = el<HTMLSelectElement>("mask-overlay");
  maskSel.innerHTML = "<option value='-1'>off</option>";
  for (let i = 0; i <= state.alpha.length; i++) {
    if (state.alpha.length === 0) break;
    const opt = document.createElement("option");
    opt.value = String(i);
    opt.textContent = i === 0 ? "remainder" : `attribute ${i}`;
    maskSel.appendChild(opt);
  }
}

function selectCheckpoint(id: string): void {
  const info = currentInfo(id);
  if (!info) return;
  state = bindArity(state, info);
  rebuildAlphaSliders();
  overlayMask = -1;
  el<HTMLSelectElement>("mask-overlay").value = "-1";
  syncRender();
}

let paneA: Pane;
let paneB: Pane;

async function boot(): Promise<void> {
  paneA = makePane("a");
  paneB = makePane("b");
  const resp = await fetch(base + "/meta");
  meta = (await resp.json()).checkpoints;
  const selA = el<HTMLSelectElement>("ckpt-a");
  const selB = el<HTMLSelectElement>("ckpt-b");
  for (const c of meta) {
    for (const sel of [selA, selB]) {
      const opt = document.createElement("option");
      opt.value = c.id;
      opt.textContent = `${c.id} (${c.variant}${c.n_attr ? `, ${c.n_attr} attrs` : ""})`;
      sel.appendChild(opt);
    }
  }
  selA.addEventListener("change", () => selectCheckpoint(selA.value));
  selB.addEventListener("change", syncRender);
  const tSlider = el<HTMLInputElement>("t-slider");
  tSlider.addEventListener("input", () => {
    state.t = parseFloat(tSlider.value);
    el("t-value").textContent = state.t.toFixed(2);
    syncRender();
  });
  const orbit = el<HTMLInputElement>("orbit-slider");
  orbit.addEventListener("input", () => {
    state.orbitDeg = parseFloat(orbit.value);
    el("orbit-value").textContent = `${state.orbitDeg.toFixed(0)} deg`;
    syncRender();
  });
  const res = el<HTMLSelectElement>("resolution");
  for (const r of RESOLUTIONS) {
    const opt = document.createElement("option");
    opt.value = String(r);
    opt.textContent = `${r} x ${r}`;
    if (r === state.width) opt.selected = true;
    res.appendChild(opt);
  }
  res.addEventListener("change", () => {
    state.width = state.height = parseInt(res.value, 10);
    syncRender();
  });
  el<HTMLInputElement>("compare-toggle").addEventListener("change", (ev) => {
    compare = (ev.target as HTMLInputElement).checked;
    document.body.classList.toggle("compare", compare);
    syncRender();
  });
  el<HTMLSelectElement>("mask-overlay").addEventListener("change", (ev) => {
    overlayMask = parseInt((ev.target as HTMLSelectElement).value, 10);
    syncRender();
  });
  if (meta.length > 0) {
    selA.value = meta[0].id;
    selB.value = meta[meta.length - 1].id;
    selectCheckpoint(meta[0].id);
  }
}

boot().catch((err) => showError(`failed to reach service: ${err}`));
