/**
 * Review client: upload, per-stage verification with overlays, report
 * approval. Thin client by design - every number and overlay pixel shown
 * here came back from the API.
 */

import { Api, ApiError } from './api.js';
import { compositeAvMap, compositeMask, type Rgb } from './overlay.js';
import { pollJob } from './poll.js';
import { deriveReportView, findingsRows } from './report.js';
import type { AnalysisResponse, StructureName, StructurePayload } from './types.js';

const api = new Api('');
const STRUCTURES: StructureName[] = ['onh', 'macula', 'vessels'];

const OVERLAYS = [
  { id: 'roi_onh', label: 'ONH ROI box' },
  { id: 'roi_macula', label: 'Macula ROI box' },
  { id: 'mask_onh', label: 'ONH mask' },
  { id: 'mask_macula', label: 'Macula mask' },
  { id: 'vessels_av', label: 'Vessels (artery red / vein blue)' },
] as const;

type OverlayId = (typeof OVERLAYS)[number]['id'];

const MASK_COLORS: Record<string, Rgb> = { mask_onh: [255, 214, 64], mask_macula: [64, 224, 160] };
const OVERLAY_ALPHA = 0.45;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  node.append(...children);
  return node;
}

function root(): HTMLElement {
  return document.getElementById('app') as HTMLElement;
}

function nav(): HTMLElement {
  return el(
    'nav',
    {},
    el('a', { href: '#/' }, 'Upload'),
    el('a', { href: '#/backends' }, 'Backends'),
  );
}

// --- upload page -----------------------------------------------------------

function uploadView() {
  const file = el('input', { type: 'file', accept: '.png,.ppm,image/png' });
  const laterality = el('select', {});
  for (const value of ['unknown', 'left', 'right']) {
    laterality.append(el('option', { value }, value));
  }
  const status = el('p', { class: 'status' });
  const button = el('button', {}, 'Analyze');
  button.addEventListener('click', async () => {
    const chosen = file.files?.[0];
    if (!chosen) {
      status.textContent = 'Choose a fundus image first.';
      return;
    }
    button.setAttribute('disabled', 'true');
    status.textContent = 'Uploading...';
    try {
      const jobId = await api.submitAnalysis(chosen, laterality.value);
      location.hash = `#/analysis/${jobId}`;
    } catch (err) {
      status.textContent = err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
      button.removeAttribute('disabled');
    }
  });
  root().replaceChildren(
    nav(),
    el('h1', {}, 'Fundus analysis'),
    el(
      'section',
      { class: 'card' },
      el('label', {}, 'Image (PNG or PPM): ', file),
      el('label', {}, 'Laterality: ', laterality),
      button,
      status,
    ),
  );
}

// --- analysis page ----------------------------------------------------------

interface LoadedOverlay {
  kind: 'mask' | 'av';
  pixels: Uint8ClampedArray;
}

class AnalysisPage {
  private canvas = el('canvas', { class: 'viewer' });
  private progress = el('div', { class: 'progress' });
  private reportPanel = el('section', { class: 'card report' });
  private overlayState = new Map<OverlayId, boolean>();
  private overlayData = new Map<OverlayId, LoadedOverlay>();
  private structures = new Map<StructureName, StructurePayload>();
  private basePixels: ImageData | null = null;
  private analysis: AnalysisResponse | null = null;

  constructor(private jobId: string) {
    for (const o of OVERLAYS) this.overlayState.set(o.id, false);
  }

  async mount() {
    const toggles = el('div', { class: 'toggles' });
    for (const o of OVERLAYS) {
      const box = el('input', { type: 'checkbox', id: o.id });
      box.addEventListener('change', () => {
        this.overlayState.set(o.id, box.checked);
        this.redraw();
      });
      toggles.append(el('label', { for: o.id }, box, ` ${o.label}`));
    }
    root().replaceChildren(
      nav(),
      el('h1', {}, `Analysis ${this.jobId.slice(0, 8)}`),
      this.progress,
      el('section', { class: 'card' }, this.canvas, toggles),
      this.reportPanel,
    );
    this.renderProgress(null);
    try {
      const final = await pollJob(() => api.getAnalysis(this.jobId), {
        onUpdate: (a) => this.renderProgress(a),
      });
      this.analysis = final;
      await this.loadImage();
      await this.loadStructures();
      this.redraw();
      this.renderReport();
    } catch (err) {
      this.progress.textContent =
        err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
    }
  }

  private renderProgress(a: AnalysisResponse | null) {
    if (!a) {
      this.progress.textContent = 'Submitting...';
      return;
    }
    const parts = STRUCTURES.map((s) => {
      const state = a.job.structures[s];
      const extra = state === 'failed' ? ` (${a.job.errors[s] ?? 'failed'})` : '';
      return `${s}: ${state}${extra}`;
    });
    this.progress.textContent = `Job ${a.job.state} - ${parts.join(' | ')}`;
  }

  private async loadImage() {
    const img = await loadImageElement(api.imageUrl(this.jobId));
    this.canvas.width = img.naturalWidth;
    this.canvas.height = img.naturalHeight;
    const ctx = this.canvas.getContext('2d')!;
    ctx.drawImage(img, 0, 0);
    this.basePixels = ctx.getImageData(0, 0, this.canvas.width, this.canvas.height);
  }

  private async loadStructures() {
    for (const s of STRUCTURES) {
      try {
        const payload = await api.getStructure(this.jobId, s);
        this.structures.set(s, payload);
        if (s === 'vessels' && payload.av_map) {
          this.overlayData.set('vessels_av', {
            kind: 'av',
            pixels: await loadPixels(payload.av_map, this.canvas.width, this.canvas.height),
          });
        } else if (s !== 'vessels') {
          this.overlayData.set(`mask_${s}` as OverlayId, {
            kind: 'mask',
            pixels: await loadPixels(payload.mask, this.canvas.width, this.canvas.height),
          });
        }
      } catch (err) {
        if (!(err instanceof ApiError && err.status === 409)) throw err;
      }
    }
  }

  private redraw() {
    if (!this.basePixels) return;
    const ctx = this.canvas.getContext('2d')!;
    let pixels: Uint8ClampedArray = new Uint8ClampedArray(this.basePixels.data);
    for (const [id, on] of this.overlayState) {
      if (!on) continue;
      const data = this.overlayData.get(id);
      if (!data) continue;
      pixels =
        data.kind === 'av'
          ? compositeAvMap(pixels, data.pixels, OVERLAY_ALPHA)
          : compositeMask(pixels, data.pixels, MASK_COLORS[id], OVERLAY_ALPHA);
    }
    const frame = new ImageData(
      pixels as Uint8ClampedArray<ArrayBuffer>,
      this.canvas.width,
      this.canvas.height,
    );
    ctx.putImageData(frame, 0, 0);
    // ROI boxes and confidence captions draw on top of the pixel layers
    for (const s of ['onh', 'macula'] as const) {
      if (!this.overlayState.get(`roi_${s}` as OverlayId)) continue;
      const payload = this.structures.get(s);
      if (!payload?.roi) continue;
      const { x, y, w, h, confidence } = payload.roi;
      ctx.strokeStyle = s === 'onh' ? '#ffd640' : '#40e0a0';
      ctx.lineWidth = 2;
      ctx.strokeRect(x + 0.5, y + 0.5, w, h);
      ctx.fillStyle = ctx.strokeStyle;
      ctx.font = '12px sans-serif';
      ctx.fillText(`${s} ${(confidence * 100).toFixed(0)}%`, x + 3, Math.max(y - 4, 10));
    }
  }

  private renderReport() {
    const report = this.analysis?.report;
    if (!report) {
      this.reportPanel.replaceChildren(
        el('h2', {}, 'Report'),
        el('p', {}, this.analysis?.job.error ?? 'No report available.'),
      );
      return;
    }
    const view = deriveReportView(report);
    const text = el('textarea', { rows: '5' });
    text.value = view.displayText;
    if (!view.editable) text.setAttribute('readonly', 'true');

    const table = el('table', {});
    for (const [k, v] of findingsRows(report)) {
      table.append(el('tr', {}, el('th', {}, k), el('td', {}, v)));
    }
    const provenance = Object.entries(report.provenance)
      .map(([s, p]) => `${s}: ${p.backend}`)
      .join(', ');

    const status = el('p', { class: 'status' }, `Status: ${view.statusLabel}`);
    const children: (Node | string)[] = [
      el('h2', {}, 'Report'),
      status,
      el('div', { class: 'columns' }, el('div', {}, text), el('div', {}, table)),
      el('p', { class: 'provenance' }, `Backends - ${provenance}`),
    ];

    if (view.editable) {
      const approveBtn = el('button', {}, 'Approve');
      approveBtn.addEventListener('click', async () => {
        try {
          const edited = text.value !== report.text ? text.value : null;
          const updated = await api.finalizeReport(this.jobId, edited, true);
          this.analysis = { ...this.analysis!, report: updated };
          this.renderReport();
        } catch (err) {
          status.textContent =
            err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
        }
      });
      children.push(approveBtn);
    } else if (view.showMachineToggle) {
      const original = el('pre', { class: 'machine-text hidden' }, view.machineText);
      const toggle = el('button', {}, 'View original machine text');
      toggle.addEventListener('click', () => original.classList.toggle('hidden'));
      children.push(toggle, original);
    }
    this.reportPanel.replaceChildren(...children);
  }
}

function loadImageElement(url: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error(`failed to load ${url}`));
    img.src = url;
  });
}

async function loadPixels(url: string, width: number, height: number): Promise<Uint8ClampedArray> {
  const img = await loadImageElement(url);
  const off = document.createElement('canvas');
  off.width = width;
  off.height = height;
  const ctx = off.getContext('2d')!;
  ctx.drawImage(img, 0, 0);
  return ctx.getImageData(0, 0, width, height).data;
}

// --- backends page ------------------------------------------------------------

async function backendsView() {
  const table = el('table', { class: 'backends' });
  table.append(
    el('tr', {}, ...['Name', 'Version', 'Structure', 'Kind', 'Endpoint'].map((h) => el('th', {}, h))),
  );
  root().replaceChildren(nav(), el('h1', {}, 'Registered backends'), el('section', { class: 'card' }, table));
  const backends = await api.listBackends();
  for (const b of backends) {
    table.append(
      el(
        'tr',
        {},
        el('td', {}, b.name),
        el('td', {}, b.version),
        el('td', {}, b.structure),
        el('td', {}, b.kind),
        el('td', {}, b.endpoint ?? '-'),
      ),
    );
  }
}

// --- router ---------------------------------------------------------------------

function route() {
  const hash = location.hash || '#/';
  const analysis = hash.match(/^#\/analysis\/([0-9a-f]+)$/);
  if (analysis) {
    new AnalysisPage(analysis[1]).mount();
  } else if (hash === '#/backends') {
    backendsView();
  } else {
    uploadView();
  }
}

window.addEventListener('hashchange', route);
window.addEventListener('DOMContentLoaded', route);
