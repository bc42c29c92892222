/** DOM wiring: sliders in, design responses out.
 *
 * Drags fire rate-limited inference-only requests; 250 ms after the last
 * movement one evaluate request refreshes the heatmap. Responses apply
 * latest-wins through the state module, so a slow stale trace can never
 * clobber a newer design.
 */

import { ApiClient } from './api';
import { drawHeatmap } from './heatmap';
import { renderProfileSvg } from './profile';
import { DragPacer } from './rate';
import {
  ExplorerState,
  applyResponse,
  displayedMetric,
  initialState,
  isExtrapolating,
  markConnectionLost,
  selectScenario,
  setSlider,
  sliderBounds,
  takeRequestId,
} from './state';
import { ScenarioInfo } from './types';

const api = new ApiClient();
let state: ExplorerState = initialState();
let pacer: DragPacer | null = null;

const el = {
  scenarioSelect: document.getElementById('scenario') as HTMLSelectElement,
  sliders: document.getElementById('sliders') as HTMLDivElement,
  heatmap: document.getElementById('heatmap') as HTMLCanvasElement,
  heatmapPanel: document.getElementById('heatmap-panel') as HTMLDivElement,
  metric: document.getElementById('metric') as HTMLSpanElement,
  times: document.getElementById('times') as HTMLSpanElement,
  badge: document.getElementById('extrapolation-badge') as HTMLSpanElement,
  banner: document.getElementById('offline-banner') as HTMLDivElement,
  profile: document.getElementById('profile') as unknown as SVGSVGElement,
  profilePanel: document.getElementById('profile-panel') as HTMLDivElement,
  previewRays: document.getElementById('preview-rays') as HTMLSelectElement,
};

function render(): void {
  el.banner.style.display = state.connectionLost ? 'block' : 'none';
  el.badge.style.display = isExtrapolating(state) ? 'inline-block' : 'none';
  el.metric.textContent = displayedMetric(state);
  const resp = state.lastResponse;
  if (!resp) {
    el.heatmapPanel.classList.add('empty');
    el.profilePanel.style.display = 'none';
    el.times.textContent = '';
    return;
  }
  el.times.textContent =
    `inference ${resp.inference_time_ms.toFixed(2)} ms` +
    (resp.trace_time_ms > 0 ? ` / trace ${resp.trace_time_ms.toFixed(0)} ms` : '');
  if (resp.irradiance) {
    el.heatmapPanel.classList.remove('empty');
    drawHeatmap(el.heatmap, resp.irradiance.grid);
  }
  if (resp.profile && resp.profile.length > 0) {
    el.profilePanel.style.display = 'block';
    renderProfileSvg(el.profile, resp.profile);
  } else {
    el.profilePanel.style.display = 'none';
  }
}

async function sendDesign(evaluate: boolean): Promise<void> {
  const scenario = state.scenario;
  if (!scenario) return;
  const [id, next] = takeRequestId(state);
  state = next;
  const req = {
    scenario: scenario.scenario,
    params: { ...state.values },
    include_profile: true,
    ...(evaluate
      ? { evaluate: { rays: state.previewRays, seed: 1 } }
      : {}),
  };
  try {
    const resp = await api.design(req);
    state = applyResponse(state, id, resp);
  } catch {
    state = markConnectionLost(state);
  }
  render();
}

function buildSliders(info: ScenarioInfo): void {
  el.sliders.innerHTML = '';
  for (const param of info.params) {
    const [lo, hi] = sliderBounds(info, param);
    const row = document.createElement('div');
    row.className = 'slider-row';
    const label = document.createElement('label');
    label.textContent = `${param} (mm)`;
    const input = document.createElement('input');
    input.type = 'range';
    input.min = String(lo);
    input.max = String(hi);
    input.step = '1';
    input.value = String(state.values[param]);
    const readout = document.createElement('span');
    readout.className = 'readout';
    readout.textContent = String(state.values[param]);
    input.addEventListener('input', () => {
      state = setSlider(state, param, Number(input.value));
      readout.textContent = String(state.values[param]);
      render();
      pacer?.input();
    });
    row.append(label, input, readout);
    el.sliders.appendChild(row);
  }
}

async function start(): Promise<void> {
  pacer = new DragPacer(
    () => void sendDesign(false),
    () => void sendDesign(true),
  );
  el.previewRays.addEventListener('change', () => {
    state = { ...state, previewRays: Number(el.previewRays.value) };
    void sendDesign(true);
  });
  let scenarios: ScenarioInfo[] = [];
  try {
    scenarios = await api.scenarios();
  } catch {
    state = markConnectionLost(state);
    render();
    return;
  }
  for (const info of scenarios) {
    const option = document.createElement('option');
    option.value = info.scenario;
    option.textContent = info.scenario;
    el.scenarioSelect.appendChild(option);
  }
  const pick = (kind: string) => {
    const info = scenarios.find((s) => s.scenario === kind);
    if (!info) return;
    state = selectScenario(state, info);
    buildSliders(info);
    render();
    void sendDesign(true);
  };
  el.scenarioSelect.addEventListener('change', () => pick(el.scenarioSelect.value));
  if (scenarios.length > 0) {
    pick(scenarios[0].scenario);
  }
}

void start();
