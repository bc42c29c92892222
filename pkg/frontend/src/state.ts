/** Explorer state: slider values, latest response, and stale-response guard.
 *
 * The state is a plain object transformed by pure functions, so a recorded
 * sequence of events replays to identical renders. Responses carry the id of
 * the request that produced them; anything older than the newest applied id
 * is discarded (latest wins, a late slow response can never overwrite).
 */

import { DesignResponse, ScenarioInfo } from './types';

export interface ExplorerState {
  scenario: ScenarioInfo | null;
  values: { [param: string]: number };
  lastResponse: DesignResponse | null;
  lastAppliedId: number;
  nextRequestId: number;
  previewRays: number;
  inFlightEvaluate: boolean;
  connectionLost: boolean;
}

export function initialState(): ExplorerState {
  return {
    scenario: null,
    values: {},
    lastResponse: null,
    lastAppliedId: 0,
    nextRequestId: 1,
    previewRays: 200_000,
    inFlightEvaluate: false,
    connectionLost: false,
  };
}

/** Sliders may exceed the training box by this factor (extrapolation). */
export const EXPLORE_MARGIN = 2.0;

export function sliderBounds(info: ScenarioInfo, param: string): [number, number] {
  const [lo, hi] = info.training_box[param];
  const span = hi - lo;
  return [Math.max(lo - span * (EXPLORE_MARGIN - 1), span > 0 ? Math.min(lo, 1) : 0),
          hi + span * (EXPLORE_MARGIN - 1)];
}

export function selectScenario(state: ExplorerState, info: ScenarioInfo): ExplorerState {
  const values: { [k: string]: number } = {};
  for (const p of info.params) {
    const [lo, hi] = info.training_box[p];
    values[p] = (lo + hi) / 2;
  }
  return { ...state, scenario: info, values, lastResponse: null };
}

export function setSlider(state: ExplorerState, param: string, value: number): ExplorerState {
  if (!state.scenario) return state;
  const [lo, hi] = sliderBounds(state.scenario, param);
  const clamped = Math.min(Math.max(value, lo), hi);
  return { ...state, values: { ...state.values, [param]: clamped } };
}

export function isExtrapolating(state: ExplorerState): boolean {
  if (!state.scenario) return false;
  for (const p of state.scenario.params) {
    const [lo, hi] = state.scenario.training_box[p];
    const v = state.values[p];
    if (v < lo || v > hi) return true;
  }
  return false;
}

export function takeRequestId(state: ExplorerState): [number, ExplorerState] {
  return [state.nextRequestId, { ...state, nextRequestId: state.nextRequestId + 1 }];
}

/** Apply a response only if it is newer than everything applied so far. */
export function applyResponse(
  state: ExplorerState, requestId: number, response: DesignResponse,
): ExplorerState {
  if (requestId <= state.lastAppliedId) {
    return state; // stale: a newer response already landed
  }
  return {
    ...state,
    lastAppliedId: requestId,
    lastResponse: response,
    connectionLost: false,
  };
}

export function markConnectionLost(state: ExplorerState): ExplorerState {
  return { ...state, connectionLost: true };
}

/** The metric shown in the UI is the service value, verbatim. */
export function displayedMetric(state: ExplorerState): string {
  const m = state.lastResponse?.nonuniformity_pct;
  return m === undefined || m === null ? '' : `${m.toFixed(2)}%`;
}
