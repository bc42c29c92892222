/** Wire types of the design service (api/v1). */

export interface TrainingBox {
  [param: string]: [number, number];
}

export interface ScenarioInfo {
  scenario: string;
  topology: number[];
  grid_n: number;
  kernel_px: number;
  training_box: TrainingBox;
  params: string[];
}

export interface IrradiancePayload {
  grid: number[][];
  extent_mm: [number, number, number, number];
}

export interface ProfilePolyline {
  phi_deg: number;
  theta_rad: number[];
  r_mm: number[];
}

export interface DesignResponse {
  surface: {
    order: number;
    mask: string;
    tilt: [number, number];
    coeffs: number[];
  };
  inference_time_ms: number;
  trace_time_ms: number;
  extrapolation: boolean;
  nonuniformity_pct?: number;
  spill_fraction?: number;
  rays?: number;
  irradiance?: IrradiancePayload;
  profile?: ProfilePolyline[];
}

export interface DesignRequest {
  scenario: string;
  params: { [name: string]: number };
  evaluate?: { rays: number; seed: number };
  include_profile?: boolean;
}
