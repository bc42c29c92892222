/** Surface cross-sections r(theta) at a few azimuths, as SVG path data. */

import { ProfilePolyline } from './types';

export interface ProfileView {
  paths: { phiDeg: number; d: string }[];
  rMin: number;
  rMax: number;
  thetaMax: number;
}

/** Pure layout: polylines to SVG path strings in a width x height viewport. */
export function profilePaths(
  polylines: ProfilePolyline[], width: number, height: number, pad = 8,
): ProfileView {
  let rMin = Infinity;
  let rMax = -Infinity;
  let thetaMax = 0;
  for (const p of polylines) {
    for (const r of p.r_mm) {
      if (r < rMin) rMin = r;
      if (r > rMax) rMax = r;
    }
    thetaMax = Math.max(thetaMax, p.theta_rad[p.theta_rad.length - 1] ?? 0);
  }
  if (!isFinite(rMin)) {
    return { paths: [], rMin: 0, rMax: 0, thetaMax: 0 };
  }
  const rSpan = rMax - rMin || 1;
  const paths = polylines.map((p) => {
    const pts = p.theta_rad.map((theta, i) => {
      const x = pad + (theta / (thetaMax || 1)) * (width - 2 * pad);
      const y = height - pad - ((p.r_mm[i] - rMin) / rSpan) * (height - 2 * pad);
      return `${x.toFixed(2)},${y.toFixed(2)}`;
    });
    return { phiDeg: p.phi_deg, d: 'M' + pts.join(' L') };
  });
  return { paths, rMin, rMax, thetaMax };
}

const LINE_COLORS = ['#4c78a8', '#f58518', '#54a24b'];

export function renderProfileSvg(el: SVGSVGElement, polylines: ProfilePolyline[]): void {
  const width = el.clientWidth || 360;
  const height = el.clientHeight || 180;
  const view = profilePaths(polylines, width, height);
  el.setAttribute('viewBox', `0 0 ${width} ${height}`);
  el.innerHTML = '';
  view.paths.forEach((p, i) => {
    const path = document.createElementNS('http://www.w3.org/2000/svg', 'path');
    path.setAttribute('d', p.d);
    path.setAttribute('fill', 'none');
    path.setAttribute('stroke', LINE_COLORS[i % LINE_COLORS.length]);
    path.setAttribute('stroke-width', '1.5');
    el.appendChild(path);
  });
  const label = document.createElementNS('http://www.w3.org/2000/svg', 'text');
  label.setAttribute('x', '10');
  label.setAttribute('y', '14');
  label.setAttribute('class', 'profile-range');
  label.textContent =
    view.paths.length > 0
      ? `r: ${view.rMin.toFixed(1)}..${view.rMax.toFixed(1)} mm (phi 0/45/90)`
      : '';
  el.appendChild(label);
}
