/** Viewer state and its pure mapping onto the render service's query strings.
 *
 * The service contract (and therefore this file) is the only coupling between
 * the viewer and the model code: /meta, /render and /masks with parameters
 * ckpt, t, w, h, cam, alpha.
 */

export interface CheckpointInfo {
  id: string;
  variant: string;
  n_attr?: number;
}

export interface ViewerState {
  ckpt: string;
  t: number;
  orbitDeg: number;
  width: number;
  height: number;
  alpha: number[];
}

export const RESOLUTIONS = [64, 96, 128, 192, 256];

const clamp = (x: number, lo: number, hi: number) =>
  Math.min(hi, Math.max(lo, x));

/** Clamp every field to its documented range (t in [0,1], alpha in [-1,1]). */
export function clampState(s: ViewerState): ViewerState {
  return {
    ...s,
    t: clamp(Number.isFinite(s.t) ? s.t : 0, 0, 1),
    orbitDeg: ((s.orbitDeg % 360) + 360) % 360,
    width: clamp(Math.round(s.width), 1, 1024),
    height: clamp(Math.round(s.height), 1, 1024),
    alpha: s.alpha.map((a) => clamp(Number.isFinite(a) ? a : 0, -1, 1)),
  };
}

/** Bind the alpha slider arity to what /meta reported for the checkpoint. */
export function bindArity(s: ViewerState, info: CheckpointInfo): ViewerState {
  const n = info.n_attr ?? 0;
  const alpha = s.alpha.slice(0, n);
  while (alpha.length < n) alpha.push(0);
  return { ...s, ckpt: info.id, alpha };
}

function query(path: string, s: ViewerState): string {
  const st = clampState(s);
  const parts = [
    `ckpt=${encodeURIComponent(st.ckpt)}`,
    `t=${st.t}`,
    `w=${st.width}`,
    `h=${st.height}`,
    `cam=${encodeURIComponent(`orbit:${st.orbitDeg}`)}`,
  ];
  if (st.alpha.length > 0) {
    parts.push(`alpha=${st.alpha.join(",")}`);
  }
  return `${path}?${parts.join("&")}`;
}

export function renderQuery(s: ViewerState): string {
  return query("/render", s);
}

export function masksQuery(s: ViewerState): string {
  return query("/masks", s);
}
