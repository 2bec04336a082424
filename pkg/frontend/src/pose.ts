/**
 * Rigid-pose composition for the probe navigator.
 *
 * Poses are row-major 4x4 matrices flattened to 16 numbers, matching the
 * render service's `pose` field. Control state is a trajectory-relative
 * parameterization: a signed distance along the trajectory axis, free
 * xyz offsets, and three rotation angles composed in intrinsic Z.Y.X
 * order (yaw about Z, then pitch about Y, then roll about X).
 */

export type Mat4 = number[]; // 16 numbers, row-major

export interface PoseControls {
  /** Signed travel along the trajectory axis, mm. */
  alongMm: number;
  /** Free world-frame offsets, mm. */
  offsetXMm: number;
  offsetYMm: number;
  offsetZMm: number;
  /** Intrinsic Z.Y.X rotation angles, degrees. */
  yawZDeg: number;
  pitchYDeg: number;
  rollXDeg: number;
}

export const ZERO_CONTROLS: PoseControls = Object.freeze({
  alongMm: 0,
  offsetXMm: 0,
  offsetYMm: 0,
  offsetZMm: 0,
  yawZDeg: 0,
  pitchYDeg: 0,
  rollXDeg: 0,
});

const DEG = Math.PI / 180;

function mat4Identity(): Mat4 {
  return [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1];
}

function rot3FromZYX(yawZDeg: number, pitchYDeg: number, rollXDeg: number): number[] {
  const cz = Math.cos(yawZDeg * DEG);
  const sz = Math.sin(yawZDeg * DEG);
  const cy = Math.cos(pitchYDeg * DEG);
  const sy = Math.sin(pitchYDeg * DEG);
  const cx = Math.cos(rollXDeg * DEG);
  const sx = Math.sin(rollXDeg * DEG);
  // R = Rz * Ry * Rx, row-major 3x3
  return [
    cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
    sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
    -sy, cy * sx, cy * cx,
  ];
}

function mul3(a: number[], b: number[]): number[] {
  const out = new Array<number>(9).fill(0);
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      let s = 0;
      for (let k = 0; k < 3; k++) s += a[3 * i + k] * b[3 * k + j];
      out[3 * i + j] = s;
    }
  }
  return out;
}

function rot3Of(m: Mat4): number[] {
  return [m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]];
}

function transOf(m: Mat4): [number, number, number] {
  return [m[3], m[7], m[11]];
}

/** Throws if the matrix is not a rigid transform (orthonormal, det +1). */
export function assertRigid(m: Mat4, tol = 1e-6): void {
  if (m.length !== 16) throw new Error(`pose must have 16 numbers, got ${m.length}`);
  for (const v of m) {
    if (!Number.isFinite(v)) throw new Error("pose contains a non-finite value");
  }
  const bottom = [m[12], m[13], m[14], m[15]];
  if (
    Math.abs(bottom[0]) > tol || Math.abs(bottom[1]) > tol ||
    Math.abs(bottom[2]) > tol || Math.abs(bottom[3] - 1) > tol
  ) {
    throw new Error("pose bottom row must be [0, 0, 0, 1]");
  }
  const r = rot3Of(m);
  // R Rt must be the identity
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      let s = 0;
      for (let k = 0; k < 3; k++) s += r[3 * i + k] * r[3 * j + k];
      const want = i === j ? 1 : 0;
      if (Math.abs(s - want) > tol) throw new Error("pose rotation is not orthonormal");
    }
  }
  const det =
    r[0] * (r[4] * r[8] - r[5] * r[7]) -
    r[1] * (r[3] * r[8] - r[5] * r[6]) +
    r[2] * (r[3] * r[7] - r[4] * r[6]);
  if (Math.abs(det - 1) > tol) throw new Error("pose rotation must have determinant +1");
}

function normalize(v: [number, number, number]): [number, number, number] {
  const n = Math.hypot(v[0], v[1], v[2]);
  if (n < 1e-12) throw new Error("trajectory axis is degenerate");
  return [v[0] / n, v[1] / n, v[2] / n];
}

/**
 * Compose the request pose from a trajectory base pose and control state.
 *
 * Zero controls reproduce the base pose exactly. Translation is applied
 * in the world frame (axis travel plus free offsets); the control
 * rotation pre-multiplies the base rotation.
 */
export function composePose(
  base: Mat4,
  axis: [number, number, number],
  controls: PoseControls,
): Mat4 {
  assertRigid(base);
  const a = normalize(axis);
  const rc = rot3FromZYX(controls.yawZDeg, controls.pitchYDeg, controls.rollXDeg);
  const r = mul3(rc, rot3Of(base));
  const [tx, ty, tz] = transOf(base);
  const out = mat4Identity();
  out[0] = r[0]; out[1] = r[1]; out[2] = r[2];
  out[4] = r[3]; out[5] = r[4]; out[6] = r[5];
  out[8] = r[6]; out[9] = r[7]; out[10] = r[8];
  out[3] = tx + a[0] * controls.alongMm + controls.offsetXMm;
  out[7] = ty + a[1] * controls.alongMm + controls.offsetYMm;
  out[11] = tz + a[2] * controls.alongMm + controls.offsetZMm;
  assertRigid(out);
  return out;
}

/**
 * Recover control state from a composed pose.
 *
 * The translation delta is split canonically: its projection on the
 * trajectory axis becomes `alongMm` and the perpendicular remainder
 * becomes the offsets, so controls whose offsets are perpendicular to
 * the axis round-trip exactly.
 */
export function decomposePose(
  base: Mat4,
  axis: [number, number, number],
  pose: Mat4,
): PoseControls {
  assertRigid(base);
  assertRigid(pose);
  const a = normalize(axis);
  const [bx, by, bz] = transOf(base);
  const [px, py, pz] = transOf(pose);
  const d: [number, number, number] = [px - bx, py - by, pz - bz];
  const along = d[0] * a[0] + d[1] * a[1] + d[2] * a[2];

  // control rotation: Rc = R * Rb^T
  const rb = rot3Of(base);
  const rbT = [rb[0], rb[3], rb[6], rb[1], rb[4], rb[7], rb[2], rb[5], rb[8]];
  const rc = mul3(rot3Of(pose), rbT);
  const pitch = Math.asin(Math.min(1, Math.max(-1, -rc[6])));
  let yaw: number;
  let roll: number;
  if (Math.abs(rc[6]) < 1 - 1e-9) {
    roll = Math.atan2(rc[7], rc[8]);
    yaw = Math.atan2(rc[3], rc[0]);
  } else {
    // gimbal lock: fold everything into yaw
    roll = 0;
    yaw = Math.atan2(-rc[1], rc[4]);
  }
  return {
    alongMm: along,
    offsetXMm: d[0] - along * a[0],
    offsetYMm: d[1] - along * a[1],
    offsetZMm: d[2] - along * a[2],
    yawZDeg: yaw / DEG,
    pitchYDeg: pitch / DEG,
    rollXDeg: roll / DEG,
  };
}
