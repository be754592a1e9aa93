use serde::{Deserialize, Serialize};

use super::WorldState;
use crate::vision::RawFrame;

/// Pinhole dash camera mounted at the ego's center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    /// Mount height above the road, meters.
    pub mount_height: f64,
    /// Negative looks down, degrees.
    pub pitch_deg: f64,
    pub hfov_deg: f64,
    /// Ground beyond this distance fades into haze.
    pub max_range: f64,
    /// Bottom share of the image covered by the hood.
    pub hood_fraction: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            mount_height: 1.4,
            pitch_deg: -4.0,
            hfov_deg: 60.0,
            max_range: 250.0,
            hood_fraction: 0.06,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<(), super::SimError> {
        let ok = (16..=4096).contains(&self.width)
            && (16..=4096).contains(&self.height)
            && self.mount_height > 0.0
            && (-45.0..=10.0).contains(&self.pitch_deg)
            && (10.0..=150.0).contains(&self.hfov_deg)
            && self.max_range >= 20.0
            && (0.0..0.5).contains(&self.hood_fraction);
        if ok {
            Ok(())
        } else {
            Err(super::SimError::InvalidConfig("camera parameters out of range".into()))
        }
    }

    pub fn focal_px(&self) -> f64 {
        self.width as f64 / 2.0 / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    /// Image row (continuous) of the horizon.
    pub fn horizon_row(&self) -> f64 {
        let down = -self.pitch_deg.to_radians();
        self.height as f64 / 2.0 - self.focal_px() * down.tan()
    }
}

type Rgb = [f64; 3];

const GRASS: Rgb = [62.0, 118.0, 48.0];
const GRASS_ALT: Rgb = [70.0, 128.0, 54.0];
const ASPHALT: Rgb = [88.0, 88.0, 92.0];
const SHOULDER: Rgb = [110.0, 108.0, 102.0];
const WHITE: Rgb = [236.0, 236.0, 236.0];
const YELLOW: Rgb = [222.0, 188.0, 42.0];
const HAZE: Rgb = [182.0, 196.0, 210.0];
const SKY_TOP: Rgb = [92.0, 142.0, 212.0];
const SKY_LOW: Rgb = [176.0, 202.0, 232.0];
const HOOD: Rgb = [34.0, 34.0, 40.0];
const BODY: [Rgb; 5] = [
    [178.0, 36.0, 36.0],
    [36.0, 72.0, 168.0],
    [214.0, 214.0, 206.0],
    [54.0, 54.0, 58.0],
    [196.0, 128.0, 30.0],
];

const SHOULDER_WIDTH: f64 = 1.5;
const LINE_WIDTH: f64 = 0.15;
const DASH_PERIOD: f64 = 12.0;
const DASH_ON: f64 = 4.0;
const VEHICLE_HEIGHT: f64 = 1.5;
const SAMPLE_STEP: f64 = 0.5;

/// Road centerline sampled ahead of the ego in a local frame: origin at the
/// road center abreast of the ego, x forward along the tangent, y right.
struct Centerline {
    x: Vec<f64>,
    y: Vec<f64>,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Centerline {
    fn build(world: &WorldState, range: f64) -> Self {
        let n = (range / SAMPLE_STEP).ceil() as usize + 2;
        let (mut x, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
        let (mut cos, mut sin) = (Vec::with_capacity(n), Vec::with_capacity(n));
        let (mut px, mut py, mut th) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..n {
            x.push(px);
            y.push(py);
            cos.push(th.cos());
            sin.push(th.sin());
            let k = world.road.curvature_at(world.ego.s + i as f64 * SAMPLE_STEP);
            let mid = th + k * SAMPLE_STEP / 2.0;
            px += SAMPLE_STEP * mid.cos();
            py += SAMPLE_STEP * mid.sin();
            th += k * SAMPLE_STEP;
        }
        Self { x, y, cos, sin }
    }

    fn max_s(&self) -> f64 {
        (self.x.len() - 1) as f64 * SAMPLE_STEP
    }

    /// Position and tangent (cos, sin) at arclength `ds` ahead.
    fn at(&self, ds: f64) -> (f64, f64, f64, f64) {
        let u = (ds / SAMPLE_STEP).clamp(0.0, (self.x.len() - 2) as f64);
        let i = u as usize;
        let f = u - i as f64;
        let lerp = |v: &[f64]| v[i] + (v[i + 1] - v[i]) * f;
        (lerp(&self.x), lerp(&self.y), lerp(&self.cos), lerp(&self.sin))
    }

    /// Road coordinates (arclength ahead, lateral right) of a local point.
    fn project(&self, px: f64, py: f64) -> (f64, f64) {
        let mut ds = px.clamp(0.0, self.max_s());
        for _ in 0..3 {
            let (cx, cy, c, s) = self.at(ds);
            let along = (px - cx) * c + (py - cy) * s;
            ds = (ds + along).clamp(0.0, self.max_s());
        }
        let (cx, cy, c, s) = self.at(ds);
        (ds, -(px - cx) * s + (py - cy) * c)
    }
}

fn mix(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Share of the pixel footprint `[lat - pw/2, lat + pw/2]` covered by a line
/// centered at `c`.
fn coverage(lat: f64, pw: f64, c: f64) -> f64 {
    let lo = (lat - pw / 2.0).max(c - LINE_WIDTH / 2.0);
    let hi = (lat + pw / 2.0).min(c + LINE_WIDTH / 2.0);
    ((hi - lo) / pw).clamp(0.0, 1.0)
}

struct Surface {
    half: f64,
    lane_width: f64,
    lanes: usize,
}

impl Surface {
    fn color(&self, s_abs: f64, lat: f64, pw: f64) -> Rgb {
        let a = lat.abs();
        if a > self.half + SHOULDER_WIDTH + pw {
            return if (s_abs / 20.0).floor() as i64 % 2 == 0 { GRASS } else { GRASS_ALT };
        }
        let mut c = if a <= self.half { ASPHALT } else { SHOULDER };
        if a > self.half + SHOULDER_WIDTH - pw {
            let grass_share = ((a + pw / 2.0 - self.half - SHOULDER_WIDTH) / pw).clamp(0.0, 1.0);
            c = mix(c, GRASS, grass_share);
        }
        for edge in [-self.half, self.half] {
            let k = coverage(lat, pw, edge);
            if k > 0.0 {
                c = mix(c, YELLOW, k);
            }
        }
        if s_abs.rem_euclid(DASH_PERIOD) < DASH_ON {
            for i in 1..self.lanes {
                let k = coverage(lat, pw, -self.half + i as f64 * self.lane_width);
                if k > 0.0 {
                    c = mix(c, WHITE, k);
                }
            }
        }
        c
    }
}

/// Rasterizes the dash-camera view. Pure function of the world and camera.
pub fn render(world: &WorldState, cam: &CameraConfig) -> RawFrame {
    let (w, h) = (cam.width, cam.height);
    let f = cam.focal_px();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let down = -cam.pitch_deg.to_radians();
    let (sp, cp) = down.sin_cos();
    let ego = world.ego;
    let (spsi, cpsi) = ego.psi.sin_cos();
    let ego_y = world.ego_lateral();
    let line = Centerline::build(world, cam.max_range + world.road.half_width() + 20.0);
    let surface = Surface {
        half: world.road.half_width(),
        lane_width: world.road.lane_width,
        lanes: world.road.lane_count,
    };
    let hood_top = ((1.0 - cam.hood_fraction) * h as f64).round() as usize;
    let horizon = cam.horizon_row();

    let mut pixels = vec![0u8; w * h * 3];
    let put = |x: usize, y: usize, c: Rgb, px: &mut Vec<u8>| {
        let o = (y * w + x) * 3;
        for k in 0..3 {
            px[o + k] = c[k].round().clamp(0.0, 255.0) as u8;
        }
    };

    for row in 0..h {
        if row >= hood_top {
            let t = (row - hood_top) as f64 / (h - hood_top).max(1) as f64;
            let c = mix(HOOD, [20.0, 20.0, 24.0], t);
            for col in 0..w {
                put(col, row, c, &mut pixels);
            }
            continue;
        }
        let y_up = -(row as f64 + 0.5 - cy) / f;
        let fwd = cp + y_up * sp;
        let up = -sp + y_up * cp;
        if up >= -1e-9 {
            let t = ((row as f64 + 0.5) / horizon.max(1.0)).clamp(0.0, 1.0);
            let c = mix(SKY_TOP, SKY_LOW, t);
            for col in 0..w {
                put(col, row, c, &mut pixels);
            }
            continue;
        }
        let t_hit = cam.mount_height / -up;
        let ahead = t_hit * fwd;
        let pw = t_hit / f;
        let fog = (ahead / cam.max_range).min(1.0).powi(2);
        for col in 0..w {
            let x_right = (col as f64 + 0.5 - cx) / f;
            let c = if ahead >= cam.max_range {
                HAZE
            } else {
                let b = t_hit * x_right;
                let px = ahead * cpsi - b * spsi;
                let py = ego_y + ahead * spsi + b * cpsi;
                let (ds, lat) = line.project(px, py);
                mix(surface.color(ego.s + ds, lat, pw), HAZE, fog)
            };
            put(col, row, c, &mut pixels);
        }
    }

    // Traffic rear faces, far to near.
    let mut faces = Vec::new();
    for (i, t) in world.traffic.iter().enumerate() {
        let ds = t.s - t.length / 2.0 - ego.s;
        if ds <= 0.5 || ds >= cam.max_range {
            continue;
        }
        let (lx, ly, tc, ts) = line.at(ds);
        let lat = world.road.lane_center(t.lane_index);
        let (px, py) = (lx - lat * ts, ly + lat * tc);
        let (rx, ry) = (px, py - ego_y);
        let a = rx * cpsi + ry * spsi;
        let b = -rx * spsi + ry * cpsi;
        let depth_at = |z: f64| a * cp - (z - cam.mount_height) * sp;
        if depth_at(0.0) <= 0.5 {
            continue;
        }
        let project_v = |z: f64| cy - f * (a * sp + (z - cam.mount_height) * cp) / depth_at(z);
        let dz = depth_at(VEHICLE_HEIGHT / 2.0);
        let half_w = t.width / 2.0;
        faces.push((
            a,
            i,
            cx + f * (b - half_w) / dz,
            cx + f * (b + half_w) / dz,
            project_v(VEHICLE_HEIGHT),
            project_v(0.0),
        ));
    }
    faces.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)));
    for (a, i, u0, u1, v0, v1) in faces {
        let body = BODY[i % BODY.len()];
        let fog = (a / cam.max_range).min(1.0).powi(2);
        let c0 = (u0 - 0.5).ceil().max(0.0) as usize;
        let c1 = ((u1 - 0.5).floor() + 1.0).clamp(0.0, w as f64) as usize;
        let r0 = (v0 - 0.5).ceil().max(0.0) as usize;
        let r1 = ((v1 - 0.5).floor() + 1.0).clamp(0.0, hood_top as f64) as usize;
        let height = (v1 - v0).max(1e-9);
        for row in r0..r1 {
            let rel = (row as f64 + 0.5 - v0) / height;
            let shade = if (0.12..0.45).contains(&rel) {
                mix(body, [28.0, 32.0, 40.0], 0.8)
            } else if rel >= 0.85 {
                mix(body, [0.0, 0.0, 0.0], 0.55)
            } else if (0.5..0.62).contains(&rel) {
                mix(body, [200.0, 20.0, 20.0], 0.5)
            } else {
                body
            };
            let c = mix(shade, HAZE, fog);
            for col in c0..c1 {
                put(col, row, c, &mut pixels);
            }
        }
    }

    RawFrame::new(w, h, pixels).expect("render buffer matches its dimensions")
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::sim::{EgoState, RoadSpec, TrafficVehicle, VehicleParams};

    fn world(d: f64) -> WorldState {
        let ego = EgoState { s: 500.0, d, psi: 0.0, v: 25.0, lane_index: 1 };
        WorldState::new(Arc::new(RoadSpec::straight(3, 3.7, 5000.0)), VehicleParams::default(), ego)
    }

    fn is_marking(p: [u8; 3]) -> bool {
        p[0] > 150 && p[1] > 150
    }

    #[test]
    fn horizon_geometry() {
        let cam = CameraConfig::default();
        assert!((cam.focal_px() - 277.128).abs() < 1e-3);
        assert!((cam.horizon_row() - 100.62).abs() < 0.01);
    }

    #[test]
    fn centered_view_is_mirror_symmetric() {
        let cam = CameraConfig::default();
        let frame = render(&world(0.0), &cam);
        for y in 0..cam.height {
            for x in 0..cam.width {
                assert_eq!(frame.pixel(x, y), frame.pixel(cam.width - 1 - x, y), "({x}, {y})");
            }
        }
    }

    #[test]
    fn markings_are_visible() {
        let cam = CameraConfig::default();
        let frame = render(&world(0.0), &cam);
        let row = 180;
        let hits: Vec<usize> = (0..cam.width).filter(|&x| is_marking(frame.pixel(x, row))).collect();
        assert!(!hits.is_empty());
    }

    #[test]
    fn vehicle_is_drawn_and_scales_with_distance() {
        let cam = CameraConfig::default();
        let width_at = |gap: f64| {
            let mut w = world(0.0);
            w.traffic.push(TrafficVehicle { s: 500.0 + 2.25 + gap + 2.25, lane_index: 1, v: 20.0, length: 4.5, width: 1.8 });
            let frame = render(&w, &cam);
            let base = render(&world(0.0), &cam);
            let row = (0..cam.height)
                .max_by_key(|&y| (0..cam.width).filter(|&x| frame.pixel(x, y) != base.pixel(x, y)).count())
                .unwrap();
            (0..cam.width).filter(|&x| frame.pixel(x, row) != base.pixel(x, row)).count()
        };
        let near = width_at(20.0);
        let far = width_at(60.0);
        assert!(near > far && far > 0, "near {near} far {far}");
    }
}
