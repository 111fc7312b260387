//! Maps, footprints, collision tests and the scenario file format.

use crate::kinematics::{self, WheelLayout};
use crate::BodyState;
use std::f64::consts::PI;
use std::fmt::Write as _;

/// Axis-aligned occupancy grid. Cell `(ix, iy)` spans
/// `origin + res*[ix, ix+1] x res*[iy, iy+1]`, with `iy` increasing upward
/// (the first text row of a map file is the top of the map).
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: [f64; 2],
    cells: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f64,
        origin: [f64; 2],
    ) -> OccupancyGrid {
        OccupancyGrid { width, height, resolution, origin, cells: vec![false; width * height] }
    }

    /// Build from text rows, first row topmost. Rows must be equal length and
    /// contain only `#` (occupied) and `.` (free).
    pub fn from_rows(
        rows: &[&str],
        resolution: f64,
        origin: [f64; 2],
    ) -> Result<OccupancyGrid, String> {
        if rows.is_empty() {
            return Err("map has no rows".into());
        }
        let width = rows[0].len();
        if width == 0 {
            return Err("map rows are empty".into());
        }
        let height = rows.len();
        let mut cells = vec![false; width * height];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(format!("map row {} has width {}, expected {width}", r + 1, row.len()));
            }
            for (c, ch) in row.chars().enumerate() {
                let occ = match ch {
                    '#' => true,
                    '.' => false,
                    other => return Err(format!("map row {}: invalid cell '{other}'", r + 1)),
                };
                let iy = height - 1 - r;
                cells[iy * width + c] = occ;
            }
        }
        Ok(OccupancyGrid { width, height, resolution, origin, cells })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn resolution(&self) -> f64 {
        self.resolution
    }
    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn occupied(&self, ix: usize, iy: usize) -> bool {
        self.cells[iy * self.width + ix]
    }

    pub fn set(&mut self, ix: usize, iy: usize, occ: bool) {
        self.cells[iy * self.width + ix] = occ;
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.resolution,
            self.origin[1] + (iy as f64 + 0.5) * self.resolution,
        ]
    }

    /// World extent `[min, max]` on both axes.
    pub fn extent(&self) -> ([f64; 2], [f64; 2]) {
        (
            self.origin,
            [
                self.origin[0] + self.width as f64 * self.resolution,
                self.origin[1] + self.height as f64 * self.resolution,
            ],
        )
    }

    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        let (lo, hi) = self.extent();
        p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1]
    }

    /// Cell index range `[i0, i1)` intersecting the world interval `[a, b]`
    /// on the given axis, clamped to the grid.
    fn cell_range(&self, axis: usize, a: f64, b: f64) -> (usize, usize) {
        let n = if axis == 0 { self.width } else { self.height };
        let lo = ((a - self.origin[axis]) / self.resolution).floor().max(0.0) as usize;
        let hi = (((b - self.origin[axis]) / self.resolution).ceil().max(0.0) as usize).min(n);
        (lo.min(n), hi)
    }

    /// Text rows, first row topmost.
    pub fn to_rows(&self) -> Vec<String> {
        (0..self.height)
            .rev()
            .map(|iy| {
                (0..self.width)
                    .map(|ix| if self.occupied(ix, iy) { '#' } else { '.' })
                    .collect()
            })
            .collect()
    }
}

/// Rectangular body footprint, symmetric about the body origin, with its
/// boundary pushed out by `corner_radius` (a rounded rectangle).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Footprint {
    pub half_length: f64,
    pub half_width: f64,
    pub corner_radius: f64,
}

impl Footprint {
    pub fn new(half_length: f64, half_width: f64, corner_radius: f64) -> Footprint {
        Footprint { half_length, half_width, corner_radius }
    }

    /// Radius of the smallest origin-centered disc containing the footprint.
    pub fn circumradius(&self) -> f64 {
        self.half_length.hypot(self.half_width) + self.corner_radius
    }

    /// Radius of the largest origin-centered disc inside the footprint.
    pub fn inradius(&self) -> f64 {
        self.half_length.min(self.half_width) + self.corner_radius
    }

    /// Whether a body-frame point lies inside the inflated rectangle.
    pub fn contains_body_point(&self, p: [f64; 2]) -> bool {
        let dx = (p[0].abs() - self.half_length).max(0.0);
        let dy = (p[1].abs() - self.half_width).max(0.0);
        dx * dx + dy * dy <= self.corner_radius * self.corner_radius + 1e-15
    }

    /// Corners of the (un-inflated) rectangle in the world frame.
    pub fn world_corners(&self, pose: [f64; 3]) -> [[f64; 2]; 4] {
        let rot = kinematics::rotation(pose[2]);
        let mut out = [[0.0; 2]; 4];
        for (i, (sx, sy)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)]
            .into_iter()
            .enumerate()
        {
            let c = kinematics::mat_vec(rot, [sx * self.half_length, sy * self.half_width]);
            out[i] = [pose[0] + c[0], pose[1] + c[1]];
        }
        out
    }
}

/// Exact footprint collision test.
///
/// Collides iff any occupied cell center lies inside the inflated rectangle
/// at `pose`, or any rectangle corner falls outside the grid extent.
pub fn collides(grid: &OccupancyGrid, fp: &Footprint, pose: [f64; 3]) -> bool {
    for corner in fp.world_corners(pose) {
        if !grid.contains_point(corner) {
            return true;
        }
    }
    let r = fp.circumradius();
    let (x0, x1) = (pose[0] - r, pose[0] + r);
    let (y0, y1) = (pose[1] - r, pose[1] + r);
    let (ix0, ix1) = grid.cell_range(0, x0, x1);
    let (iy0, iy1) = grid.cell_range(1, y0, y1);
    let rot_t = kinematics::mat_t(kinematics::rotation(pose[2]));
    for iy in iy0..iy1 {
        for ix in ix0..ix1 {
            if !grid.occupied(ix, iy) {
                continue;
            }
            let c = grid.cell_center(ix, iy);
            let body = kinematics::mat_vec(rot_t, [c[0] - pose[0], c[1] - pose[1]]);
            if fp.contains_body_point(body) {
                return true;
            }
        }
    }
    false
}

/// Collision checker with precomputed dilations for fast queries.
///
/// Two conservative point tests bracket the exact one: a pose whose center
/// is farther than the circumradius from every obstacle and the border is
/// free for any heading; one closer than the inradius to an obstacle (or the
/// border) is blocked for any heading. Only the gap falls through to
/// [`collides`].
#[derive(Clone, Debug)]
pub struct CollisionChecker {
    grid: OccupancyGrid,
    fp: Footprint,
    /// Cell is farther than the circumradius from every occupied cell center.
    clear_far: Vec<bool>,
    /// Cell center is within the inradius of some occupied cell center.
    blocked_near: Vec<bool>,
    /// Chamfer distance (meters) from each cell center to the nearest
    /// occupied cell center; infinite on obstacle-free maps.
    obstacle_dist: Vec<f32>,
}

impl CollisionChecker {
    pub fn new(grid: OccupancyGrid, fp: Footprint) -> CollisionChecker {
        let (w, h, res) = (grid.width, grid.height, grid.resolution);
        // A point anywhere inside a cell is within res/sqrt(2) of its center.
        let slack = res * std::f64::consts::FRAC_1_SQRT_2;
        let far = fp.circumradius() + slack;
        let near = (fp.inradius() - slack).max(0.0);
        let rf = (far / res).ceil() as isize;
        let rn = (near / res).ceil() as isize;
        let mut clear_far = vec![true; w * h];
        let mut blocked_near = vec![false; w * h];
        for iy in 0..h as isize {
            for ix in 0..w as isize {
                if !grid.occupied(ix as usize, iy as usize) {
                    continue;
                }
                let c = grid.cell_center(ix as usize, iy as usize);
                for dy in -rf..=rf {
                    for dx in -rf..=rf {
                        let (jx, jy) = (ix + dx, iy + dy);
                        if jx < 0 || jy < 0 || jx >= w as isize || jy >= h as isize {
                            continue;
                        }
                        let p = grid.cell_center(jx as usize, jy as usize);
                        let d = (p[0] - c[0]).hypot(p[1] - c[1]);
                        let idx = jy as usize * w + jx as usize;
                        if d <= far {
                            clear_far[idx] = false;
                        }
                        if dx.abs() <= rn && dy.abs() <= rn && d <= near {
                            blocked_near[idx] = true;
                        }
                    }
                }
            }
        }
        // Two-pass chamfer transform; weights are the cell pitch and its
        // diagonal, so values never undercut the true center-to-center
        // distance.
        let (a, b) = (res as f32, (res * std::f64::consts::SQRT_2) as f32);
        let mut obstacle_dist = vec![f32::INFINITY; w * h];
        for iy in 0..h {
            for ix in 0..w {
                if grid.occupied(ix, iy) {
                    obstacle_dist[iy * w + ix] = 0.0;
                }
            }
        }
        let relax = |d: &mut Vec<f32>, ix: usize, iy: usize, jx: isize, jy: isize, wgt: f32| {
            if jx < 0 || jy < 0 || jx >= w as isize || jy >= h as isize {
                return;
            }
            let cand = d[jy as usize * w + jx as usize] + wgt;
            let idx = iy * w + ix;
            if cand < d[idx] {
                d[idx] = cand;
            }
        };
        for iy in 0..h {
            for ix in 0..w {
                let (x, y) = (ix as isize, iy as isize);
                relax(&mut obstacle_dist, ix, iy, x - 1, y, a);
                relax(&mut obstacle_dist, ix, iy, x, y - 1, a);
                relax(&mut obstacle_dist, ix, iy, x - 1, y - 1, b);
                relax(&mut obstacle_dist, ix, iy, x + 1, y - 1, b);
            }
        }
        for iy in (0..h).rev() {
            for ix in (0..w).rev() {
                let (x, y) = (ix as isize, iy as isize);
                relax(&mut obstacle_dist, ix, iy, x + 1, y, a);
                relax(&mut obstacle_dist, ix, iy, x, y + 1, a);
                relax(&mut obstacle_dist, ix, iy, x + 1, y + 1, b);
                relax(&mut obstacle_dist, ix, iy, x - 1, y + 1, b);
            }
        }
        CollisionChecker { grid, fp, clear_far, blocked_near, obstacle_dist }
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }
    pub fn footprint(&self) -> &Footprint {
        &self.fp
    }

    pub fn pose_collides(&self, pose: [f64; 3]) -> bool {
        let res = self.grid.resolution;
        let p = [pose[0], pose[1]];
        let (lo, hi) = self.grid.extent();
        let border = p[0] - lo[0] >= 0.0
            && p[1] - lo[1] >= 0.0
            && hi[0] - p[0] >= 0.0
            && hi[1] - p[1] >= 0.0;
        if !border {
            return true;
        }
        let ix = ((p[0] - lo[0]) / res).floor().min(self.grid.width as f64 - 1.0) as usize;
        let iy = ((p[1] - lo[1]) / res).floor().min(self.grid.height as f64 - 1.0) as usize;
        let idx = iy * self.grid.width + ix;
        let margin = self.fp.circumradius();
        let border_clear = p[0] - lo[0] >= margin
            && p[1] - lo[1] >= margin
            && hi[0] - p[0] >= margin
            && hi[1] - p[1] >= margin;
        if self.clear_far[idx] && border_clear {
            return false;
        }
        if self.blocked_near[idx] {
            return true;
        }
        collides(&self.grid, &self.fp, pose)
    }

    /// Any colliding pose among the given ones?
    pub fn any_collides<I: IntoIterator<Item = [f64; 3]>>(&self, poses: I) -> bool {
        poses.into_iter().any(|p| self.pose_collides(p))
    }

    /// Guaranteed-free travel budget for the body origin starting at `p`:
    /// no pose whose origin stays within this distance of `p` can collide,
    /// at any heading. Nonpositive means no guarantee.
    pub fn clear_radius(&self, p: [f64; 2]) -> f64 {
        let (lo, hi) = self.grid.extent();
        let border = (p[0] - lo[0]).min(p[1] - lo[1]).min(hi[0] - p[0]).min(hi[1] - p[1]);
        if !(border > 0.0) {
            return 0.0;
        }
        let res = self.grid.resolution;
        let ix = ((p[0] - lo[0]) / res).floor().min(self.grid.width as f64 - 1.0) as usize;
        let iy = ((p[1] - lo[1]) / res).floor().min(self.grid.height as f64 - 1.0) as usize;
        let d = f64::from(self.obstacle_dist[iy * self.grid.width + ix]);
        // The chamfer metric overshoots Euclidean distance by at most 8.3
        // percent; shrink accordingly, then allow for the query point being
        // anywhere within its cell.
        let d_obs = d / 1.09 - res * std::f64::consts::FRAC_1_SQRT_2;
        border.min(d_obs) - self.fp.circumradius()
    }
}

/// Body motion limits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Limits {
    /// Max translational speed (m/s).
    pub v_max: f64,
    /// Max yaw rate (rad/s).
    pub yaw_rate_max: f64,
    /// Box bound on body acceleration `(ax, ay, alpha)`.
    pub accel_max: [f64; 3],
    /// Knot-spacing bounds for the optimizer (s).
    pub dt_min: f64,
    pub dt_max: f64,
}

/// Cost and objective weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weights {
    /// Heuristic scale for the search.
    pub k_h: f64,
    /// Wheel speed-change weight in the step cost.
    pub k_vw: f64,
    /// Wheel steering-change weight in the step cost.
    pub k_dw: f64,
    /// Diagonal of the control-effort matrix.
    pub effort_diag: [f64; 3],
    /// Weight of the reference-tracking term.
    pub task_weight: f64,
    /// Heading weight inside the tracking term.
    pub heading_weight: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            k_h: 1.0,
            k_vw: 1.0,
            k_dw: 1.0,
            effort_diag: [0.1, 0.1, 0.1],
            task_weight: 1.0,
            heading_weight: 1.0,
        }
    }
}

/// Search-stage configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    /// Elevation sample count N (N+1 values including the poles).
    pub n_eps: usize,
    /// Azimuth sample count N (N+1 values, duplicated at +-pi).
    pub n_psi: usize,
    /// Yaw-rate sample count over `[-pi/2, pi/2]`.
    pub n_omega: usize,
    /// Offset keeping elevation samples away from exact poles.
    pub eps_offset: f64,
    /// Arc-length cap per expansion (m).
    pub arc_cap: f64,
    /// Maximum duration per expansion (s).
    pub duration_max: f64,
    /// Closed-set position quantum; defaults to twice the map resolution.
    pub pos_resolution: Option<f64>,
    /// Closed-set heading quantum (rad).
    pub heading_resolution: f64,
    pub goal_pos_tol: f64,
    pub goal_heading_tol: f64,
    pub expansion_budget: usize,
    /// Optional relaxed steering limits used only while searching (the
    /// optimizer still enforces the layout's limits).
    pub search_steer_lower: Option<Vec<f64>>,
    pub search_steer_upper: Option<Vec<f64>>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            n_eps: 8,
            n_psi: 8,
            n_omega: 8,
            eps_offset: 1e-3,
            arc_cap: 1.0,
            duration_max: 1.0,
            pos_resolution: None,
            heading_resolution: 2.0 * PI / 16.0,
            goal_pos_tol: 0.2,
            goal_heading_tol: 0.1,
            expansion_budget: 200_000,
            search_steer_lower: None,
            search_steer_upper: None,
        }
    }
}

/// A complete planning problem.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub grid: OccupancyGrid,
    pub layout: WheelLayout,
    pub footprint: Footprint,
    pub limits: Limits,
    pub weights: Weights,
    pub search: SearchConfig,
    pub start: BodyState,
    pub goal: BodyState,
}

impl Scenario {
    /// Wheel layout with the search-stage steering override applied.
    pub fn search_layout(&self) -> WheelLayout {
        let mut layout = self.layout.clone();
        if let Some(lo) = &self.search.search_steer_lower {
            layout.steer_lower = lo.clone();
        }
        if let Some(hi) = &self.search.search_steer_upper {
            layout.steer_upper = hi.clone();
        }
        layout
    }

    pub fn pos_resolution(&self) -> f64 {
        self.search.pos_resolution.unwrap_or(2.0 * self.grid.resolution())
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid scenario: {msg}")]
    Validation { msg: String },
}

fn perr(line: usize, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse { line, msg: msg.into() }
}

fn verr(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation { msg: msg.into() }
}

const DEG: f64 = PI / 180.0;

struct Parser<'a> {
    lines: Vec<(usize, &'a str)>,
}

#[derive(Default)]
struct RawScenario {
    resolution: Option<f64>,
    origin: Option<[f64; 2]>,
    rows: Vec<String>,
    wheels: Vec<[f64; 2]>,
    steer_lower: Option<Vec<f64>>,
    steer_upper: Option<Vec<f64>>,
    wheel_speed_max: Option<Vec<f64>>,
    wheel_accel_max: Option<Vec<f64>>,
    steer_rate_max: Option<Vec<f64>>,
    footprint: Option<[f64; 2]>,
    corner_radius: f64,
    v_max: Option<f64>,
    yaw_rate_max: Option<f64>,
    accel_max: Option<[f64; 3]>,
    dt_min: f64,
    dt_max: f64,
    weights: Weights,
    search: SearchConfig,
    start_pose: Option<[f64; 3]>,
    start_vel: [f64; 3],
    goal_pose: Option<[f64; 3]>,
    goal_vel: [f64; 3],
}

fn parse_floats(line: usize, s: &str, n: usize) -> Result<Vec<f64>, ScenarioError> {
    let vals: Result<Vec<f64>, _> = s.split_whitespace().map(str::parse::<f64>).collect();
    let vals = vals.map_err(|e| perr(line, format!("bad number in '{s}': {e}")))?;
    if n != 0 && vals.len() != n {
        return Err(perr(line, format!("expected {n} values, found {}", vals.len())));
    }
    Ok(vals)
}

/// Parse the scenario text format.
///
/// Sections `[map] [robot] [limits] [weights] [search] [start] [goal]` hold
/// `key = value` entries; lines of `#`/`.` inside `[map]` are grid rows
/// (first row topmost); `;` starts a comment. Angles are degrees in the file
/// and radians in memory.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let parser = Parser {
        lines: text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split(';').next().unwrap_or("").trim_end()))
            .filter(|(_, l)| !l.trim().is_empty())
            .collect(),
    };
    let mut raw = RawScenario {
        dt_min: 0.02,
        dt_max: 0.5,
        corner_radius: 0.0,
        ..Default::default()
    };
    let mut section = String::new();
    for &(ln, line) in &parser.lines {
        let t = line.trim();
        if t.starts_with('[') && t.ends_with(']') {
            section = t[1..t.len() - 1].to_ascii_lowercase();
            match section.as_str() {
                "map" | "robot" | "limits" | "weights" | "search" | "start" | "goal" => {}
                other => return Err(perr(ln, format!("unknown section [{other}]"))),
            }
            continue;
        }
        if section == "map" && t.chars().all(|c| c == '#' || c == '.') {
            raw.rows.push(t.to_string());
            continue;
        }
        let Some((key, value)) = t.split_once('=') else {
            return Err(perr(ln, format!("expected 'key = value', found '{t}'")));
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        parse_entry(&mut raw, &section, &key, value, ln)?;
    }
    build_scenario(raw)
}

fn parse_entry(
    raw: &mut RawScenario,
    section: &str,
    key: &str,
    value: &str,
    ln: usize,
) -> Result<(), ScenarioError> {
    let f1 = |v: &str| -> Result<f64, ScenarioError> { Ok(parse_floats(ln, v, 1)?[0]) };
    match (section, key) {
        ("map", "resolution") => raw.resolution = Some(f1(value)?),
        ("map", "origin") => {
            let v = parse_floats(ln, value, 2)?;
            raw.origin = Some([v[0], v[1]]);
        }
        ("robot", "wheel") => {
            let v = parse_floats(ln, value, 2)?;
            raw.wheels.push([v[0], v[1]]);
        }
        ("robot", "steer_lower") => {
            raw.steer_lower =
                Some(parse_floats(ln, value, 0)?.iter().map(|d| d * DEG).collect());
        }
        ("robot", "steer_upper") => {
            raw.steer_upper =
                Some(parse_floats(ln, value, 0)?.iter().map(|d| d * DEG).collect());
        }
        ("robot", "wheel_speed_max") => raw.wheel_speed_max = Some(parse_floats(ln, value, 0)?),
        ("robot", "wheel_accel_max") => raw.wheel_accel_max = Some(parse_floats(ln, value, 0)?),
        ("robot", "steer_rate_max") => {
            raw.steer_rate_max =
                Some(parse_floats(ln, value, 0)?.iter().map(|d| d * DEG).collect());
        }
        ("robot", "footprint") => {
            let v = parse_floats(ln, value, 2)?;
            raw.footprint = Some([v[0], v[1]]);
        }
        ("robot", "corner_radius") => raw.corner_radius = f1(value)?,
        ("limits", "v_max") => raw.v_max = Some(f1(value)?),
        ("limits", "yaw_rate_max") => raw.yaw_rate_max = Some(f1(value)? * DEG),
        ("limits", "accel_max") => {
            let v = parse_floats(ln, value, 3)?;
            raw.accel_max = Some([v[0], v[1], v[2] * DEG]);
        }
        ("limits", "dt_min") => raw.dt_min = f1(value)?,
        ("limits", "dt_max") => raw.dt_max = f1(value)?,
        ("weights", "k_h") => raw.weights.k_h = f1(value)?,
        ("weights", "k_vw") => raw.weights.k_vw = f1(value)?,
        ("weights", "k_dw") => raw.weights.k_dw = f1(value)?,
        ("weights", "effort_diag") => {
            let v = parse_floats(ln, value, 3)?;
            raw.weights.effort_diag = [v[0], v[1], v[2]];
        }
        ("weights", "task_weight") => raw.weights.task_weight = f1(value)?,
        ("weights", "heading_weight") => raw.weights.heading_weight = f1(value)?,
        ("search", "n_eps") => raw.search.n_eps = f1(value)? as usize,
        ("search", "n_psi") => raw.search.n_psi = f1(value)? as usize,
        ("search", "n_omega") => raw.search.n_omega = f1(value)? as usize,
        ("search", "eps_offset") => raw.search.eps_offset = f1(value)?,
        ("search", "arc_cap") => raw.search.arc_cap = f1(value)?,
        ("search", "duration_max") => raw.search.duration_max = f1(value)?,
        ("search", "pos_resolution") => raw.search.pos_resolution = Some(f1(value)?),
        ("search", "heading_resolution") => raw.search.heading_resolution = f1(value)? * DEG,
        ("search", "goal_pos_tol") => raw.search.goal_pos_tol = f1(value)?,
        ("search", "goal_heading_tol") => raw.search.goal_heading_tol = f1(value)? * DEG,
        ("search", "expansion_budget") => raw.search.expansion_budget = f1(value)? as usize,
        ("search", "steer_lower") => {
            raw.search.search_steer_lower =
                Some(parse_floats(ln, value, 0)?.iter().map(|d| d * DEG).collect());
        }
        ("search", "steer_upper") => {
            raw.search.search_steer_upper =
                Some(parse_floats(ln, value, 0)?.iter().map(|d| d * DEG).collect());
        }
        ("start", "pose") | ("goal", "pose") => {
            let v = parse_floats(ln, value, 3)?;
            let pose = [v[0], v[1], v[2] * DEG];
            if section == "start" {
                raw.start_pose = Some(pose);
            } else {
                raw.goal_pose = Some(pose);
            }
        }
        ("start", "velocity") | ("goal", "velocity") => {
            let v = parse_floats(ln, value, 3)?;
            let vel = [v[0], v[1], v[2] * DEG];
            if section == "start" {
                raw.start_vel = vel;
            } else {
                raw.goal_vel = vel;
            }
        }
        ("", k) => return Err(perr(ln, format!("key '{k}' appears before any section"))),
        (s, k) => return Err(perr(ln, format!("unknown key '{k}' in section [{s}]"))),
    }
    Ok(())
}

fn build_scenario(raw: RawScenario) -> Result<Scenario, ScenarioError> {
    let resolution = raw.resolution.ok_or_else(|| verr("missing [map] resolution"))?;
    if resolution <= 0.0 {
        return Err(verr("map resolution must be positive"));
    }
    let origin = raw.origin.unwrap_or([0.0, 0.0]);
    let rows: Vec<&str> = raw.rows.iter().map(String::as_str).collect();
    let grid = OccupancyGrid::from_rows(&rows, resolution, origin).map_err(verr)?;

    let n = raw.wheels.len();
    if n == 0 {
        return Err(verr("missing [robot] wheel entries"));
    }
    let per_wheel = |v: Option<Vec<f64>>, name: &str| -> Result<Vec<f64>, ScenarioError> {
        let v = v.ok_or_else(|| verr(format!("missing [robot] {name}")))?;
        match v.len() {
            1 => Ok(vec![v[0]; n]),
            l if l == n => Ok(v),
            l => Err(verr(format!("{name} has {l} entries for {n} wheels"))),
        }
    };
    let layout = WheelLayout {
        wheels: raw.wheels,
        steer_lower: per_wheel(raw.steer_lower, "steer_lower")?,
        steer_upper: per_wheel(raw.steer_upper, "steer_upper")?,
        speed_cap: per_wheel(raw.wheel_speed_max, "wheel_speed_max")?,
        accel_cap: per_wheel(raw.wheel_accel_max, "wheel_accel_max")?,
        steer_rate_cap: per_wheel(raw.steer_rate_max, "steer_rate_max")?,
    };
    layout.validate().map_err(verr)?;

    let fpv = raw.footprint.ok_or_else(|| verr("missing [robot] footprint"))?;
    if fpv[0] <= 0.0 || fpv[1] <= 0.0 || raw.corner_radius < 0.0 {
        return Err(verr("footprint dimensions must be positive"));
    }
    let footprint = Footprint::new(fpv[0], fpv[1], raw.corner_radius);

    let limits = Limits {
        v_max: raw.v_max.ok_or_else(|| verr("missing [limits] v_max"))?,
        yaw_rate_max: raw.yaw_rate_max.ok_or_else(|| verr("missing [limits] yaw_rate_max"))?,
        accel_max: raw.accel_max.ok_or_else(|| verr("missing [limits] accel_max"))?,
        dt_min: raw.dt_min,
        dt_max: raw.dt_max,
    };
    if limits.v_max <= 0.0 || limits.yaw_rate_max <= 0.0 {
        return Err(verr("v_max and yaw_rate_max must be positive"));
    }
    if limits.accel_max.iter().any(|&a| a <= 0.0) {
        return Err(verr("accel_max components must be positive"));
    }
    if !(0.0 < limits.dt_min && limits.dt_min <= limits.dt_max) {
        return Err(verr("dt bounds must satisfy 0 < dt_min <= dt_max"));
    }
    for (i, &rate) in layout.steer_rate_cap.iter().enumerate() {
        if rate * limits.dt_max >= PI {
            return Err(verr(format!(
                "wheel {i}: steer_rate_max * dt_max = {:.3} rad reaches pi; \
                 the steering-rate constraint would wrap",
                rate * limits.dt_max
            )));
        }
    }

    let search = raw.search;
    if search.n_eps < 1 || search.n_psi < 1 || search.n_omega < 2 {
        return Err(verr("search sample counts must satisfy n_eps,n_psi >= 1, n_omega >= 2"));
    }
    if search.eps_offset <= 0.0 {
        return Err(verr("eps_offset must be positive"));
    }
    if search.arc_cap <= 0.0 || search.duration_max <= 0.0 {
        return Err(verr("arc_cap and duration_max must be positive"));
    }
    for (name, bounds) in [
        ("steer_lower", &search.search_steer_lower),
        ("steer_upper", &search.search_steer_upper),
    ] {
        if let Some(b) = bounds {
            if b.len() != n {
                return Err(verr(format!(
                    "search {name} has {} entries for {n} wheels",
                    b.len()
                )));
            }
        }
    }

    let sp = raw.start_pose.ok_or_else(|| verr("missing [start] pose"))?;
    let gp = raw.goal_pose.ok_or_else(|| verr("missing [goal] pose"))?;
    let start = BodyState::new(sp[0], sp[1], sp[2], raw.start_vel[0], raw.start_vel[1], raw.start_vel[2]);
    let goal = BodyState::new(gp[0], gp[1], gp[2], raw.goal_vel[0], raw.goal_vel[1], raw.goal_vel[2]);

    for (name, pose) in [("start", sp), ("goal", gp)] {
        if collides(&grid, &footprint, pose) {
            return Err(verr(format!("{name} pose is in collision or out of bounds")));
        }
    }

    Ok(Scenario { grid, layout, footprint, limits, weights: raw.weights, search, start, goal })
}

/// Inverse of [`load_scenario`]: emits text that parses back to the same
/// scenario (angles re-encoded in degrees; round-trip exact to float
/// conversion, about 1e-15 relative).
pub fn serialize_scenario(s: &Scenario) -> String {
    let mut out = String::new();
    let joinf = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let joind = |v: &[f64]| joinf(&v.iter().map(|x| x / DEG).collect::<Vec<_>>());

    let _ = writeln!(out, "[map]");
    let _ = writeln!(out, "resolution = {}", s.grid.resolution());
    let _ = writeln!(out, "origin = {} {}", s.grid.origin()[0], s.grid.origin()[1]);
    for row in s.grid.to_rows() {
        let _ = writeln!(out, "{row}");
    }

    let _ = writeln!(out, "\n[robot]");
    for w in &s.layout.wheels {
        let _ = writeln!(out, "wheel = {} {}", w[0], w[1]);
    }
    let _ = writeln!(out, "steer_lower = {}", joind(&s.layout.steer_lower));
    let _ = writeln!(out, "steer_upper = {}", joind(&s.layout.steer_upper));
    let _ = writeln!(out, "wheel_speed_max = {}", joinf(&s.layout.speed_cap));
    let _ = writeln!(out, "wheel_accel_max = {}", joinf(&s.layout.accel_cap));
    let _ = writeln!(out, "steer_rate_max = {}", joind(&s.layout.steer_rate_cap));
    let _ = writeln!(out, "footprint = {} {}", s.footprint.half_length, s.footprint.half_width);
    let _ = writeln!(out, "corner_radius = {}", s.footprint.corner_radius);

    let _ = writeln!(out, "\n[limits]");
    let _ = writeln!(out, "v_max = {}", s.limits.v_max);
    let _ = writeln!(out, "yaw_rate_max = {}", s.limits.yaw_rate_max / DEG);
    let _ = writeln!(
        out,
        "accel_max = {} {} {}",
        s.limits.accel_max[0],
        s.limits.accel_max[1],
        s.limits.accel_max[2] / DEG
    );
    let _ = writeln!(out, "dt_min = {}", s.limits.dt_min);
    let _ = writeln!(out, "dt_max = {}", s.limits.dt_max);

    let _ = writeln!(out, "\n[weights]");
    let _ = writeln!(out, "k_h = {}", s.weights.k_h);
    let _ = writeln!(out, "k_vw = {}", s.weights.k_vw);
    let _ = writeln!(out, "k_dw = {}", s.weights.k_dw);
    let _ = writeln!(out, "effort_diag = {}", joinf(&s.weights.effort_diag));
    let _ = writeln!(out, "task_weight = {}", s.weights.task_weight);
    let _ = writeln!(out, "heading_weight = {}", s.weights.heading_weight);

    let _ = writeln!(out, "\n[search]");
    let _ = writeln!(out, "n_eps = {}", s.search.n_eps);
    let _ = writeln!(out, "n_psi = {}", s.search.n_psi);
    let _ = writeln!(out, "n_omega = {}", s.search.n_omega);
    let _ = writeln!(out, "eps_offset = {}", s.search.eps_offset);
    let _ = writeln!(out, "arc_cap = {}", s.search.arc_cap);
    let _ = writeln!(out, "duration_max = {}", s.search.duration_max);
    if let Some(pr) = s.search.pos_resolution {
        let _ = writeln!(out, "pos_resolution = {pr}");
    }
    let _ = writeln!(out, "heading_resolution = {}", s.search.heading_resolution / DEG);
    let _ = writeln!(out, "goal_pos_tol = {}", s.search.goal_pos_tol);
    let _ = writeln!(out, "goal_heading_tol = {}", s.search.goal_heading_tol / DEG);
    let _ = writeln!(out, "expansion_budget = {}", s.search.expansion_budget);
    if let Some(lo) = &s.search.search_steer_lower {
        let _ = writeln!(out, "steer_lower = {}", joind(lo));
    }
    if let Some(hi) = &s.search.search_steer_upper {
        let _ = writeln!(out, "steer_upper = {}", joind(hi));
    }

    let _ = writeln!(out, "\n[start]");
    let _ = writeln!(out, "pose = {} {} {}", s.start.x, s.start.y, s.start.theta / DEG);
    let _ = writeln!(
        out,
        "velocity = {} {} {}",
        s.start.vx,
        s.start.vy,
        s.start.omega / DEG
    );
    let _ = writeln!(out, "\n[goal]");
    let _ = writeln!(out, "pose = {} {} {}", s.goal.x, s.goal.y, s.goal.theta / DEG);
    let _ = writeln!(out, "velocity = {} {} {}", s.goal.vx, s.goal.vy, s.goal.omega / DEG);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid3(center_occupied: bool) -> OccupancyGrid {
        let mut g = OccupancyGrid::new(3, 3, 0.5, [0.0, 0.0]);
        if center_occupied {
            g.set(1, 1, true);
        }
        g
    }

    #[test]
    fn collides_on_occupied_center_cell() {
        let g = grid3(true);
        let fp = Footprint::new(0.4, 0.3, 0.0);
        // Footprint centered on the occupied cell center.
        assert!(collides(&g, &fp, [0.75, 0.75, 0.0]));
        // Same pose on an empty map is free.
        assert!(!collides(&grid3(false), &fp, [0.75, 0.75, 0.0]));
    }

    #[test]
    fn collides_distinguishes_rotation() {
        let mut g = OccupancyGrid::new(5, 5, 0.5, [0.0, 0.0]);
        g.set(3, 2, true); // center (1.75, 1.25)
        let fp = Footprint::new(0.7, 0.2, 0.0);
        let pose_along_x = [1.25, 1.25, 0.0];
        // Long axis pointing at the obstacle reaches it.
        assert!(collides(&g, &fp, pose_along_x));
        // Rotated 90 degrees the narrow side faces it and clears.
        assert!(!collides(&g, &fp, [1.25, 1.25, std::f64::consts::FRAC_PI_2]));
    }

    #[test]
    fn out_of_bounds_corner_collides() {
        let g = grid3(false);
        let fp = Footprint::new(0.4, 0.3, 0.0);
        assert!(collides(&g, &fp, [0.2, 0.75, 0.0]));
        assert!(!collides(&g, &fp, [0.75, 0.75, 0.0]));
    }

    #[test]
    fn empty_grid_in_bounds_is_free() {
        let g = OccupancyGrid::new(40, 40, 0.25, [-5.0, -5.0]);
        let fp = Footprint::new(0.6, 0.4, 0.1);
        for &theta in &[0.0, 0.7, 2.0, -1.3] {
            assert!(!collides(&g, &fp, [0.0, 0.0, theta]));
        }
    }

    #[test]
    fn clear_radius_on_empty_grid_is_border_limited() {
        let g = OccupancyGrid::new(40, 40, 0.25, [-5.0, -5.0]);
        let fp = Footprint::new(0.6, 0.4, 0.1);
        let circum = fp.circumradius();
        let checker = CollisionChecker::new(g, fp);
        // Center of the map: the border is 5 m away on all sides.
        assert!((checker.clear_radius([0.0, 0.0]) - (5.0 - circum)).abs() < 1e-12);
        assert!((checker.clear_radius([3.0, 0.0]) - (2.0 - circum)).abs() < 1e-12);
        assert_eq!(checker.clear_radius([5.5, 0.0]), 0.0);
    }

    #[test]
    fn map_rows_orient_first_row_top() {
        let g = OccupancyGrid::from_rows(&["#.", ".."], 1.0, [0.0, 0.0]).unwrap();
        // '#' is the top-left cell: ix=0, iy=1.
        assert!(g.occupied(0, 1));
        assert!(!g.occupied(0, 0));
        assert_eq!(g.to_rows(), vec!["#.", ".."]);
    }

    const BASE: &str = "
[map]
resolution = 0.5
origin = -1 -1
......
......
......
......

[robot]
wheel = 0.3 0.25
wheel = 0.3 -0.25
wheel = -0.3 0.25
wheel = -0.3 -0.25
steer_lower = -90
steer_upper = 90
wheel_speed_max = 2
wheel_accel_max = 2
steer_rate_max = 60
footprint = 0.4 0.3
corner_radius = 0.0

[limits]
v_max = 1.5
yaw_rate_max = 60
accel_max = 1 1 60

[start]
pose = 0 0 0

[goal]
pose = 1 0.5 45
";

    #[test]
    fn parses_minimal_scenario_with_defaults() {
        let s = load_scenario(BASE).unwrap();
        assert_eq!(s.layout.wheel_count(), 4);
        assert!((s.layout.steer_upper[3] - PI / 2.0).abs() < 1e-12);
        assert!((s.goal.theta - PI / 4.0).abs() < 1e-12);
        assert_eq!(s.weights.k_h, 1.0);
        assert_eq!(s.search.n_eps, 8);
        assert_eq!(s.limits.dt_min, 0.02);
        assert!((s.pos_resolution() - 1.0).abs() < 1e-12);
        assert_eq!(s.start.vx, 0.0);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = BASE.replace("v_max = 1.5", "v_max = abc");
        match load_scenario(&bad) {
            Err(ScenarioError::Parse { line, msg }) => {
                assert!(msg.contains("abc"), "{msg}");
                assert!(line > 0);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let unknown = BASE.replace("v_max = 1.5", "vmax = 1.5");
        assert!(matches!(load_scenario(&unknown), Err(ScenarioError::Parse { .. })));
    }

    #[test]
    fn validation_rejects_colliding_start() {
        let blocked = BASE.replace(
            "......\n......\n......\n......",
            "......\n..##..\n..##..\n......",
        );
        match load_scenario(&blocked) {
            Err(ScenarioError::Validation { msg }) => assert!(msg.contains("start"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn validation_rejects_wrapping_rate_window() {
        let bad = BASE.replace("steer_rate_max = 60", "steer_rate_max = 400");
        assert!(matches!(load_scenario(&bad), Err(ScenarioError::Validation { .. })));
    }

    #[test]
    fn serialize_round_trips() {
        let s = load_scenario(BASE).unwrap();
        let text = serialize_scenario(&s);
        let s2 = load_scenario(&text).unwrap();
        assert_eq!(s.grid, s2.grid);
        assert_eq!(s.layout.wheels, s2.layout.wheels);
        for (a, b) in s.layout.steer_upper.iter().zip(&s2.layout.steer_upper) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((s.goal.theta - s2.goal.theta).abs() < 1e-12);
        assert_eq!(s.limits.v_max, s2.limits.v_max);
        assert_eq!(s.search.expansion_budget, s2.search.expansion_budget);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn inflation_is_monotone(
            px in -0.9f64..2.4, py in -0.9f64..2.4, th in -3.2f64..3.2,
            r1 in 0.0f64..0.3, dr in 0.0f64..0.3,
        ) {
            let g = grid3(true);
            let f1 = Footprint::new(0.3, 0.2, r1);
            let f2 = Footprint::new(0.3, 0.2, r1 + dr);
            if collides(&g, &f1, [px, py, th]) {
                prop_assert!(collides(&g, &f2, [px, py, th]));
            }
        }

        #[test]
        fn checker_matches_exact_test(
            px in -1.0f64..3.0, py in -1.0f64..3.0, th in -3.2f64..3.2,
            occ in proptest::collection::vec(prop::bool::ANY, 25),
        ) {
            let mut g = OccupancyGrid::new(5, 5, 0.4, [0.0, 0.0]);
            for iy in 0..5 {
                for ix in 0..5 {
                    g.set(ix, iy, occ[iy * 5 + ix]);
                }
            }
            let fp = Footprint::new(0.35, 0.25, 0.05);
            let brute = collides(&g, &fp, [px, py, th]);
            let checker = CollisionChecker::new(g, fp);
            prop_assert_eq!(checker.pose_collides([px, py, th]), brute);
        }

        #[test]
        fn clear_radius_is_safe(
            px in 0.2f64..1.8, py in 0.2f64..1.8, th in -3.2f64..3.2,
            dx in -1.0f64..1.0, dy in -1.0f64..1.0,
            occ in proptest::collection::vec(prop::bool::ANY, 25),
        ) {
            let mut g = OccupancyGrid::new(5, 5, 0.4, [0.0, 0.0]);
            for iy in 0..5 {
                for ix in 0..5 {
                    g.set(ix, iy, occ[iy * 5 + ix]);
                }
            }
            let fp = Footprint::new(0.2, 0.15, 0.0);
            let checker = CollisionChecker::new(g, fp);
            let c = checker.clear_radius([px, py]);
            // Any pose whose origin stays within the budget must be free.
            let step = dx.hypot(dy);
            if c > 0.0 && step < c {
                prop_assert!(!checker.pose_collides([px + dx, py + dy, th]));
            }
        }

        #[test]
        fn scenario_round_trip_random_poses(
            sx in -0.4f64..0.4, sy in -0.4f64..0.4, sth in -179.0f64..179.0,
            gx in -0.4f64..0.4, gy in 0.0f64..0.4, gth in -179.0f64..179.0,
        ) {
            let text = BASE
                .replace("pose = 0 0 0", &format!("pose = {sx} {sy} {sth}"))
                .replace("pose = 1 0.5 45", &format!("pose = {gx} {gy} {gth}"));
            let s = load_scenario(&text).unwrap();
            let s2 = load_scenario(&serialize_scenario(&s)).unwrap();
            prop_assert!((s.start.x - s2.start.x).abs() < 1e-12);
            prop_assert!((s.start.theta - s2.start.theta).abs() < 1e-12);
            prop_assert!((s.goal.theta - s2.goal.theta).abs() < 1e-12);
        }
    }
}
