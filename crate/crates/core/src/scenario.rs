//! The two executable experiments built from the fluid solver and the stick:
//! a stirring rollout that records the stick inclination, and a pouring
//! rollout that counts spilled particles. Also holds the hidden liquid presets
//! used as ground truth in twin experiments.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::fluid::{init_scene, Container, FluidParams, SceneConfig, SimState, Solver};
use crate::geometry::{point_in_polygon, rotate_about, MovingSegment, Rect, Vec2};
use crate::probe::{pivot_at, stick_step, StickModel, StickState, StirAction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub angle: f64,
}

/// Stick inclination sampled at a fixed rate. A failed trace stopped early
/// because the stick capsized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclinationTrace {
    pub samples: Vec<TraceSample>,
    pub sample_rate: f64,
    pub failed: bool,
}

#[derive(Serialize, Deserialize)]
struct TraceRow {
    t: f64,
    angle: f64,
    failed: bool,
}

impl InclinationTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn angles(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.angle)
    }

    /// Builds a trace from angles sampled at `k / sample_rate`.
    pub fn from_angles(angles: &[f64], sample_rate: f64) -> Self {
        Self {
            samples: angles
                .iter()
                .enumerate()
                .map(|(k, &angle)| TraceSample {
                    t: k as f64 / sample_rate,
                    angle,
                })
                .collect(),
            sample_rate,
            failed: false,
        }
    }

    /// Timestamps must be strictly increasing and spaced `1 / sample_rate` apart.
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) {
            return Err(Error::domain("trace sample rate must be positive"));
        }
        let step = 1.0 / self.sample_rate;
        for w in self.samples.windows(2) {
            if !((w[1].t - w[0].t - step).abs() <= 1e-9) {
                return Err(Error::domain(format!(
                    "trace timestamps {} and {} are not {step} s apart",
                    w[0].t, w[1].t
                )));
            }
        }
        Ok(())
    }

    /// CSV with header `t,angle,failed`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.samples {
            w.serialize(TraceRow {
                t: s.t,
                angle: s.angle,
                failed: self.failed,
            })?;
        }
        if self.samples.is_empty() {
            w.write_record(["t", "angle", "failed"])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trace CSV; the sample rate is recovered from the timestamps
    /// unless given.
    pub fn read_csv<R: Read>(input: R, sample_rate: Option<f64>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t", "angle", "failed"] {
            return Err(Error::domain("trace CSV header must be `t,angle,failed`"));
        }
        let mut samples = Vec::new();
        let mut failed = false;
        for row in r.deserialize() {
            let row: TraceRow = row?;
            failed |= row.failed;
            samples.push(TraceSample {
                t: row.t,
                angle: row.angle,
            });
        }
        let rate = match sample_rate {
            Some(rate) => rate,
            None if samples.len() >= 2 => 1.0 / (samples[1].t - samples[0].t),
            None => crate::probe::default_sample_rate(),
        };
        let trace = Self {
            samples,
            sample_rate: rate,
            failed,
        };
        trace.validate()?;
        Ok(trace)
    }
}

/// Everything about the stirring experiment except the liquid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StirConfig {
    #[serde(default)]
    pub action: StirAction,
    #[serde(default)]
    pub stick: StickModel,
    /// Fluid settles around the held stick for this long before `t = 0`.
    #[serde(default = "default_stir_settle")]
    pub settle_time: f64,
}

fn default_stir_settle() -> f64 {
    0.5
}

impl Default for StirConfig {
    fn default() -> Self {
        Self {
            action: StirAction::default(),
            stick: StickModel::default(),
            settle_time: default_stir_settle(),
        }
    }
}

/// Shared fluid numerics used by both experiments.
pub fn default_fluid_numerics() -> SceneConfig {
    SceneConfig::default()
}

/// The stirring tank: a 16 cm wide open tank filled 6 cm deep.
pub fn default_stir_scene() -> SceneConfig {
    default_fluid_numerics()
}

fn submerged_length(stick: &StickState, state: &SimState, reach: f64) -> f64 {
    let dir = stick.direction();
    let mut shallowest = stick.length;
    for p in &state.positions {
        let d = p - stick.pivot;
        let along = d.dot(&dir);
        if !(0.0..=stick.length).contains(&along) {
            continue;
        }
        let across = (d - dir * along).norm();
        if across < reach && along < shallowest {
            shallowest = along;
        }
    }
    stick.length - shallowest
}

/// Runs one stirring rollout and samples the stick inclination.
pub fn run_stir(
    params: &FluidParams,
    stir: &StirConfig,
    scene: &SceneConfig,
    seed: u64,
) -> Result<InclinationTrace> {
    let action = &stir.action;
    action.validate()?;
    let mut state = init_scene(scene, seed)?;
    let mut solver = Solver::new(scene)?;
    let dt = scene.dt;
    let reach = scene.smoothing_radius();

    let (start, _) = pivot_at(action, 0.0)?;
    let mut stick = StickState::hanging(start, stir.stick.length);
    let settle_steps = (stir.settle_time / dt).round() as usize;
    let mut force = Vec2::zeros();
    for _ in 0..settle_steps {
        let forces = solver.step(&mut state, params, &[stick.segment()])?;
        force = forces[0];
    }
    stick.submerged_length = submerged_length(&stick, &state, reach);

    let n_samples = (action.duration * action.sample_rate + 1e-9).floor() as usize + 1;
    let n_steps = (action.duration / dt - 1e-9).ceil() as usize;
    let mut samples = Vec::with_capacity(n_samples);
    samples.push(TraceSample { t: 0.0, angle: 0.0 });
    let mut prev = (0.0, 0.0);
    for k in 1..=n_steps {
        let t = (k as f64 * dt).min(action.duration);
        let motion = pivot_at(action, t)?;
        stick = match stick_step(&stick, &stir.stick, scene.gravity, motion, force, dt) {
            Ok(s) => s,
            Err(Error::Capsize { .. }) => {
                return Ok(InclinationTrace {
                    samples,
                    sample_rate: action.sample_rate,
                    failed: true,
                })
            }
            Err(e) => return Err(e),
        };
        let forces = solver.step(&mut state, params, &[stick.segment()])?;
        force = forces[0];
        stick.submerged_length = submerged_length(&stick, &state, reach);

        let cur = (t, stick.inclination);
        while samples.len() < n_samples {
            let ts = samples.len() as f64 / action.sample_rate;
            if ts > cur.0 + 1e-12 {
                break;
            }
            let frac = if cur.0 > prev.0 {
                (ts - prev.0) / (cur.0 - prev.0)
            } else {
                1.0
            };
            samples.push(TraceSample {
                t: ts,
                angle: prev.1 + frac * (cur.1 - prev.1),
            });
        }
        prev = cur;
    }
    Ok(InclinationTrace {
        samples,
        sample_rate: action.sample_rate,
        failed: false,
    })
}

/// A one-shot pour: constant tilt rate `omega` (rad/s) and horizontal offset
/// `p` (m) of the source lip from the target center, positive toward the source side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PourAction {
    pub omega: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpillResult {
    pub spilled: usize,
    pub in_source: usize,
    pub in_target: usize,
    pub total: usize,
    /// `spilled / total`.
    #[serde(rename = "Z")]
    pub ratio: f64,
}

impl SpillResult {
    pub fn new(spilled: usize, in_source: usize, in_target: usize) -> Result<Self> {
        let total = spilled + in_source + in_target;
        if total == 0 {
            return Err(Error::domain("spill ratio over zero particles"));
        }
        Ok(Self {
            spilled,
            in_source,
            in_target,
            total,
            ratio: spilled as f64 / total as f64,
        })
    }
}

/// Geometry and timing of the pouring experiment. The target cup stands on the
/// floor; the source cup hangs above it and tips clockwise about its right lip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PourSetup {
    pub world: Rect,
    pub source_width: f64,
    pub source_height: f64,
    pub fill_height: f64,
    pub target_center: f64,
    pub target_width: f64,
    pub target_height: f64,
    /// Height of the source lip above the floor.
    pub lip_height: f64,
    /// Total tilt (rad).
    pub max_angle: f64,
    /// Settling before tilting starts (s).
    pub pre_settle: f64,
    /// Simulated time after the tilt ends (s).
    pub post_settle: f64,
}

impl Default for PourSetup {
    fn default() -> Self {
        Self {
            world: Rect::from_corners(0.0, 0.0, 0.45, 0.5),
            source_width: 0.08,
            source_height: 0.15,
            fill_height: 0.125,
            target_center: 0.25,
            target_width: 0.14,
            target_height: 0.10,
            lip_height: 0.26,
            max_angle: 135f64.to_radians(),
            pre_settle: 0.3,
            post_settle: 2.0,
        }
    }
}

impl PourSetup {
    pub fn lip(&self, action: &PourAction) -> Vec2 {
        Vec2::new(self.target_center - action.p, self.lip_height)
    }

    /// Source cup outline tilted by `angle` (clockwise) about its lip.
    pub fn source_outline(&self, action: &PourAction, angle: f64) -> Vec<Vec2> {
        let lip = self.lip(action);
        let (w, h) = (self.source_width, self.source_height);
        [
            Vec2::new(lip.x - w, lip.y),
            Vec2::new(lip.x - w, lip.y - h),
            Vec2::new(lip.x, lip.y - h),
            lip,
        ]
        .iter()
        .map(|p| rotate_about(p, &lip, -angle))
        .collect()
    }

    pub fn target_region(&self) -> Rect {
        let half = 0.5 * self.target_width;
        Rect::from_corners(
            self.target_center - half,
            self.world.min.y,
            self.target_center + half,
            self.target_height,
        )
    }

    fn target_cup(&self) -> Container {
        let half = 0.5 * self.target_width;
        Container::cup(
            self.target_center - half,
            self.world.min.y,
            self.target_center + half,
            self.target_height,
        )
    }

    /// Scene for the initial fill: upright source plus target, with the
    /// numerics of `base`.
    pub fn scene(&self, base: &SceneConfig, action: &PourAction) -> SceneConfig {
        let lip = self.lip(action);
        let floor = lip.y - self.source_height;
        SceneConfig {
            world: self.world,
            containers: vec![
                Container::open(self.source_outline(action, 0.0)),
                self.target_cup(),
            ],
            fill: Rect::from_corners(
                lip.x - self.source_width,
                floor,
                lip.x,
                floor + self.fill_height,
            ),
            ..base.clone()
        }
    }

    pub fn source_colliders(
        &self,
        action: &PourAction,
        angle: f64,
        rate: f64,
    ) -> Vec<MovingSegment> {
        let lip = self.lip(action);
        let pts = self.source_outline(action, angle);
        // Clockwise rotation about the lip at `rate` rad/s.
        let vel = |p: &Vec2| {
            let d = p - lip;
            Vec2::new(d.y, -d.x) * rate
        };
        pts.windows(2)
            .map(|w| MovingSegment {
                a: w[0],
                b: w[1],
                va: vel(&w[0]),
                vb: vel(&w[1]),
            })
            .collect()
    }
}

/// Tilts the filled source cup at constant rate over the target and counts
/// where the particles end up.
pub fn run_pour(
    params: &FluidParams,
    action: &PourAction,
    base: &SceneConfig,
    setup: &PourSetup,
    seed: u64,
) -> Result<SpillResult> {
    let state = simulate_pour(params, action, base, setup, seed)?;
    setup.classify(action, &state)
}

/// The pour simulation alone; returns the final particle state.
pub fn simulate_pour(
    params: &FluidParams,
    action: &PourAction,
    base: &SceneConfig,
    setup: &PourSetup,
    seed: u64,
) -> Result<SimState> {
    if !(action.omega > 0.0) || !action.p.is_finite() {
        return Err(Error::domain(format!(
            "pour needs omega > 0 and finite p, got {action:?}"
        )));
    }
    let init = setup.scene(base, action);
    let mut state = init_scene(&init, seed)?;
    let dynamic = SceneConfig {
        containers: vec![setup.target_cup()],
        ..init.clone()
    };
    let mut solver = Solver::new(&dynamic)?;
    let dt = base.dt;

    let still = setup.source_colliders(action, 0.0, 0.0);
    for _ in 0..(setup.pre_settle / dt).round() as usize {
        solver.step(&mut state, params, &still)?;
    }
    let tilt_steps = (setup.max_angle / (action.omega * dt) - 1e-9)
        .ceil()
        .max(0.0) as usize;
    for k in 1..=tilt_steps {
        let angle = (k as f64 * action.omega * dt).min(setup.max_angle);
        let colliders = setup.source_colliders(action, angle, action.omega);
        solver.step(&mut state, params, &colliders)?;
    }
    let tipped = setup.source_colliders(action, setup.max_angle, 0.0);
    for _ in 0..(setup.post_settle / dt).round() as usize {
        solver.step(&mut state, params, &tipped)?;
    }

    Ok(state)
}

impl PourSetup {
    /// Sorts particles into source (final pose), target, or spilled.
    pub fn classify(&self, action: &PourAction, state: &SimState) -> Result<SpillResult> {
        let outline = self.source_outline(action, self.max_angle);
        let target = self.target_region();
        let (mut in_source, mut in_target, mut spilled) = (0, 0, 0);
        for p in &state.positions {
            if point_in_polygon(p, &outline) {
                in_source += 1;
            } else if target.contains(p) {
                in_target += 1;
            } else {
                spilled += 1;
            }
        }
        SpillResult::new(spilled, in_source, in_target)
    }
}

/// A named hidden ground-truth parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiquidPreset {
    pub name: &'static str,
    pub params: FluidParams,
}

pub const LIQUID_NAMES: [&str; 3] = ["water", "glycerin", "gel"];

pub fn liquid_preset(name: &str) -> Result<LiquidPreset> {
    let (name, v, k) = match name {
        "water" => ("water", 0.1, 0.1),
        "glycerin" => ("glycerin", 0.6, 0.5),
        "gel" => ("gel", 0.9, 0.9),
        other => return Err(Error::UnknownLiquid(other.to_string())),
    };
    Ok(LiquidPreset {
        name,
        params: FluidParams::new(v, k)?,
    })
}
