//! Deterministic 2D position-based fluids.
//!
//! Each step predicts positions under gravity, then runs a fixed number of
//! Jacobi density-constraint projections against a rest density. Static
//! container walls contribute a mirrored layer of boundary samples to the
//! density estimate, so fluid resting against a wall sees full support.
//! Moving colliders (the stirring stick, a tilting cup) only push particles by
//! position projection, and the summed projection impulses are reported back
//! as the force the fluid exerts on each collider segment.
//!
//! The two [`FluidParams`] axes map onto the solver as
//! - viscosity `v` -> XSPH velocity smoothing `c = 0.5 v`
//! - cohesion `k` -> pairwise artificial-pressure attraction `s = 0.1 k`,
//!   shaped by a cohesion kernel that turns repulsive at very short range

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    closest_on_segment, cross, is_self_intersecting, point_in_polygon, signed_area2, MovingSegment,
    Rect, Vec2,
};

const XSPH_PER_VISCOSITY: f64 = 0.5;
const COHESION_PER_UNIT: f64 = 0.1;
/// Constraint-force-mixing relaxation, as a fraction of the rest-lattice denominator.
const RELAXATION: f64 = 1e-2;
/// Under-density below this fraction of rest density is not corrected, which
/// bounds the attraction between sparse particles.
const TENSION_LIMIT: f64 = 0.05;
/// Smoothing radius in units of particle spacing.
const RADIUS_PER_SPACING: f64 = 2.0;

/// A point in the simulator's normalized parameter box `[0, 1]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct FluidParams {
    viscosity: f64,
    cohesion: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    viscosity: f64,
    cohesion: f64,
}

impl TryFrom<RawParams> for FluidParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        FluidParams::new(raw.viscosity, raw.cohesion)
    }
}

impl FluidParams {
    pub fn new(viscosity: f64, cohesion: f64) -> Result<Self> {
        let ok = |x: f64| (0.0..=1.0).contains(&x);
        if !ok(viscosity) || !ok(cohesion) {
            return Err(Error::domain(format!(
                "fluid parameters must lie in [0,1]^2, got ({viscosity}, {cohesion})"
            )));
        }
        Ok(Self {
            viscosity,
            cohesion,
        })
    }

    pub fn viscosity(&self) -> f64 {
        self.viscosity
    }

    pub fn cohesion(&self) -> f64 {
        self.cohesion
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.viscosity, self.cohesion]
    }
}

/// A container outline. The vertex loop is always closed for containment
/// tests; the closing edge (last -> first) is only a wall when `sealed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Container {
    pub vertices: Vec<Vec2>,
    #[serde(default)]
    pub sealed: bool,
}

impl Container {
    pub fn open(vertices: Vec<Vec2>) -> Self {
        Self {
            vertices,
            sealed: false,
        }
    }

    pub fn sealed(vertices: Vec<Vec2>) -> Self {
        Self {
            vertices,
            sealed: true,
        }
    }

    /// Open-topped rectangular cup with inner floor `[x0, x1]` at height `y0`
    /// and walls rising to `y1`.
    pub fn cup(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::open(vec![
            Vec2::new(x0, y1),
            Vec2::new(x0, y0),
            Vec2::new(x1, y0),
            Vec2::new(x1, y1),
        ])
    }

    pub fn walls(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        let count = if self.sealed { n } else { n.saturating_sub(1) };
        (0..count).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn contains(&self, p: &Vec2) -> bool {
        point_in_polygon(p, &self.vertices)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Particles are kept inside these bounds.
    pub world: Rect,
    pub containers: Vec<Container>,
    pub fill: Rect,
    /// Lattice spacing of the initial fill (m); the smoothing radius is twice this.
    pub spacing: f64,
    /// kg/m^2
    pub rest_density: f64,
    /// Downward gravitational acceleration (m/s^2).
    pub gravity: f64,
    pub dt: f64,
    pub solver_iterations: u32,
    /// Initial placement jitter as a fraction of `spacing`.
    pub jitter: f64,
}

impl Default for SceneConfig {
    /// A 16 cm wide open tank filled 6 cm deep at 5 mm spacing.
    fn default() -> Self {
        Self {
            world: Rect::from_corners(-0.02, -0.02, 0.18, 0.3),
            containers: vec![Container::cup(0.0, 0.0, 0.16, 0.12)],
            fill: Rect::from_corners(0.0, 0.0, 0.16, 0.06),
            spacing: 0.005,
            rest_density: 20.0,
            gravity: 9.81,
            dt: 1.0 / 300.0,
            solver_iterations: 4,
            jitter: 0.02,
        }
    }
}

impl SceneConfig {
    /// Full validation, including that the fill region sits inside a container.
    pub fn validate(&self) -> Result<()> {
        self.validate_solver()?;
        if self.fill.is_empty() {
            return Err(Error::config("fill region is empty"));
        }
        if !self.world.contains_rect(&self.fill) {
            return Err(Error::config("fill region extends outside the world"));
        }
        let inside = self
            .containers
            .iter()
            .any(|c| self.fill.corners().iter().all(|p| c.contains(p)));
        if !inside {
            return Err(Error::config("fill region is not inside any container"));
        }
        Ok(())
    }

    /// Validation of everything the solver itself depends on.
    pub fn validate_solver(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        if self.solver_iterations < 1 {
            return Err(Error::config("solver_iterations must be at least 1"));
        }
        if !(self.spacing > 0.0) {
            return Err(Error::config("particle spacing must be positive"));
        }
        if !(self.rest_density > 0.0) {
            return Err(Error::config("rest density must be positive"));
        }
        if !(self.gravity.is_finite()) || !(0.0..0.5).contains(&self.jitter) {
            return Err(Error::config(
                "gravity must be finite and jitter in [0, 0.5)",
            ));
        }
        if self.world.is_empty() {
            return Err(Error::config("world bounds are empty"));
        }
        for (k, c) in self.containers.iter().enumerate() {
            if c.vertices.len() < 3 {
                return Err(Error::config(format!(
                    "container {k} has fewer than 3 vertices"
                )));
            }
            if signed_area2(&c.vertices).abs() <= 0.0 {
                return Err(Error::config(format!("container {k} is degenerate")));
            }
            if is_self_intersecting(&c.vertices) {
                return Err(Error::config(format!("container {k} is self-intersecting")));
            }
        }
        Ok(())
    }

    pub fn smoothing_radius(&self) -> f64 {
        RADIUS_PER_SPACING * self.spacing
    }

    /// Collision radius kept between particle centers and wall lines.
    pub fn particle_radius(&self) -> f64 {
        0.5 * self.spacing
    }

    fn grid_counts(&self) -> (usize, usize) {
        let nx = (self.fill.width() / self.spacing + 1e-9).floor() as usize;
        let ny = (self.fill.height() / self.spacing + 1e-9).floor() as usize;
        (nx, ny)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    pub time: f64,
    /// Number of completed steps.
    pub step: u64,
    pub rng_seed: u64,
}

impl SimState {
    pub fn particle_count(&self) -> usize {
        self.positions.len()
    }

    pub fn kinetic_energy(&self, particle_mass: f64) -> f64 {
        0.5 * particle_mass
            * self
                .velocities
                .iter()
                .map(|v| v.norm_squared())
                .sum::<f64>()
    }
}

/// Seeds a jittered lattice over the fill region with zero velocity.
pub fn init_scene(cfg: &SceneConfig, seed: u64) -> Result<SimState> {
    cfg.validate()?;
    let (nx, ny) = cfg.grid_counts();
    if nx == 0 || ny == 0 {
        return Err(Error::config(
            "fill region holds no particles at this spacing",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = cfg.jitter * cfg.spacing;
    let mut positions = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let mut p = cfg.fill.min
                + Vec2::new(
                    (i as f64 + 0.5) * cfg.spacing,
                    (j as f64 + 0.5) * cfg.spacing,
                );
            if amp > 0.0 {
                p.x += rng.random_range(-amp..=amp);
                p.y += rng.random_range(-amp..=amp);
            }
            positions.push(p);
        }
    }
    let n = positions.len();
    Ok(SimState {
        positions,
        velocities: vec![Vec2::zeros(); n],
        time: 0.0,
        step: 0,
        rng_seed: seed,
    })
}

/// Counts particles inside `region` (min edges inclusive, max edges exclusive).
pub fn count_in_region(state: &SimState, region: &Rect) -> usize {
    state
        .positions
        .iter()
        .filter(|p| region.contains(p))
        .count()
}

/// Result of one solver step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: SimState,
    /// Net force (N) the fluid exerted on each external collider segment.
    pub collider_forces: Vec<Vec2>,
}

/// Advances the fluid by one step. Pure in all arguments.
pub fn step(
    state: &SimState,
    params: &FluidParams,
    cfg: &SceneConfig,
    colliders: &[MovingSegment],
) -> Result<StepOutput> {
    let mut solver = Solver::new(cfg)?;
    let mut next = state.clone();
    let forces = solver.step(&mut next, params, colliders)?;
    Ok(StepOutput {
        state: next,
        collider_forces: forces,
    })
}

/// Max over particles of `|rho_i / rho_0 - 1|`, using the solver's kernel and boundary samples.
pub fn density_residual(state: &SimState, cfg: &SceneConfig) -> Result<f64> {
    if state.positions.is_empty() {
        return Err(Error::domain("density residual of an empty state"));
    }
    let mut solver = Solver::new(cfg)?;
    let densities = solver.densities(&state.positions);
    Ok(densities
        .iter()
        .map(|rho| (rho / cfg.rest_density - 1.0).abs())
        .fold(0.0, f64::max))
}

/// Uniform hash grid over the world bounds with cell size equal to the smoothing radius.
#[derive(Debug, Clone)]
struct CellGrid {
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    start: Vec<u32>,
    items: Vec<u32>,
}

impl CellGrid {
    fn new(world: &Rect, cell: f64) -> Self {
        let nx = ((world.width() / cell).ceil() as usize).max(1);
        let ny = ((world.height() / cell).ceil() as usize).max(1);
        Self {
            origin: world.min,
            cell,
            nx,
            ny,
            start: vec![0; nx * ny + 1],
            items: Vec::new(),
        }
    }

    fn coords(&self, p: &Vec2) -> (usize, usize) {
        let cx = ((p.x - self.origin.x) / self.cell).floor();
        let cy = ((p.y - self.origin.y) / self.cell).floor();
        let cx = if cx.is_finite() {
            cx.clamp(0.0, (self.nx - 1) as f64)
        } else {
            0.0
        };
        let cy = if cy.is_finite() {
            cy.clamp(0.0, (self.ny - 1) as f64)
        } else {
            0.0
        };
        (cx as usize, cy as usize)
    }

    fn rebuild(&mut self, points: &[Vec2]) {
        self.start.iter_mut().for_each(|s| *s = 0);
        let cells: Vec<usize> = points
            .iter()
            .map(|p| {
                let (cx, cy) = self.coords(p);
                cy * self.nx + cx
            })
            .collect();
        for &c in &cells {
            self.start[c + 1] += 1;
        }
        for c in 0..self.nx * self.ny {
            self.start[c + 1] += self.start[c];
        }
        let mut fill = self.start.clone();
        self.items.resize(points.len(), 0);
        for (i, &c) in cells.iter().enumerate() {
            self.items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
    }

    /// Calls `f` for every stored index whose cell neighbors the cell of `p`.
    fn for_each_near(&self, p: &Vec2, mut f: impl FnMut(usize)) {
        let (cx, cy) = self.coords(p);
        let x0 = cx.saturating_sub(1);
        let x1 = (cx + 1).min(self.nx - 1);
        let y0 = cy.saturating_sub(1);
        let y1 = (cy + 1).min(self.ny - 1);
        for y in y0..=y1 {
            let row = y * self.nx;
            let lo = self.start[row + x0] as usize;
            let hi = self.start[row + x1 + 1] as usize;
            for &idx in &self.items[lo..hi] {
                f(idx as usize);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Kernel {
    h: f64,
    h2: f64,
    poly6: f64,
    spiky_grad: f64,
}

impl Kernel {
    fn new(h: f64) -> Self {
        Self {
            h,
            h2: h * h,
            poly6: 4.0 / (std::f64::consts::PI * h.powi(8)),
            spiky_grad: -30.0 / (std::f64::consts::PI * h.powi(5)),
        }
    }

    fn w(&self, r2: f64) -> f64 {
        if r2 >= self.h2 {
            0.0
        } else {
            let d = self.h2 - r2;
            self.poly6 * d * d * d
        }
    }

    /// Gradient of the spiky kernel with respect to `x_i`, for `d = x_i - x_j`.
    fn grad(&self, d: &Vec2, r: f64) -> Vec2 {
        if r <= 1e-12 || r >= self.h {
            return Vec2::zeros();
        }
        let q = self.h - r;
        d * (self.spiky_grad * q * q / r)
    }
}

/// Reusable solver state for one scene. `step` is a pure function of its inputs;
/// the struct only caches scene-derived constants and scratch buffers.
#[derive(Debug, Clone)]
pub struct Solver {
    cfg: SceneConfig,
    kernel: Kernel,
    mass: f64,
    rest_denominator: f64,
    static_walls: Vec<MovingSegment>,
    boundary: Vec<Vec2>,
    boundary_grid: CellGrid,
    grid: CellGrid,
    nbr_start: Vec<usize>,
    nbrs: Vec<u32>,
    bnd_start: Vec<usize>,
    bnds: Vec<u32>,
    predicted: Vec<Vec2>,
    density: Vec<f64>,
    lambda: Vec<f64>,
    delta: Vec<Vec2>,
}

impl Solver {
    pub fn new(cfg: &SceneConfig) -> Result<Self> {
        cfg.validate_solver()?;
        let h = cfg.smoothing_radius();
        let kernel = Kernel::new(h);
        let s = cfg.spacing;

        // Rest lattice: calibrate particle mass so an interior lattice particle
        // sits exactly at rest density.
        let reach = (RADIUS_PER_SPACING.ceil() as i32) + 1;
        let mut w_sum = 0.0;
        let mut offsets = Vec::new();
        for i in -reach..=reach {
            for j in -reach..=reach {
                let d = Vec2::new(i as f64 * s, j as f64 * s);
                w_sum += kernel.w(d.norm_squared());
                if i != 0 || j != 0 {
                    offsets.push(d);
                }
            }
        }
        let mass = cfg.rest_density / w_sum;
        let rest_denominator: f64 = offsets
            .iter()
            .map(|d| (kernel.grad(d, d.norm()) * (mass / cfg.rest_density)).norm_squared())
            .sum();

        let mut static_walls = Vec::new();
        let mut boundary: Vec<Vec2> = Vec::new();
        for c in &cfg.containers {
            let orientation = signed_area2(&c.vertices).signum();
            for (a, b) in c.walls() {
                static_walls.push(MovingSegment::fixed(a, b));
                let ab = b - a;
                let len = ab.norm();
                if len <= 0.0 {
                    continue;
                }
                let dir = ab / len;
                // Interior lies left of each edge for counter-clockwise loops.
                let outward = Vec2::new(dir.y, -dir.x) * orientation;
                let k = ((len / s).round() as usize).max(1) + 1;
                let step_len = (len + s) / (k - 1) as f64;
                for m in 0..k {
                    let t = -0.5 * s + m as f64 * step_len;
                    let p = a + dir * t + outward * (0.5 * s);
                    if boundary.iter().all(|q| (q - p).norm() > 0.5 * s) {
                        boundary.push(p);
                    }
                }
            }
        }
        let mut boundary_grid = CellGrid::new(&cfg.world, h);
        boundary_grid.rebuild(&boundary);

        Ok(Self {
            cfg: cfg.clone(),
            kernel,
            mass,
            rest_denominator,
            static_walls,
            boundary,
            boundary_grid,
            grid: CellGrid::new(&cfg.world, h),
            nbr_start: Vec::new(),
            nbrs: Vec::new(),
            bnd_start: Vec::new(),
            bnds: Vec::new(),
            predicted: Vec::new(),
            density: Vec::new(),
            lambda: Vec::new(),
            delta: Vec::new(),
        })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    pub fn particle_mass(&self) -> f64 {
        self.mass
    }

    pub fn boundary_samples(&self) -> &[Vec2] {
        &self.boundary
    }

    fn build_neighbors(&mut self, points: &[Vec2]) {
        let h2 = self.kernel.h2;
        self.grid.rebuild(points);
        self.nbr_start.clear();
        self.nbrs.clear();
        self.bnd_start.clear();
        self.bnds.clear();
        for (i, p) in points.iter().enumerate() {
            self.nbr_start.push(self.nbrs.len());
            let nbrs = &mut self.nbrs;
            let mut found: Vec<u32> = Vec::new();
            self.grid.for_each_near(p, |j| {
                if j != i && (points[j] - p).norm_squared() < h2 {
                    found.push(j as u32);
                }
            });
            // Fixed iteration order regardless of grid layout.
            found.sort_unstable();
            nbrs.extend_from_slice(&found);

            self.bnd_start.push(self.bnds.len());
            let boundary = &self.boundary;
            let bnds = &mut self.bnds;
            self.boundary_grid.for_each_near(p, |b| {
                if (boundary[b] - p).norm_squared() < h2 {
                    bnds.push(b as u32);
                }
            });
        }
        self.nbr_start.push(self.nbrs.len());
        self.bnd_start.push(self.bnds.len());
    }

    fn fluid_neighbors(&self, i: usize) -> &[u32] {
        &self.nbrs[self.nbr_start[i]..self.nbr_start[i + 1]]
    }

    fn boundary_neighbors(&self, i: usize) -> &[u32] {
        &self.bnds[self.bnd_start[i]..self.bnd_start[i + 1]]
    }

    /// Per-particle density (fluid plus boundary samples).
    pub fn densities(&mut self, points: &[Vec2]) -> Vec<f64> {
        self.build_neighbors(points);
        (0..points.len())
            .map(|i| self.density_at(points, i))
            .collect()
    }

    fn density_at(&self, points: &[Vec2], i: usize) -> f64 {
        let p = points[i];
        let mut rho = self.kernel.w(0.0);
        for &j in self.fluid_neighbors(i) {
            rho += self.kernel.w((p - points[j as usize]).norm_squared());
        }
        for &b in self.boundary_neighbors(i) {
            rho += self
                .kernel
                .w((p - self.boundary[b as usize]).norm_squared());
        }
        rho * self.mass
    }

    /// Advances `state` in place by one step and returns the per-collider forces.
    pub fn step(
        &mut self,
        state: &mut SimState,
        params: &FluidParams,
        colliders: &[MovingSegment],
    ) -> Result<Vec<Vec2>> {
        let n = state.positions.len();
        let dt = self.cfg.dt;
        let rho0 = self.cfg.rest_density;
        let h = self.kernel.h;
        let max_speed = h / dt;
        let mut forces = vec![Vec2::zeros(); colliders.len()];

        self.predicted.clear();
        for i in 0..n {
            let mut v = state.velocities[i];
            v.y -= self.cfg.gravity * dt;
            let speed = v.norm();
            if speed > max_speed {
                v *= max_speed / speed;
            }
            state.velocities[i] = v;
            self.predicted.push(state.positions[i] + v * dt);
        }
        for i in 0..n {
            let mut x = self.predicted[i];
            self.project(&mut x, &state.positions[i], colliders, &mut forces);
            self.predicted[i] = x;
        }

        let points = std::mem::take(&mut self.predicted);
        self.build_neighbors(&points);
        let mut predicted = points;

        let scale = self.mass / rho0;
        let eps = RELAXATION * self.rest_denominator;
        let cohesion = COHESION_PER_UNIT * params.cohesion() / self.rest_denominator;
        self.density.resize(n, 0.0);
        self.lambda.resize(n, 0.0);
        self.delta.resize(n, Vec2::zeros());

        for _ in 0..self.cfg.solver_iterations {
            for i in 0..n {
                let p = predicted[i];
                let rho = self.density_at(&predicted, i);
                let mut grad_i = Vec2::zeros();
                let mut sum_sq = 0.0;
                for &j in self.fluid_neighbors(i) {
                    let d = p - predicted[j as usize];
                    let g = self.kernel.grad(&d, d.norm()) * scale;
                    grad_i += g;
                    sum_sq += g.norm_squared();
                }
                for &b in self.boundary_neighbors(i) {
                    let d = p - self.boundary[b as usize];
                    grad_i += self.kernel.grad(&d, d.norm()) * scale;
                }
                sum_sq += grad_i.norm_squared();
                self.density[i] = rho;
                self.lambda[i] = -(rho / rho0 - 1.0).max(-TENSION_LIMIT) / (sum_sq + eps);
            }
            for i in 0..n {
                let p = predicted[i];
                let li = self.lambda[i];
                let mut dp = Vec2::zeros();
                for &j in self.fluid_neighbors(i) {
                    let j = j as usize;
                    let d = p - predicted[j];
                    let r2 = d.norm_squared();
                    let s_corr = cohesion * cohesion_kernel(r2.sqrt(), h);
                    dp += self.kernel.grad(&d, r2.sqrt()) * (li + self.lambda[j] + s_corr);
                }
                let mut db = Vec2::zeros();
                for &b in self.boundary_neighbors(i) {
                    let d = p - self.boundary[b as usize];
                    db += self.kernel.grad(&d, d.norm());
                }
                self.delta[i] = (dp + db * li) * scale;
            }
            for i in 0..n {
                let mut x = predicted[i] + self.delta[i];
                self.project(&mut x, &state.positions[i], colliders, &mut forces);
                predicted[i] = x;
            }
        }

        let viscosity = XSPH_PER_VISCOSITY * params.viscosity();
        let inv_dt = 1.0 / dt;
        for i in 0..n {
            state.velocities[i] = (predicted[i] - state.positions[i]) * inv_dt;
        }
        if viscosity > 0.0 {
            for i in 0..n {
                let p = predicted[i];
                let vi = state.velocities[i];
                let mut acc = Vec2::zeros();
                for &j in self.fluid_neighbors(i) {
                    let j = j as usize;
                    let w = self.kernel.w((p - predicted[j]).norm_squared());
                    acc += (state.velocities[j] - vi) * (self.mass / self.density[j] * w);
                }
                self.delta[i] = vi + acc * viscosity;
            }
            state.velocities.copy_from_slice(&self.delta[..n]);
        }
        state.positions.copy_from_slice(&predicted);
        self.predicted = predicted;

        let finite = state
            .positions
            .iter()
            .chain(state.velocities.iter())
            .all(|v| v.x.is_finite() && v.y.is_finite());
        if !finite {
            return Err(Error::Divergence { step: state.step });
        }
        state.step += 1;
        state.time += dt;

        for f in forces.iter_mut() {
            *f *= self.mass * inv_dt * inv_dt;
        }
        Ok(forces)
    }

    /// Pushes `x` out of every wall and collider, then clamps to the world.
    fn project(
        &self,
        x: &mut Vec2,
        x_old: &Vec2,
        colliders: &[MovingSegment],
        forces: &mut [Vec2],
    ) {
        let r = self.cfg.particle_radius();
        let dt = self.cfg.dt;
        let reach = self.kernel.h;
        for seg in &self.static_walls {
            project_segment(x, x_old, seg, dt, r, reach);
        }
        for (k, seg) in colliders.iter().enumerate() {
            let before = *x;
            if project_segment(x, x_old, seg, dt, r, reach) {
                // Reaction on the collider opposes the push on the particle.
                forces[k] -= *x - before;
            }
        }
        let w = &self.cfg.world;
        x.x = x.x.clamp(w.min.x + r, w.max.x - r);
        x.y = x.y.clamp(w.min.y + r, w.max.y - r);
    }
}

/// Keeps `x` at least `r` from the segment, on the side its previous position occupied.
fn project_segment(
    x: &mut Vec2,
    x_old: &Vec2,
    seg: &MovingSegment,
    dt: f64,
    r: f64,
    reach: f64,
) -> bool {
    let ab = seg.b - seg.a;
    let len = ab.norm();
    if len <= 1e-15 {
        return push_from_point(x, &seg.a, r, &Vec2::new(0.0, 1.0));
    }
    let a0 = seg.a - seg.va * dt;
    let b0 = seg.b - seg.vb * dt;
    let left = Vec2::new(-ab.y, ab.x) / len;
    let side = if cross(&(b0 - a0), &(x_old - a0)) >= 0.0 {
        1.0
    } else {
        -1.0
    };
    let normal = left * side;
    let t = (*x - seg.a).dot(&ab) / (len * len);
    if (0.0..=1.0).contains(&t) {
        let dist = (*x - seg.a).dot(&normal);
        if dist < r && dist > -(r + reach) {
            *x += normal * (r - dist);
            return true;
        }
        false
    } else {
        let (c, _) = closest_on_segment(x, &seg.a, &seg.b);
        push_from_point(x, &c, r, &normal)
    }
}

/// Akinci-style cohesion profile normalized to 1 at half the smoothing radius:
/// attractive over most of the support, repulsive below about `0.27 h`.
fn cohesion_kernel(r: f64, h: f64) -> f64 {
    if r >= h {
        return 0.0;
    }
    let q = (h - r) * r;
    let c = q * q * q;
    let h6 = h.powi(6);
    let v = if 2.0 * r > h { c } else { 2.0 * c - h6 / 64.0 };
    v * 64.0 / h6
}

fn push_from_point(x: &mut Vec2, c: &Vec2, r: f64, fallback: &Vec2) -> bool {
    let d = *x - c;
    let dist = d.norm();
    if dist >= r {
        return false;
    }
    let dir = if dist > 1e-12 { d / dist } else { *fallback };
    *x = c + dir * r;
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_scene(fill_w: f64, fill_h: f64, spacing: f64) -> SceneConfig {
        SceneConfig {
            world: Rect::from_corners(-0.1, -0.1, 0.4, 0.4),
            containers: vec![Container::cup(0.0, 0.0, fill_w, fill_h + 0.1)],
            fill: Rect::from_corners(0.0, 0.0, fill_w, fill_h),
            spacing,
            rest_density: 20.0,
            gravity: 9.81,
            dt: 1.0 / 300.0,
            solver_iterations: 4,
            jitter: 0.02,
        }
    }

    #[test]
    fn params_reject_out_of_box() {
        assert!(FluidParams::new(0.5, 0.5).is_ok());
        assert!(FluidParams::new(-0.01, 0.5).is_err());
        assert!(FluidParams::new(0.5, 1.01).is_err());
        let bad: std::result::Result<FluidParams, _> =
            serde_json::from_str(r#"{"viscosity": 2.0, "cohesion": 0.0}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn grid_fill_count() {
        let cfg = box_scene(0.1, 0.1, 0.01);
        let s = init_scene(&cfg, 3).unwrap();
        assert_eq!(s.particle_count(), 100);
        assert_eq!(s.velocities.len(), 100);
        assert!(s.velocities.iter().all(|v| *v == Vec2::zeros()));
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = box_scene(0.1, 0.1, 0.01);
        assert_eq!(init_scene(&cfg, 11).unwrap(), init_scene(&cfg, 11).unwrap());
        assert_ne!(init_scene(&cfg, 11).unwrap(), init_scene(&cfg, 12).unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = box_scene(0.1, 0.1, 0.01);
        cfg.spacing = 0.0;
        assert!(matches!(init_scene(&cfg, 0), Err(Error::Config(_))));

        let mut cfg = box_scene(0.1, 0.1, 0.01);
        cfg.fill = Rect::from_corners(0.0, 0.0, 0.0, 0.1);
        assert!(matches!(init_scene(&cfg, 0), Err(Error::Config(_))));

        let mut cfg = box_scene(0.1, 0.1, 0.01);
        cfg.containers = vec![Container::sealed(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.2, 0.2),
            Vec2::new(0.2, 0.0),
            Vec2::new(0.0, 0.2),
        ])];
        assert!(matches!(init_scene(&cfg, 0), Err(Error::Config(_))));

        let mut cfg = box_scene(0.1, 0.1, 0.01);
        cfg.dt = 0.0;
        assert!(init_scene(&cfg, 0).is_err());
        cfg.dt = 0.01;
        cfg.solver_iterations = 0;
        assert!(init_scene(&cfg, 0).is_err());
    }

    #[test]
    fn region_counts() {
        let mut cfg = box_scene(0.1, 0.1, 0.01);
        cfg.jitter = 0.0;
        let s = init_scene(&cfg, 0).unwrap();
        assert_eq!(count_in_region(&s, &cfg.world), 100);
        assert_eq!(
            count_in_region(&s, &Rect::from_corners(0.2, 0.2, 0.3, 0.3)),
            0
        );
        // Left half of the lattice: columns with x < 0.05.
        let left = Rect::from_corners(-1.0, -1.0, 0.05, 1.0);
        let brute = s.positions.iter().filter(|p| p.x < 0.05).count();
        assert_eq!(brute, 50);
        assert_eq!(count_in_region(&s, &left), 50);
    }

    #[test]
    fn isolated_particle_residual_matches_closed_form() {
        let cfg = box_scene(0.1, 0.1, 0.01);
        let state = SimState {
            positions: vec![Vec2::new(0.3, 0.3)],
            velocities: vec![Vec2::zeros()],
            time: 0.0,
            step: 0,
            rng_seed: 0,
        };
        // Independent closed form: self weight over the rest-lattice weight sum.
        let h = 0.02_f64;
        let s = 0.01_f64;
        let w = |r2: f64| {
            if r2 < h * h {
                (h * h - r2).powi(3)
            } else {
                0.0
            }
        };
        let mut lattice = 0.0;
        for i in -4i32..=4 {
            for j in -4i32..=4 {
                lattice += w(((i * i + j * j) as f64) * s * s);
            }
        }
        let expected = (w(0.0) / lattice - 1.0).abs();
        let got = density_residual(&state, &cfg).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((expected - (1.0 - 64.0 / 204.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_state_residual_is_domain_error() {
        let cfg = box_scene(0.1, 0.1, 0.01);
        let state = SimState {
            positions: vec![],
            velocities: vec![],
            time: 0.0,
            step: 0,
            rng_seed: 0,
        };
        assert!(matches!(
            density_residual(&state, &cfg),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn sparse_particles_without_gravity_stay_put() {
        let mut cfg = box_scene(0.1, 0.1, 0.01);
        cfg.gravity = 0.0;
        let positions: Vec<Vec2> = (0..5)
            .map(|i| Vec2::new(0.15 + 0.021 * i as f64, 0.3))
            .collect();
        let state = SimState {
            velocities: vec![Vec2::zeros(); positions.len()],
            positions: positions.clone(),
            time: 0.0,
            step: 0,
            rng_seed: 0,
        };
        let p = FluidParams::new(0.5, 0.5).unwrap();
        let out = step(&state, &p, &cfg, &[]).unwrap();
        assert_eq!(out.state.positions, positions);
        assert!(out.state.time > 0.0);
    }
}
