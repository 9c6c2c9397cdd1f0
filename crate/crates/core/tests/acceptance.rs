//! Acceptance criteria 1-9. Each criterion prints one PASS/FAIL line; the
//! process exits non-zero if any criterion fails.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stircal::calibrate::{likelihood, posterior_grid};
use stircal::config::Config;
use stircal::discrepancy::discrepancy;
use stircal::fluid::{density_residual, init_scene, Container, FluidParams, SceneConfig, Solver};
use stircal::geometry::{MovingSegment, Rect, Vec2};
use stircal::gp::{GpConfig, GpModel, Point};
use stircal::harness::{run_twin, TwinReport};
use stircal::probe::{stick_step, StickModel, StickState};
use stircal::scenario::{
    default_stir_scene, liquid_preset, run_pour, run_stir, InclinationTrace, LIQUID_NAMES,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Twin reports keyed by `(liquid, N, master seed)`, computed once.
struct Twins {
    cfg: Config,
    reports: HashMap<(String, usize, u64), TwinReport>,
}

impl Twins {
    fn get(&mut self, liquid: &str, n: usize, seed: u64) -> &TwinReport {
        let cfg = &self.cfg;
        self.reports
            .entry((liquid.to_string(), n, seed))
            .or_insert_with(|| run_twin(liquid, n, seed, cfg).expect("twin run"))
    }
}

fn twin_efficacy(twins: &mut Twins) -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    let mut slowest: f64 = 0.0;
    for (n, limit) in [(10, 0.10), (20, 0.05)] {
        let zs: Vec<f64> = (1..=3).map(|s| twins.get("water", n, s).mean_z).collect();
        for s in 1..=3 {
            slowest = slowest.max(twins.get("water", n, s).wall_clock_seconds);
        }
        let hits = zs.iter().filter(|&&z| z <= limit).count();
        pass &= hits >= 2;
        detail.push(format!("N={n} Z={zs:.4?} ({hits}/3 <= {limit})"));
    }
    pass &= slowest <= 600.0;
    detail.push(format!("slowest twin {slowest:.1}s"));
    outcome(pass, detail.join("; "))
}

fn budget_monotonicity(twins: &mut Twins) -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for liquid in LIQUID_NAMES {
        let z10 = twins.get(liquid, 10, 1).mean_z;
        let z20 = twins.get(liquid, 20, 1).mean_z;
        pass &= z20 <= z10 + 0.02;
        detail.push(format!("{liquid} Z10={z10:.4} Z20={z20:.4}"));
    }
    outcome(pass, detail.join("; "))
}

fn beats_grid_baseline(twins: &mut Twins) -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for liquid in LIQUID_NAMES {
        let report = twins.get(liquid, 20, 1).clone();
        let cfg = &twins.cfg;
        let mut grid: Vec<f64> = cfg
            .pour
            .space
            .grid(4)
            .iter()
            .map(|a| {
                run_pour(
                    &report.theta_true,
                    a,
                    &cfg.scene,
                    &cfg.pour.setup,
                    report.seeds.pour,
                )
                .unwrap()
                .ratio
            })
            .collect();
        grid.sort_by(f64::total_cmp);
        let median = 0.5 * (grid[7] + grid[8]);
        pass &= report.predicted_z <= median;
        detail.push(format!(
            "{liquid} Z(theta*)={:.4} median={median:.4} verified={:.4}",
            report.predicted_z, report.mean_z
        ));
    }
    outcome(pass, detail.join("; "))
}

/// Dense GP posterior by Gaussian elimination, standardized targets, in target units.
fn oracle_posterior(xs: &[Point], ys: &[f64], ls: [f64; 2], noise: f64, q: &Point) -> (f64, f64) {
    let n = ys.len();
    let mean = ys.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        1.0
    };
    let sd = if sd > 0.0 { sd } else { 1.0 };
    let k = |a: &Point, b: &Point| {
        let r2 = ((a[0] - b[0]) / ls[0]).powi(2) + ((a[1] - b[1]) / ls[1]).powi(2);
        (-0.5 * r2).exp()
    };
    let solve = |rhs: Vec<f64>| {
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| k(&xs[i], &xs[j]) + if i == j { noise } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut b = rhs;
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
                .unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for j in c..n {
                    a[r][j] -= f * a[c][j];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            x[i] = (b[i] - (i + 1..n).map(|j| a[i][j] * x[j]).sum::<f64>()) / a[i][i];
        }
        x
    };
    let ks: Vec<f64> = xs.iter().map(|x| k(x, q)).collect();
    let alpha = solve(ys.iter().map(|y| (y - mean) / sd).collect());
    let v = solve(ks.clone());
    let mu = ks.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>();
    let var = 1.0 - ks.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
    (mean + sd * mu, sd * sd * var.max(0.0))
}

fn gp_oracle() -> Outcome {
    let started = Instant::now();
    let cfg = GpConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_mu, mut worst_var) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let n = rng.random_range(1..=30);
        let xs: Vec<Point> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let model = GpModel::fit(&xs, &ys, &cfg).unwrap();
        for _ in 0..25 {
            let q = [rng.random(), rng.random()];
            let (mu, sigma) = model.predict(&q);
            let (omu, ovar) = oracle_posterior(&xs, &ys, cfg.length_scales, cfg.noise_variance, &q);
            worst_mu = worst_mu.max((mu - omu).abs());
            worst_var = worst_var.max((sigma * sigma - ovar).abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst_mu <= 1e-8 && worst_var <= 1e-8 && secs < 10.0,
        format!("max |dmu|={worst_mu:.2e} max |dvar|={worst_var:.2e} in {secs:.2}s"),
    )
}

fn discrepancy_analytics() -> Outcome {
    let rate = 30.0;
    let t_span = 10.0;
    let n = 301;
    let stirred = run_stir(
        &liquid_preset("water").unwrap().params,
        &Default::default(),
        &default_stir_scene(),
        1,
    )
    .unwrap();
    let identity = discrepancy(&stirred, &stirred, 10.0).unwrap().value;

    let delta = 0.1;
    let zero = InclinationTrace::from_angles(&vec![0.0; n], rate);
    let offset = InclinationTrace::from_angles(&vec![delta; n], rate);
    let d_offset = discrepancy(&zero, &offset, 10.0).unwrap().value;
    let rel_offset = (d_offset / (delta * delta * t_span) - 1.0).abs();

    let y = |t: f64| 0.05 * (2.0 * std::f64::consts::PI * t).sin();
    let sine: Vec<f64> = (0..n).map(|k| y(k as f64 / rate)).collect();
    let d_sine = discrepancy(&InclinationTrace::from_angles(&sine, rate), &zero, 10.0)
        .unwrap()
        .value;
    // Composite Simpson with 200k intervals.
    let m = 200_000;
    let h = t_span / m as f64;
    let simpson = (0..=m)
        .map(|i| {
            let w = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * y(i as f64 * h).powi(2)
        })
        .sum::<f64>()
        * h
        / 3.0;
    let rel_sine = (d_sine / simpson - 1.0).abs();

    outcome(
        identity == 0.0 && rel_offset <= 1e-12 && rel_sine <= 0.01,
        format!(
            "identity={identity} offset={d_offset} (rel err {rel_offset:.1e}) sine={d_sine:.6} vs {simpson:.6} (rel err {rel_sine:.2e})"
        ),
    )
}

/// Standard normal CDF from the everywhere-positive series
/// `erf(z) = 2/sqrt(pi) exp(-z^2) sum 2^n z^(2n+1) / (2n+1)!!`.
fn phi_series(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    if z.abs() > 6.0 {
        return if z > 0.0 { 1.0 } else { 0.0 };
    }
    let a = z.abs();
    let (mut term, mut sum) = (a, a);
    for n in 1..10_000 {
        term *= 2.0 * a * a / (2 * n + 1) as f64;
        sum += term;
        if term < 1e-18 * sum {
            break;
        }
    }
    let erf = 2.0 / std::f64::consts::PI.sqrt() * (-a * a).exp() * sum;
    0.5 * (1.0 + erf.copysign(z))
}

fn likelihood_grid(twins: &mut Twins) -> Outcome {
    let half = likelihood(0.3, 0.02, 0.3);
    let tail = likelihood(0.3 + 10.0 * 0.02, 0.02, 0.3);

    let report = twins.get("water", 10, 1).clone();
    let cfg = &twins.cfg;
    let xs: Vec<Point> = report
        .calibration_history
        .iter()
        .map(|s| s.theta.as_array())
        .collect();
    let ys: Vec<f64> = report
        .calibration_history
        .iter()
        .map(|s| s.discrepancy)
        .collect();
    let model = GpModel::fit(&xs, &ys, &cfg.gp).unwrap();
    let grid = posterior_grid(&model, report.epsilon, cfg.calibrate.posterior_resolution).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let c = grid.cells[rng.random_range(0..grid.cells.len())];
        let recomputed = phi_series((grid.epsilon - c.mu) / c.sigma);
        worst = worst.max((recomputed - c.value).abs());
    }
    let in_range = grid.cells.iter().all(|c| (0.0..=1.0).contains(&c.value));
    let oracle_ok = (phi_series(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15
        && (phi_series(-1.5) - 0.066_807_201_268_858_06).abs() < 1e-16
        && phi_series(0.0) == 0.5;
    outcome(
        half == 0.5 && tail < 1e-20 && worst <= 1e-12 && in_range && oracle_ok,
        format!("phi(0)={half} tail={tail:.2e} 5-cell max err={worst:.1e}"),
    )
}

fn column_scene() -> SceneConfig {
    SceneConfig {
        world: Rect::from_corners(-0.05, -0.05, 0.15, 0.3),
        containers: vec![Container::cup(0.0, 0.0, 0.1, 0.2)],
        fill: Rect::from_corners(0.0, 0.0, 0.1, 0.1),
        spacing: 0.01,
        rest_density: 20.0,
        gravity: 9.81,
        dt: 1.0 / 300.0,
        solver_iterations: 4,
        jitter: 0.02,
    }
}

fn physics_sanity() -> Outcome {
    let water = liquid_preset("water").unwrap().params;

    let cfg = default_stir_scene();
    let mut state = init_scene(&cfg, 1).unwrap();
    let n0 = state.particle_count();
    let mut solver = Solver::new(&cfg).unwrap();
    let stick = MovingSegment::fixed(Vec2::new(0.08, 0.33), Vec2::new(0.08, 0.03));
    for _ in 0..10_000 {
        solver.step(&mut state, &water, &[stick]).unwrap();
    }
    let conserved =
        state.particle_count() == n0 && state.positions.iter().all(|p| cfg.world.contains(p));

    let column = column_scene();
    let mut state = init_scene(&column, 2).unwrap();
    let mut solver = Solver::new(&column).unwrap();
    for _ in 0..600 {
        solver.step(&mut state, &water, &[]).unwrap();
    }
    let residual = density_residual(&state, &column).unwrap();

    let model = StickModel {
        damping: 0.0,
        ..StickModel::default()
    };
    let g = 9.81;
    let dt = 1e-4;
    let mut s = StickState::hanging(Vec2::new(0.0, 1.0), model.length);
    s.inclination = 0.02;
    let (mut t, mut crossings) = (0.0, Vec::new());
    while crossings.len() < 21 {
        let next = stick_step(&s, &model, g, (s.pivot, Vec2::zeros()), Vec2::zeros(), dt).unwrap();
        if s.inclination.signum() != next.inclination.signum() {
            crossings.push(t + dt * s.inclination / (s.inclination - next.inclination));
        }
        t += dt;
        s = next;
    }
    let period = (crossings[20] - crossings[0]) / 10.0;
    let expected = 2.0 * std::f64::consts::PI * (2.0 * model.length / (3.0 * g)).sqrt();
    let period_err = (period / expected - 1.0).abs();

    let ke: Vec<f64> = [0.0, 0.5, 1.0]
        .iter()
        .map(|&v| {
            let corners = vec![
                Vec2::new(0.0, 0.0),
                Vec2::new(0.1, 0.0),
                Vec2::new(0.1, 0.1),
                Vec2::new(0.0, 0.1),
            ];
            let cfg = SceneConfig {
                world: Rect::from_corners(-0.02, -0.02, 0.12, 0.12),
                containers: vec![Container::sealed(corners)],
                fill: Rect::from_corners(0.0, 0.0, 0.05, 0.1),
                spacing: 0.005,
                gravity: 0.0,
                ..column_scene()
            };
            let mut state = init_scene(&cfg, 6).unwrap();
            for vel in &mut state.velocities {
                *vel = Vec2::new(0.3, 0.0);
            }
            let mut solver = Solver::new(&cfg).unwrap();
            let params = FluidParams::new(v, 0.0).unwrap();
            for _ in 0..90 {
                solver.step(&mut state, &params, &[]).unwrap();
            }
            state.kinetic_energy(solver.particle_mass())
        })
        .collect();
    let monotone = ke[0] >= ke[1] && ke[1] >= ke[2];

    outcome(
        conserved && residual <= 0.1 && period_err < 0.05 && monotone,
        format!(
            "count kept={conserved} residual={residual:.3} period err={:.2}% KE=[{:.3e}, {:.3e}, {:.3e}]",
            100.0 * period_err,
            ke[0],
            ke[1],
            ke[2]
        ),
    )
}

fn determinism(twins: &mut Twins) -> Outcome {
    let first = twins
        .get("water", 10, 1)
        .to_json_without_wall_clock()
        .unwrap();
    let second = run_twin("water", 10, 1, &twins.cfg)
        .unwrap()
        .to_json_without_wall_clock()
        .unwrap();
    outcome(
        first == second,
        format!("{} bytes, identical={}", first.len(), first == second),
    )
}

fn separability() -> Outcome {
    let stir = Default::default();
    let scene = default_stir_scene();
    let water = run_stir(&liquid_preset("water").unwrap().params, &stir, &scene, 1).unwrap();
    let gel = run_stir(&liquid_preset("gel").unwrap().params, &stir, &scene, 1).unwrap();
    let peak = water
        .angles()
        .zip(gel.angles())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    outcome(
        !water.failed && !gel.failed && peak > 0.01,
        format!("peak |dangle|={peak:.4} rad"),
    )
}

fn main() {
    let mut twins = Twins {
        cfg: Config::default(),
        reports: HashMap::new(),
    };
    let mut failed = Vec::new();
    let mut report = |id: usize, name: &str, o: Outcome| {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} {verdict} {name}: {}", o.detail);
        if !o.pass {
            failed.push(id);
        }
    };
    report(1, "twin pouring efficacy", twin_efficacy(&mut twins));
    report(2, "budget monotonicity", budget_monotonicity(&mut twins));
    report(
        3,
        "calibration beats grid baseline",
        beats_grid_baseline(&mut twins),
    );
    report(4, "GP oracle equivalence", gp_oracle());
    report(5, "discrepancy analytics", discrepancy_analytics());
    report(6, "likelihood approximation", likelihood_grid(&mut twins));
    report(7, "physics sanity", physics_sanity());
    report(8, "determinism", determinism(&mut twins));
    report(9, "preset separability", separability());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
