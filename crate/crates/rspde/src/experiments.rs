//! The experiments behind `rspde run`.
//!
//! Each experiment takes a validated [`Prepared`] run, computes its cells
//! on the current rayon pool and returns tables plus pass/fail checks. Cells
//! are seeded independently, so results do not depend on the worker count.

use std::sync::Arc;

use rayon::prelude::*;

use rspde_core::bdsde::{apriori_stats, bdsde_residual, max_residual, reconstruct, skorokhod_pairing, test_processes};
use rspde_core::coefficients::{ConstantTerminal, ProblemConfig};
use rspde_core::domain::verify_projection_properties;
use rspde_core::grid::GridSpec;
use rspde_core::lab::{
    b_seed, cauchy_metric, duality_check, ensemble_triples, fit_slopes, sample_starts, solve_levels, spread_ratio,
    sweep_row, w_path, DualityResult, DualitySettings, SweepRow, SweepSettings,
};
use rspde_core::paths::{calibrate_star_convention, derive_seed, stream, BrownianPath, BumpField, DEFAULT_KAPPA};
use rspde_core::solver::{solve, Solution};
use rspde_core::stats::{fit_loglog, Estimate, RateFit};
use rspde_core::weak_form::{decomposition_residual, dual_residual, weak_residual, DualPairing, TestFunction};
use rspde_core::Error;

use crate::config::{DualityDoc, Experiment, ProblemDoc, RunConfig};
use crate::output::{num, opt, Check, Table};
use crate::registry::Registry;
use crate::RunError;

/// Largest `node_count · (steps + 1)` a single solve may allocate.
pub const MAX_SPACE_TIME_NODES: usize = 20_000_000;

/// Penalty-rate window for `E E^m ∫d² ds`.
pub const RATE_WINDOW: (f64, f64) = (-1.3, -0.7);
/// `dist4_sup` at the largest `n` relative to the smallest.
pub const DIST4_DECAY: f64 = 0.1;
/// Per-step slack for the Cauchy gaps.
pub const CAUCHY_SLACK: f64 = 0.10;
/// Per-step slack for the coupled `dist2` monotonicity.
pub const DIST2_SLACK: f64 = 0.05;
/// Bound on the max/min spread of the total variations.
pub const SPREAD_BOUND: f64 = 3.0;
/// Share of reflection mass allowed away from the boundary.
pub const LOCALIZATION_BOUND: f64 = 0.05;
/// Localization distance as a fraction of the inradius.
pub const LOCALIZATION_FRACTION: f64 = 0.05;
pub const DUALITY_BOUND: f64 = 0.05;
pub const SKOROKHOD_FACTOR: f64 = 5.0;
/// Test processes per Skorokhod run.
pub const SKOROKHOD_PROCESSES: usize = 100;
/// Paths carrying the Skorokhod pairings.
pub const SKOROKHOD_PATHS: usize = 20;
pub const RESIDUAL_PATHS: usize = 100;
pub const MIN_REFINEMENT_SLOPE: f64 = 0.4;
pub const DECOMPOSITION_STEPS: [usize; 3] = [32, 128, 512];
pub const DECOMPOSITION_PATHS: usize = 200;
pub const DECOMPOSITION_WINDOW: (f64, f64) = (0.3, 0.7);
pub const STAR_STEPS: [usize; 4] = [16, 64, 256, 1024];
pub const STAR_PATHS: usize = 100;
pub const HEAT_FACTOR: f64 = 2.0;
/// Samples per domain for the projection inequalities in `validate-only`.
pub const PROJECTION_SAMPLES: usize = 10_000;
pub const PROJECTION_TOLERANCE: f64 = 1e-10;

/// A run whose problem was built and passed the assumption gate.
pub struct Prepared {
    pub run: RunConfig,
    pub experiment: Experiment,
    pub problem: ProblemConfig,
    pub registry: Registry,
}

impl Prepared {
    /// Builds and validates; nothing is computed or written on failure.
    pub fn new(run: RunConfig, experiment: Experiment) -> Result<Self, RunError> {
        let registry = Registry::builtin();
        let problem = run.problem.build(&registry)?;
        let seed = run.seeds[0];
        rspde_core::coefficients::validate(&problem, run.validation_samples, seed)
            .into_result()
            .map_err(RunError::from_core)?;
        problem.check_stability().map_err(RunError::from_core)?;
        Ok(Self {
            run,
            experiment,
            problem,
            registry,
        })
    }

    fn largest_n(&self) -> f64 {
        *self.run.ns.last().expect("ns checked nonempty")
    }

    fn first_seed(&self) -> u64 {
        self.run.seeds[0]
    }

    fn build(&self, doc: &ProblemDoc) -> Result<ProblemConfig, RunError> {
        Ok(doc.build(&self.registry)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub kappa: f64,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl Outcome {
    fn new(kappa: f64) -> Self {
        Self {
            kappa,
            tables: Vec::new(),
            checks: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub fn execute(prep: &Prepared) -> Result<Outcome, RunError> {
    match prep.experiment {
        Experiment::ValidateOnly => validate_only(prep),
        Experiment::Baseline => baseline(prep),
        Experiment::PenaltySweep => penalty_sweep(prep),
        Experiment::Residuals => residuals(prep),
        Experiment::Duality => duality(prep),
        Experiment::CalibrateStar => calibrate_star(prep),
    }
}

fn core<T>(r: rspde_core::Result<T>) -> Result<T, RunError> {
    r.map_err(RunError::from_core)
}

fn check_size(grid: &GridSpec) -> Result<(), RunError> {
    let size = grid.node_count().saturating_mul(grid.steps() + 1);
    if size > MAX_SPACE_TIME_NODES {
        return Err(RunError::Config(crate::config::ConfigError::Invalid(format!(
            "grid with {} nodes and {} steps exceeds {MAX_SPACE_TIME_NODES} space-time nodes",
            grid.node_count(),
            grid.steps()
        ))));
    }
    Ok(())
}

fn refined(doc: &ProblemDoc, level: u32) -> ProblemDoc {
    doc.with_grid(doc.grid.nodes << level, doc.grid.steps << (2 * level))
}

fn validate_only(prep: &Prepared) -> Result<Outcome, RunError> {
    let mut out = Outcome::new(prep.run.kappa.unwrap_or(DEFAULT_KAPPA));
    out.checks.push(Check::new(
        "assumptions",
        true,
        format!("{} sampled input pairs, no violations", prep.run.validation_samples),
    ));
    let report = core(verify_projection_properties(
        &prep.problem.domain,
        PROJECTION_SAMPLES,
        prep.first_seed(),
    ))?;
    out.checks.push(Check::new(
        "projection-properties",
        report.max_violation() <= PROJECTION_TOLERANCE,
        format!("max violation {} over {} samples", num(report.max_violation()), PROJECTION_SAMPLES),
    ));
    out.notes.push(format!("contract value alpha + beta^2/2 = {}", num(prep.problem.coefficients.contract_value())));
    Ok(out)
}

fn baseline(prep: &Prepared) -> Result<Outcome, RunError> {
    let mut out = Outcome::new(prep.run.kappa.unwrap_or(DEFAULT_KAPPA));
    let doc = prep.run.problem.heat_version();
    if !prep.run.problem.is_heat() {
        out.notes.push("f, g and h replaced by zero for the baseline".into());
    }
    let heat = prep.build(&doc)?;
    check_size(&heat.grid)?;
    let cells: Vec<(u64, f64)> = prep
        .run
        .seeds
        .iter()
        .flat_map(|s| prep.run.ns.iter().map(move |n| (*s, *n)))
        .collect();
    let solved: Vec<(u64, f64, Solution)> = cells
        .par_iter()
        .map(|&(seed, n)| {
            let w = core(w_path(&heat, seed))?;
            Ok((seed, n, core(solve(&heat, &w, n))?))
        })
        .collect::<Result<_, RunError>>()?;
    let mut table = Table::new("baseline.csv", &["n", "seed", "tv_nu", "max_distance", "cauchy_to_first"]);
    let mut max_mass = 0.0f64;
    let mut max_gap = 0.0f64;
    for (seed, n, sol) in &solved {
        let first = solved.iter().find(|(s, _, _)| s == seed).map(|(_, _, s)| &s.field).expect("seed row");
        let gap = core(cauchy_metric(&sol.field, first))?;
        let mass = sol.measure.mass();
        max_mass = max_mass.max(mass);
        max_gap = max_gap.max(gap);
        table.push(vec![
            num(*n),
            seed.to_string(),
            num(mass),
            num(core(rspde_core::solver::max_distance(&sol.field, &heat.domain))?),
            num(gap),
        ]);
    }
    out.tables.push(table);
    out.notes.push(format!("reflection measure mass: {} (max over cells)", num(max_mass)));
    out.checks.push(Check::new("nu-mass-zero", max_mass == 0.0, format!("max total variation {}", num(max_mass))));
    out.checks.push(Check::new(
        "penalty-inactive",
        max_gap == 0.0,
        format!("max cauchy gap between levels {}", num(max_gap)),
    ));

    let n = prep.largest_n();
    let mut refinement = Table::new("heat_refinement.csv", &["nodes", "steps", "dx", "dt", "l2_error"]);
    let mut errors = Vec::new();
    for level in 0..3 {
        let cfg = prep.build(&refined(&doc, level))?;
        check_size(&cfg.grid)?;
        let w = core(w_path(&cfg, prep.first_seed()))?;
        let sol = core(solve(&cfg, &w, n))?;
        let Some(err) = heat_error(&cfg, &sol) else {
            out.checks.push(Check::skip(
                "heat-refinement",
                format!("no closed-form heat evolution for terminal `{}`", cfg.terminal.name()),
            ));
            return Ok(out);
        };
        refinement.push(vec![
            cfg.grid.nodes().to_string(),
            cfg.grid.steps().to_string(),
            num(cfg.grid.dx()),
            num(cfg.dt()),
            num(err),
        ]);
        errors.push(err);
    }
    out.tables.push(refinement);
    let ratios: Vec<f64> = errors.windows(2).map(|e| e[0] / e[1]).collect();
    out.checks.push(Check::new(
        "heat-refinement",
        ratios.iter().all(|r| *r >= HEAT_FACTOR),
        format!(
            "L2 error {} with reduction factors {} (need >= {HEAT_FACTOR})",
            errors.iter().map(|e| num(*e)).collect::<Vec<_>>().join(" -> "),
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", ")
        ),
    ));
    Ok(out)
}

/// `sup_t ‖u_t − P_{T−t}Φ‖_{L²}` against the periodic heat-kernel
/// convolution of the terminal condition.
pub fn heat_error(config: &ProblemConfig, sol: &Solution) -> Option<f64> {
    let grid = &config.grid;
    let (d, k) = (config.d, config.k);
    let mut x = vec![0.0; d];
    let mut exact = vec![0.0; k];
    let mut worst = 0.0f64;
    for j in 0..=grid.steps() {
        let tau = config.horizon - grid.time(config.horizon, j);
        let mut sum = 0.0;
        for node in 0..grid.node_count() {
            grid.position(node, &mut x);
            if !config.terminal.heat_evolved(&x, tau, grid.half_width(), &mut exact) {
                return None;
            }
            sum += sol.field.value(j, node).iter().zip(&exact).map(|(u, e)| (u - e) * (u - e)).sum::<f64>();
        }
        worst = worst.max(sum * grid.cell_volume());
    }
    Some(worst.sqrt())
}

fn duality_settings(prep: &Prepared) -> Option<DualitySettings> {
    prep.run
        .duality
        .as_ref()
        .map(|DualityDoc { b_paths, x_samples }| DualitySettings::standard(prep.problem.d, *b_paths, *x_samples))
}

fn penalty_sweep(prep: &Prepared) -> Result<Outcome, RunError> {
    let config = &prep.problem;
    check_size(&config.grid)?;
    let kappa = prep.run.kappa.unwrap_or(DEFAULT_KAPPA);
    let mut out = Outcome::new(kappa);
    let settings = SweepSettings {
        ns: prep.run.ns.clone(),
        seeds: prep.run.seeds.clone(),
        paths: prep.run.paths,
        kappa,
        delta_fraction: LOCALIZATION_FRACTION,
        duality: None,
    };
    core(settings.check())?;
    let levels = solve_levels(&settings.ns);
    let solve_cells: Vec<(u64, f64)> = settings
        .seeds
        .iter()
        .flat_map(|s| levels.iter().map(move |n| (*s, *n)))
        .collect();
    let solutions: Vec<Solution> = solve_cells
        .par_iter()
        .map(|&(seed, n)| {
            let w = core(w_path(config, seed))?;
            core(solve(config, &w, n))
        })
        .collect::<Result<_, RunError>>()?;
    let find = |seed: u64, n: f64| {
        solve_cells
            .iter()
            .position(|c| *c == (seed, n))
            .map(|i| &solutions[i])
    };
    let row_cells: Vec<(u64, f64)> = settings
        .seeds
        .iter()
        .flat_map(|s| settings.ns.iter().map(move |n| (*s, *n)))
        .collect();
    let mut rows: Vec<SweepRow> = row_cells
        .par_iter()
        .map(|&(seed, n)| {
            let sol = find(seed, n).expect("level solved");
            let double = find(seed, 2.0 * n).map(|s| &s.field);
            core(sweep_row(config, sol, double, seed, &settings))
        })
        .collect::<Result<_, RunError>>()?;

    let top = prep.largest_n();
    let mut duality_results: Vec<(u64, DualityResult)> = Vec::new();
    if let Some(ds) = duality_settings(prep) {
        duality_results = settings
            .seeds
            .par_iter()
            .map(|&seed| {
                let sol = find(seed, top).expect("level solved");
                Ok((seed, core(duality_check(&sol.field, &sol.measure, &config.domain, &ds, seed, 0))?))
            })
            .collect::<Result<_, RunError>>()?;
        for (seed, result) in &duality_results {
            if let Some(row) = rows.iter_mut().find(|r| r.seed == *seed && r.n == top) {
                row.duality_gap = Some(result.gap);
            }
        }
    }
    let slopes = fit_slopes(&rows);
    out.tables.push(sweep_table(&rows));
    let mut slope_table = Table::new(
        "slopes.csv",
        &["metric", "slope", "intercept", "half_width", "levels_used", "excluded"],
    );
    for (name, fit) in [
        ("dist2_integral", &slopes.dist2_integral),
        ("dist4_sup", &slopes.dist4_sup),
        ("cauchy_gap", &slopes.cauchy_gap),
        ("tv_nu", &slopes.tv_nu),
        ("squared_tv", &slopes.squared_tv),
    ] {
        slope_table.push(slope_row(name, fit.as_ref()));
    }
    out.tables.push(slope_table);

    let report = rspde_core::lab::SweepReport { rows, slopes };
    let mean = |f: &dyn Fn(&SweepRow) -> Option<f64>| report.level_means(f).1;
    let dist2 = mean(&|r| Some(r.dist2_integral.mean));
    let dist4 = mean(&|r| Some(r.dist4_sup.mean));

    out.checks.push(match &report.slopes.dist2_integral {
        Some(fit) => Check::new(
            "dist2-rate",
            fit.slope >= RATE_WINDOW.0 && fit.slope <= RATE_WINDOW.1,
            format!(
                "slope {:.3} +/- {:.3} over {} levels (window [{}, {}])",
                fit.slope, fit.half_width, fit.levels_used, RATE_WINDOW.0, RATE_WINDOW.1
            ),
        ),
        None if dist2.iter().all(|v| *v == 0.0) => Check::skip("dist2-rate", "distance vanishes at every level"),
        None => Check::skip("dist2-rate", "fewer than four positive levels"),
    });
    out.checks.push(coupled_monotone(&report, "dist2-monotone", DIST2_SLACK, |r| {
        Some(r.dist2_integral.mean)
    }));
    out.checks.push(match (dist4.first(), dist4.last()) {
        (Some(first), Some(last)) if *first > 0.0 && dist4.len() > 1 => Check::new(
            "dist4-decay",
            *last <= DIST4_DECAY * first,
            format!("ratio {} (need <= {DIST4_DECAY})", num(last / first)),
        ),
        _ => Check::skip("dist4-decay", "needs two levels with positive distance"),
    });
    out.checks.push(if report.rows.iter().all(|r| r.cauchy_gap.is_none()) {
        Check::skip("cauchy-monotone", "no doubled levels")
    } else {
        coupled_monotone(&report, "cauchy-monotone", CAUCHY_SLACK, |r| r.cauchy_gap)
    });
    let tv = mean(&|r| Some(r.tv_nu));
    let sq = mean(&|r| Some(r.squared_tv.mean));
    for (name, values) in [("tv-bounded", &tv), ("squared-tv-bounded", &sq)] {
        let ratio = spread_ratio(values);
        out.checks.push(Check::new(
            name,
            ratio <= SPREAD_BOUND,
            format!("max/min ratio {ratio:.3} (need <= {SPREAD_BOUND})"),
        ));
    }
    let top_rows: Vec<&SweepRow> = report.rows.iter().filter(|r| r.n == top).collect();
    let worst_fraction = top_rows.iter().map(|r| r.boundary_mass_fraction).fold(0.0, f64::max);
    out.checks.push(Check::new(
        "boundary-localization",
        worst_fraction <= LOCALIZATION_BOUND,
        format!(
            "mass fraction beyond {LOCALIZATION_FRACTION} inradius at n = {}: {}{}",
            top,
            num(worst_fraction),
            if top_rows.iter().all(|r| r.zero_mass) { " (zero mass)" } else { "" }
        ),
    ));
    if duality_results.is_empty() {
        out.checks.push(Check::skip("duality", "no duality settings in the config"));
    } else {
        let worst = duality_results.iter().map(|(_, r)| r.gap.mean).fold(0.0, f64::max);
        let degenerate = duality_results.iter().all(|(_, r)| r.degenerate);
        out.checks.push(Check::new(
            "duality",
            worst <= DUALITY_BOUND,
            format!(
                "relative gap {} at n = {} (need <= {DUALITY_BOUND}){}",
                num(worst),
                top,
                if degenerate { ", zero-mass measure" } else { "" }
            ),
        ));
    }
    Ok(out)
}

/// Per seed, each level at most `(1 + slack)` times the previous one.
fn coupled_monotone(
    report: &rspde_core::lab::SweepReport,
    name: &str,
    slack: f64,
    metric: impl Fn(&SweepRow) -> Option<f64>,
) -> Check {
    let mut seeds: Vec<u64> = report.rows.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut worst = 0.0f64;
    for seed in seeds {
        let values: Vec<f64> = report.seed_rows(seed).iter().filter_map(|r| metric(r)).collect();
        for w in values.windows(2) {
            if w[1] > 0.0 {
                let excess = if w[0] > 0.0 { w[1] / w[0] - 1.0 } else { f64::INFINITY };
                worst = worst.max(excess);
            }
        }
    }
    Check::new(
        name,
        worst <= slack,
        format!("largest step increase {:.2}% (slack {:.0}%)", 100.0 * worst, 100.0 * slack),
    )
}

fn slope_row(name: &str, fit: Option<&RateFit>) -> Vec<String> {
    match fit {
        Some(f) => vec![
            name.into(),
            num(f.slope),
            num(f.intercept),
            num(f.half_width),
            f.levels_used.to_string(),
            f.excluded.to_string(),
        ],
        None => vec![name.into(), String::new(), String::new(), String::new(), "0".into(), String::new()],
    }
}

pub const SWEEP_COLUMNS: [&str; 23] = [
    "n",
    "seed",
    "dim",
    "half_width",
    "nodes",
    "steps",
    "kappa",
    "dist2_integral",
    "dist2_stderr",
    "dist4_sup",
    "dist4_stderr",
    "cauchy_gap",
    "tv_nu",
    "k_tv",
    "k_tv_stderr",
    "squared_tv",
    "squared_tv_stderr",
    "duality_gap",
    "duality_stderr",
    "boundary_mass_fraction",
    "zero_mass",
    "max_distance",
    "wrapped_fraction",
];

fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut table = Table::new("sweep.csv", &SWEEP_COLUMNS);
    for r in rows {
        table.push(vec![
            num(r.n),
            r.seed.to_string(),
            r.grid.dim().to_string(),
            num(r.grid.half_width()),
            r.grid.nodes().to_string(),
            r.grid.steps().to_string(),
            num(r.kappa),
            num(r.dist2_integral.mean),
            num(r.dist2_integral.std_err),
            num(r.dist4_sup.mean),
            num(r.dist4_sup.std_err),
            opt(r.cauchy_gap),
            num(r.tv_nu),
            num(r.k_tv.mean),
            num(r.k_tv.std_err),
            num(r.squared_tv.mean),
            num(r.squared_tv.std_err),
            opt(r.duality_gap.map(|g| g.mean)),
            opt(r.duality_gap.map(|g| g.std_err)),
            num(r.boundary_mass_fraction),
            r.zero_mass.to_string(),
            num(r.max_distance),
            num(r.wrapped_fraction),
        ]);
    }
    table
}

/// `∗dB` convention factor: the override, or the calibrated one.
fn resolve_kappa(prep: &Prepared, out: &mut Outcome) -> Result<f64, RunError> {
    if let Some(k) = prep.run.kappa {
        out.notes.push(format!("kappa {} from the config", num(k)));
        return Ok(k);
    }
    let d = prep.problem.d;
    let field = core(BumpField::new(vec![1.0; d], vec![0.0; d], 1.5))?;
    let cal = core(calibrate_star_convention(
        &field,
        &vec![0.0; d],
        prep.problem.horizon,
        &STAR_STEPS,
        STAR_PATHS,
        prep.first_seed(),
    ))?;
    out.notes.push(format!("kappa {} calibrated on a bump field", num(cal.kappa)));
    Ok(cal.kappa)
}

/// Couples `W` and `B` across levels: sampled at `finest` steps and
/// coarsened.
struct CoupledNoise {
    w: BrownianPath,
    b: Vec<BrownianPath>,
    finest: usize,
}

impl CoupledNoise {
    fn sample(config: &ProblemConfig, finest: usize, paths: usize, seed: u64) -> Result<Self, RunError> {
        let w = core(BrownianPath::sample(
            config.horizon,
            finest,
            config.l,
            derive_seed(seed, stream::W, 0),
        ))?;
        let b = (0..paths)
            .map(|p| core(BrownianPath::sample(config.horizon, finest, config.d, b_seed(seed, 0, p))))
            .collect::<Result<_, _>>()?;
        Ok(Self { w, b, finest })
    }

    fn at(&self, steps: usize) -> Result<(BrownianPath, Vec<BrownianPath>), RunError> {
        let factor = self.finest / steps;
        let w = core(self.w.coarsen(factor))?;
        let b = self.b.iter().map(|b| core(b.coarsen(factor))).collect::<Result<_, _>>()?;
        Ok((w, b))
    }
}

/// Mean over paths of `max_s |R(s)|`, with paths started at `starts`.
fn mean_residual(
    config: &ProblemConfig,
    sol: &Solution,
    w: &BrownianPath,
    bs: &[BrownianPath],
    starts: &[Vec<f64>],
    kappa: f64,
) -> Result<Estimate, RunError> {
    let values: Vec<f64> = bs
        .par_iter()
        .zip(starts)
        .map(|(b, x)| {
            let triple = core(reconstruct(&sol.field, &config.domain, b, 0, x))?;
            Ok(max_residual(&core(bdsde_residual(&triple, config, w, b, kappa))?))
        })
        .collect::<Result<_, RunError>>()?;
    Ok(Estimate::from_samples(&values))
}

fn residuals(prep: &Prepared) -> Result<Outcome, RunError> {
    let mut out = Outcome::new(0.0);
    let kappa = resolve_kappa(prep, &mut out)?;
    out.kappa = kappa;
    let n = prep.largest_n();
    let seed = prep.first_seed();
    let heat_doc = prep.run.problem.heat_version();
    let base = prep.build(&heat_doc)?;

    // BDSDE residual under (Δx, Δt) → (Δx/2, Δt/4) on the heat version.
    let finest = base.grid.steps() << 4;
    let noise = CoupledNoise::sample(&base, finest, RESIDUAL_PATHS, seed)?;
    let starts = sample_starts(&base.grid, RESIDUAL_PATHS, seed);
    let mut table = Table::new("bdsde_residual.csv", &["problem", "nodes", "steps", "dt", "mean_max_residual", "stderr"]);
    let mut dts = Vec::new();
    let mut means = Vec::new();
    for level in 0..3 {
        let cfg = prep.build(&refined(&heat_doc, level))?;
        check_size(&cfg.grid)?;
        let (w, bs) = noise.at(cfg.grid.steps())?;
        let sol = core(solve(&cfg, &w, n))?;
        let r = mean_residual(&cfg, &sol, &w, &bs, &starts, kappa)?;
        table.push(vec![
            "heat".into(),
            cfg.grid.nodes().to_string(),
            cfg.grid.steps().to_string(),
            num(cfg.dt()),
            num(r.mean),
            num(r.std_err),
        ]);
        dts.push(cfg.dt());
        means.push(r.mean);
    }
    out.checks.push(match fit_loglog(&dts, &means) {
        Ok(fit) => Check::new(
            "bdsde-residual-refinement",
            fit.slope >= MIN_REFINEMENT_SLOPE,
            format!(
                "mean max residual {} slope {:.3} in dt (need >= {MIN_REFINEMENT_SLOPE})",
                means.iter().map(|m| num(*m)).collect::<Vec<_>>().join(" -> "),
                fit.slope
            ),
        ),
        Err(_) => Check::new("bdsde-residual-refinement", false, "residual vanishes; nothing to fit"),
    });

    // Constant terminal inside D with f = g = h = 0: every term vanishes.
    let mut constant = base.clone();
    let zero = vec![0.0; base.k];
    constant.terminal = Arc::new(ConstantTerminal::new(base.d, zero));
    let (w, bs) = noise.at(base.grid.steps())?;
    let sol = core(solve(&constant, &w, n))?;
    let mut worst_constant = 0.0f64;
    for (b, x) in bs.iter().zip(&starts).take(10) {
        let triple = core(reconstruct(&sol.field, &constant.domain, b, 0, x))?;
        worst_constant = worst_constant.max(max_residual(&core(bdsde_residual(&triple, &constant, &w, b, kappa))?));
    }
    out.checks.push(Check::new(
        "bdsde-residual-constant",
        worst_constant == 0.0,
        format!("max residual {} for a constant terminal", num(worst_constant)),
    ));

    // The configured problem at its own grid, reported only.
    let config = &prep.problem;
    check_size(&config.grid)?;
    let w = core(w_path(config, seed))?;
    let sol = core(solve(config, &w, n))?;
    let own_b: Vec<BrownianPath> = (0..RESIDUAL_PATHS)
        .map(|p| core(BrownianPath::sample(config.horizon, config.grid.steps(), config.d, b_seed(seed, 0, p))))
        .collect::<Result<_, _>>()?;
    let r = mean_residual(config, &sol, &w, &own_b, &starts, kappa)?;
    table.push(vec![
        "configured".into(),
        config.grid.nodes().to_string(),
        config.grid.steps().to_string(),
        num(config.dt()),
        num(r.mean),
        num(r.std_err),
    ]);
    out.tables.push(table);

    // Skorokhod minimality, with the tolerance calibrated on the heat version.
    let heat_w = core(w_path(&base, seed))?;
    let heat_sol = core(solve(&base, &heat_w, n))?;
    let processes = test_processes(&config.domain, SKOROKHOD_PROCESSES, seed);
    let heat_max = pairings(&heat_sol, &base, &processes, seed)?.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let epsilon = SKOROKHOD_FACTOR * heat_max;
    let pairs = pairings(&sol, config, &processes, seed)?;
    let worst = pairs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut skorokhod = Table::new("skorokhod.csv", &["process", "max_pairing", "min_pairing"]);
    for (i, chunk) in pairs.chunks(SKOROKHOD_PATHS).enumerate() {
        let max = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = chunk.iter().copied().fold(f64::INFINITY, f64::min);
        skorokhod.push(vec![i.to_string(), num(max), num(min)]);
    }
    out.tables.push(skorokhod);
    out.checks.push(Check::new(
        "skorokhod-minimality",
        worst <= epsilon,
        format!(
            "largest pairing {} over {} processes x {} paths, tolerance {} (5x heat max {})",
            num(worst),
            processes.len(),
            SKOROKHOD_PATHS,
            num(epsilon),
            num(heat_max)
        ),
    ));

    // Weak and dual formulations at the configured problem, reported only.
    let phi = weak_test_function(config.d, config.k);
    let mut weak = Table::new("weak_form.csv", &["form", "residual", "scale", "relative"]);
    if phi.check_support(&config.grid).is_ok() {
        let b = &own_b[0];
        for (form, terms) in [
            ("weak", core(weak_residual(&sol.field, &sol.measure, config, &phi, &w, 0))?),
            (
                "dual_pathwise",
                core(dual_residual(&sol.field, &sol.measure, config, &phi, b, &w, 0, DualPairing::Pathwise))?,
            ),
            (
                "dual_decomposition",
                core(dual_residual(&sol.field, &sol.measure, config, &phi, b, &w, 0, DualPairing::Decomposition))?,
            ),
        ] {
            let scale = terms.scale();
            weak.push(vec![
                form.into(),
                num(terms.residual),
                num(scale),
                num(if scale > 0.0 { terms.residual.abs() / scale } else { 0.0 }),
            ]);
        }
        out.tables.push(weak);
    } else {
        out.notes.push("weak-form test function does not fit the torus; skipped".into());
    }

    // Random test function decomposition: RMS defect against Δt.
    let mut decomposition = Table::new("decomposition.csv", &["steps", "dt", "rms_defect"]);
    let mut dts = Vec::new();
    let mut rms = Vec::new();
    for steps in DECOMPOSITION_STEPS {
        let grid = core(GridSpec::new(config.d, config.grid.half_width(), config.grid.nodes(), steps))?;
        let sq: Vec<f64> = (0..DECOMPOSITION_PATHS)
            .into_par_iter()
            .map(|p| {
                let b = core(BrownianPath::sample(config.horizon, steps, config.d, derive_seed(seed, stream::B, p as u64)))?;
                let defect = core(decomposition_residual(&phi, &grid, &b, 0))?;
                Ok(defect * defect)
            })
            .collect::<Result<_, RunError>>()?;
        let value = (sq.iter().sum::<f64>() / sq.len() as f64).sqrt();
        let dt = config.horizon / steps as f64;
        decomposition.push(vec![steps.to_string(), num(dt), num(value)]);
        dts.push(dt);
        rms.push(value);
    }
    out.tables.push(decomposition);
    out.checks.push(match fit_loglog(&dts, &rms) {
        Ok(fit) => Check::new(
            "decomposition-rate",
            fit.slope >= DECOMPOSITION_WINDOW.0 && fit.slope <= DECOMPOSITION_WINDOW.1,
            format!(
                "RMS defect slope {:.3} in dt (window [{}, {}])",
                fit.slope, DECOMPOSITION_WINDOW.0, DECOMPOSITION_WINDOW.1
            ),
        ),
        Err(_) => Check::new("decomposition-rate", false, "defect vanishes; nothing to fit"),
    });

    // A priori moments along the configured run, reported only.
    let triples = core(ensemble_triples(&sol.field, &config.domain, prep.run.paths, seed, 0))?;
    let stats = core(apriori_stats(&triples, config))?;
    let mut apriori = Table::new("apriori.csv", &["statistic", "mean", "stderr", "ratio_to_data"]);
    let ratios = stats.ratios();
    for (i, (name, e)) in [
        ("sup_y2", stats.sup_y2),
        ("z2_integral", stats.z2_integral),
        ("k_variation", stats.k_variation),
        ("sup_y4", stats.sup_y4),
        ("z2_integral_squared", stats.z2_integral_squared),
    ]
    .into_iter()
    .enumerate()
    {
        apriori.push(vec![name.into(), num(e.mean), num(e.std_err), opt(ratios.map(|r| r[i]))]);
    }
    out.tables.push(apriori);
    Ok(out)
}

/// All pairings of `processes` against the first `SKOROKHOD_PATHS` triples,
/// process-major.
fn pairings(
    sol: &Solution,
    config: &ProblemConfig,
    processes: &[rspde_core::bdsde::TestProcess],
    seed: u64,
) -> Result<Vec<f64>, RunError> {
    let triples = core(ensemble_triples(&sol.field, &config.domain, SKOROKHOD_PATHS, seed, 0))?;
    processes
        .par_iter()
        .map(|v| {
            triples
                .iter()
                .map(|t| {
                    let values = core(v.sample(t, &config.domain))?;
                    core(skorokhod_pairing(t, &values, &config.domain))
                })
                .collect::<Result<Vec<f64>, RunError>>()
        })
        .collect::<Result<Vec<Vec<f64>>, RunError>>()
        .map(|v| v.concat())
}

fn weak_test_function(d: usize, k: usize) -> TestFunction {
    let direction = (0..k).map(|i| if i % 2 == 0 { 0.7 } else { -0.5 }).collect();
    TestFunction::new(vec![0.2; d], 1.5, 4, 1.0, vec![0.3; d], vec![1.0, -0.4], direction).expect("valid test function")
}

fn duality(prep: &Prepared) -> Result<Outcome, RunError> {
    let config = &prep.problem;
    check_size(&config.grid)?;
    let mut out = Outcome::new(prep.run.kappa.unwrap_or(DEFAULT_KAPPA));
    let n = prep.largest_n();
    let seed = prep.first_seed();
    let settings = duality_settings(prep).unwrap_or_else(|| DualitySettings::standard(config.d, 4, 10_000));
    let w = core(w_path(config, seed))?;
    let (first, second) = rayon::join(|| solve(config, &w, n), || solve(config, &w, n));
    let (first, second) = (core(first)?, core(second)?);
    let identical = first.field.values() == second.field.values() && first.measure.density() == second.measure.density();
    out.checks.push(Check::new(
        "resolve-identical",
        identical,
        format!("two solves at n = {n} with the same W path"),
    ));
    let results: Vec<DualityResult> = [0u64, 1]
        .par_iter()
        .map(|e| core(duality_check(&first.field, &first.measure, &config.domain, &settings, seed, *e)))
        .collect::<Result<_, RunError>>()?;
    let mut table = Table::new("duality.csv", &["ensemble", "component", "gap", "stderr", "b_paths", "x_samples"]);
    for (e, r) in results.iter().enumerate() {
        for (i, g) in r.component_gap.iter().enumerate() {
            table.push(vec![
                e.to_string(),
                i.to_string(),
                num(g.mean),
                num(g.std_err),
                settings.b_paths.to_string(),
                settings.x_samples.to_string(),
            ]);
        }
    }
    out.tables.push(table);
    let worst = results.iter().map(|r| r.gap.mean).fold(0.0, f64::max);
    out.checks.push(Check::new(
        "duality",
        worst <= DUALITY_BOUND,
        format!(
            "largest relative gap {} with {} x-samples per B path (need <= {DUALITY_BOUND}){}",
            num(worst),
            settings.x_samples,
            if results.iter().all(|r| r.degenerate) { ", zero-mass measure" } else { "" }
        ),
    ));
    let (a, b) = (results[0].gap, results[1].gap);
    let sigma = (a.std_err * a.std_err + b.std_err * b.std_err).sqrt();
    let diff = (a.mean - b.mean).abs();
    out.checks.push(Check::new(
        "duality-ensembles",
        diff <= 3.0 * sigma,
        format!("gaps {} and {} differ by {} (3 sigma = {})", num(a.mean), num(b.mean), num(diff), num(3.0 * sigma)),
    ));
    Ok(out)
}

fn calibrate_star(prep: &Prepared) -> Result<Outcome, RunError> {
    let d = prep.problem.d;
    let field = core(BumpField::new(vec![1.0; d], vec![0.0; d], 1.5))?;
    let mut out = Outcome::new(0.0);
    let cal = match calibrate_star_convention(
        &field,
        &vec![0.0; d],
        prep.problem.horizon,
        &STAR_STEPS,
        STAR_PATHS,
        prep.first_seed(),
    ) {
        Ok(c) => c,
        Err(Error::Calibration(msg)) => {
            out.kappa = prep.run.kappa.unwrap_or(DEFAULT_KAPPA);
            out.checks.push(Check::new("star-calibration", false, msg));
            return Ok(out);
        }
        Err(e) => return Err(RunError::from_core(e)),
    };
    out.kappa = cal.kappa;
    let mut table = Table::new("star_calibration.csv", &["kappa", "steps", "dt", "mean_deviation", "stderr", "selected"]);
    for level in &cal.levels {
        table.push(vec![
            num(level.kappa),
            level.steps.to_string(),
            num(level.dt),
            num(level.residual.mean),
            num(level.residual.std_err),
            (level.kappa == cal.kappa).to_string(),
        ]);
    }
    out.tables.push(table);
    let slope = cal.slope_for(cal.kappa).unwrap_or(f64::NAN);
    out.checks.push(Check::new(
        "star-calibration",
        slope >= MIN_REFINEMENT_SLOPE,
        format!(
            "kappa {} selected, slope {slope:.3} (others: {})",
            num(cal.kappa),
            cal.slopes
                .iter()
                .filter(|s| s.0 != cal.kappa)
                .map(|s| format!("kappa {} slope {:.3}", num(s.0), s.1))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    ));
    let chosen: Vec<_> = cal.levels_for(cal.kappa).collect();
    let (coarse, fine) = (&chosen[0].residual, &chosen[chosen.len() - 1].residual);
    let sigma = (coarse.std_err * coarse.std_err + fine.std_err * fine.std_err).sqrt();
    out.checks.push(Check::new(
        "star-decrease-3sigma",
        coarse.mean - fine.mean > 3.0 * sigma,
        format!(
            "deviation {} -> {} over {} paths (3 sigma = {})",
            num(coarse.mean),
            num(fine.mean),
            STAR_PATHS,
            num(3.0 * sigma)
        ),
    ));
    out.notes.push(format!("identity scale mean |2 int div L dr| = {}", num(cal.target_scale)));
    Ok(out)
}
