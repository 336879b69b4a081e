//! One function per subcommand. Each returns the tables and checks it
//! produced; nothing here writes files.

use std::sync::Arc;

use anyhow::{bail, Context};
use rayon::prelude::*;

use favsite::analysis::{
    barrier_sum, favorite_frequency, find_umin, lowest_u, martingale_mean, martingale_step, far_favorite_diagnostic,
    sigma2, surviving_tree, local_time_convergence, BarrierLimits, FrequencyConfig, FarFavoriteConfig, ConvergenceConfig,
    UminConfig, DEFAULT_DEPTH,
};
use favsite::env::{DisplacementLaw, MarkedTree, VertexId, ROOT};
use favsite::excursion::{excursion_row, law_equivalence, path_stats, tail_bound_check, tail_bound_grid, EXCURSION_COLUMNS};
use favsite::fmt17;
use favsite::io::Table;
use favsite::rng::stream_seed;
use favsite::spine::{drawdown_sum, many_to_one_multi, persistence_curve, GFunctional, TiltedStepLaw, DEFAULT_STEP_CAP};
use favsite::stats::std_normal_cdf;
use favsite::walk::TrajectoryRow;

use crate::config::RunConfig;
use crate::output::{Check, Outcome};

const ARENA_SOFT_CAP: usize = 1 << 22;
const DRAWDOWN_LAMBDAS: [f64; 4] = [5.0, 10.0, 20.0, 40.0];
const DRAWDOWN_B: f64 = 0.05;
const PERSISTENCE_KS: [usize; 9] = [100, 178, 316, 562, 1000, 1778, 3162, 5623, 10_000];

fn law(cfg: &RunConfig) -> anyhow::Result<Arc<DisplacementLaw>> {
    Ok(Arc::new(cfg.law()?))
}

fn umin_config(cfg: &RunConfig) -> UminConfig {
    UminConfig { lambda_cap: cfg.lambda_cap, v_margin: cfg.v_margin, ..UminConfig::default() }
}

fn b(x: bool) -> String {
    x.to_string()
}

pub fn calibrate(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let law = cfg.law()?;
    let r = &law.report;
    let s2 = sigma2(&law);
    let mut t = Table::new(
        "calibration",
        1,
        &["family", "params", "mean_offspring", "residual_mass", "residual_mean", "sigma2", "delta_certificate", "scale", "shift"],
    );
    let params = law.params.iter().map(|p| fmt17(*p)).collect::<Vec<_>>().join(";");
    t.push(vec![
        law.family.name().to_string(),
        params,
        fmt17(r.mean_offspring),
        fmt17(r.residual_mass),
        fmt17(r.residual_mean),
        fmt17(s2),
        fmt17(r.delta_certificate),
        fmt17(r.scale),
        fmt17(r.shift),
    ]);
    let doc = toml::to_string(&law.document()).context("serializing the law document")?;
    Ok(Outcome {
        tables: vec![t],
        checks: vec![
            Check::new("residual_mass", r.residual_mass.abs(), 1e-10, r.residual_mass.abs() <= 1e-10, ""),
            Check::new("residual_mean", r.residual_mean.abs(), 1e-10, r.residual_mean.abs() <= 1e-10, ""),
            Check::new("sigma2_positive", s2, 0.0, s2 > 0.0 && s2.is_finite(), ""),
        ],
        files: vec![(format!("law_{}.toml", law.family.name()), doc)],
    })
}

fn trajectory_table(rows: &[TrajectoryRow]) -> Table {
    let mut t = Table::new(TrajectoryRow::SCHEMA, TrajectoryRow::VERSION, &TrajectoryRow::COLUMNS);
    for r in rows {
        t.push(r.fields());
    }
    t
}

pub fn simulate(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let law = law(cfg)?;
    let c = FrequencyConfig {
        n_grid: cfg.n_grid.clone(),
        replicas: cfg.replicas as usize,
        survival_depth: DEFAULT_DEPTH,
        gamma: cfg.gamma,
        umin: umin_config(cfg),
    };
    let rep = favorite_frequency(&law, cfg.master_seed, &c)?;
    Ok(Outcome {
        tables: vec![trajectory_table(&rep.trajectories)],
        checks: vec![Check::new("favorites_audit", f64::from(u8::from(rep.audit_ok)), 1.0, rep.audit_ok, "argmax re-scan at every recorded time")],
        files: Vec::new(),
    })
}

/// The `k` lowest-`U` vertices other than the root.
fn fixture_vertices(tree: &mut MarkedTree, k: usize, umin: &UminConfig) -> anyhow::Result<Vec<VertexId>> {
    let low = lowest_u(tree, k + 1, umin)?;
    Ok(low.vertices.iter().map(|v| v.0).filter(|&x| x != ROOT).take(k).collect())
}

pub fn excursions(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let law = law(cfg)?;
    let mut out = Outcome::default();
    if cfg.wants("ks") {
        let (mut tree, _) = surviving_tree(&law, cfg.master_seed, 0, "excursions", DEFAULT_DEPTH, cfg.arena_cap)?;
        let targets = fixture_vertices(&mut tree, cfg.vertex_budget, &umin_config(cfg))?;
        let mut stats = Table::new("excursion", 1, &EXCURSION_COLUMNS);
        for &x in &targets {
            stats.push(excursion_row(&path_stats(&mut tree, x)?));
        }
        let mut ks = Table::new(
            "excursion_ks",
            1,
            &["vertex", "depth", "U", "a", "p", "m", "replicas", "mean_step", "mean_fast", "expected", "ks_statistic", "p_value"],
        );
        let soft_cap = (tree.len() * 4).max(ARENA_SOFT_CAP);
        for &m in &cfg.m_grid {
            let rows = law_equivalence(&mut tree, &targets, m, cfg.replicas as usize, stream_seed(cfg.master_seed, m, "excursions"), soft_cap)?;
            for r in rows {
                ks.push(vec![
                    r.vertex.to_string(),
                    r.depth.to_string(),
                    fmt17(r.u),
                    fmt17(r.a),
                    fmt17(r.p),
                    m.to_string(),
                    r.replicas.to_string(),
                    fmt17(r.mean_step),
                    fmt17(r.mean_fast),
                    fmt17(r.expected),
                    fmt17(r.ks.statistic),
                    fmt17(r.ks.p_value),
                ]);
                out.checks.push(Check::new(
                    format!("ks_vertex_{}_m_{m}", r.vertex),
                    r.ks.p_value,
                    0.01,
                    r.ks.p_value >= 0.01,
                    "two-sample KS, step simulation vs closed-form law",
                ));
            }
        }
        out.tables.push(stats);
        out.tables.push(ks);
    }
    if cfg.wants("tail-bound") {
        let mut t = Table::new("tail_bound", 1, &["a", "p", "eps", "n", "level", "bound", "probability", "se", "pass"]);
        let mut worst: f64 = f64::NEG_INFINITY;
        let mut all = true;
        for (i, (a, p, eps, n)) in tail_bound_grid().into_iter().enumerate() {
            let c = tail_bound_check(a, p, eps, n, cfg.samples, stream_seed(cfg.master_seed, i as u64, "tail-bound"))?;
            let pass = c.pass(4.0);
            all &= pass;
            worst = worst.max((c.probability - c.bound.bound) / c.se.max(f64::MIN_POSITIVE));
            t.push(vec![fmt17(a), fmt17(p), fmt17(eps), n.to_string(), c.bound.level.to_string(), fmt17(c.bound.bound), fmt17(c.probability), fmt17(c.se), b(pass)]);
        }
        out.tables.push(t);
        out.checks.push(Check::new("tail_bound", worst, 4.0, all, "max (probability - bound) / se over the grid"));
    }
    Ok(out)
}

/// One-sided p-values for an increase between consecutive estimates.
fn increase_p_values(values: &[(f64, f64)]) -> Vec<f64> {
    values
        .windows(2)
        .map(|w| {
            let se = w[0].1.hypot(w[1].1);
            if se == 0.0 {
                if w[1].0 > w[0].0 {
                    0.0
                } else {
                    1.0
                }
            } else {
                1.0 - std_normal_cdf((w[1].0 - w[0].0) / se)
            }
        })
        .collect()
}

pub fn spine_check(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let law = law(cfg)?;
    let tilted = TiltedStepLaw::new(&law)?;
    let seed = cfg.master_seed;
    let mut out = Outcome::default();
    if cfg.wants("many-to-one") {
        let gs: Vec<GFunctional> = GFunctional::ALL.into_iter().filter(|g| g.check_bounded(&law).is_ok()).collect();
        let mut t = Table::new("many_to_one", 1, &["g", "n", "lhs", "lhs_se", "rhs", "rhs_se", "analytic", "z", "pass"]);
        let mut all = true;
        let mut worst: f64 = 0.0;
        for n in 1..=3 {
            for r in many_to_one_multi(&law, n, &gs, cfg.samples, seed, 1)? {
                let pass = r.pass(4.0);
                all &= pass;
                worst = worst.max(r.z());
                t.push(vec![
                    r.g.name().into(),
                    n.to_string(),
                    fmt17(r.lhs),
                    fmt17(r.lhs_se),
                    fmt17(r.rhs),
                    fmt17(r.rhs_se),
                    r.analytic.map_or("nan".into(), fmt17),
                    fmt17(r.z()),
                    b(pass),
                ]);
            }
        }
        out.tables.push(t);
        out.checks.push(Check::new("many_to_one", worst, 4.0, all, "max |lhs - rhs| / combined se"));
    }
    if cfg.wants("martingale") {
        let m = martingale_mean(&law, 5, cfg.samples, seed)?;
        let z = m.mean().abs() / m.se().max(f64::MIN_POSITIVE);
        out.checks.push(Check::new("martingale_mean_d5", z, 4.0, z <= 4.0, format!("mean {} se {}", m.mean(), m.se())));
        let mut t = Table::new("martingale_step", 1, &["tree_seed", "n", "d_n", "resampled_mean", "resampled_se", "z"]);
        let mut worst: f64 = 0.0;
        for i in 0..5u64 {
            let tseed = stream_seed(seed, i, "martingale-step/env");
            let mut tree = MarkedTree::new(law.clone(), tseed);
            let (d, next) = martingale_step(&mut tree, 5, 10_000, stream_seed(seed, i, "martingale-step"))?;
            let diff = (next.mean() - d).abs();
            let z = if diff == 0.0 { 0.0 } else { diff / next.se() };
            worst = worst.max(z);
            t.push(vec![tseed.to_string(), "5".into(), fmt17(d), fmt17(next.mean()), fmt17(next.se()), fmt17(z)]);
        }
        out.tables.push(t);
        out.checks.push(Check::new("martingale_step", worst, 4.0, worst <= 4.0, "resampled D_6 against D_5"));
    }
    if cfg.wants("persistence") {
        let (points, slope, slope_se) = persistence_curve(&tilted, 1.0, &PERSISTENCE_KS, cfg.samples, seed)?;
        let mut t = Table::new("persistence", 1, &["k", "probability", "se"]);
        for p in &points {
            t.push(vec![p.k.to_string(), fmt17(p.p), fmt17(p.se)]);
        }
        out.tables.push(t);
        let pass = (slope + 0.5).abs() <= 0.1;
        out.checks.push(Check::new("persistence_slope", slope, -0.5, pass, format!("tolerance 0.1, slope se {slope_se}")));
    }
    if cfg.wants("drawdown") {
        let s2 = tilted.variance();
        let mut t = Table::new("drawdown", 1, &["lambda", "b", "mean", "se", "trials", "truncated", "brownian"]);
        let mut values = Vec::new();
        for &lambda in &DRAWDOWN_LAMBDAS {
            let e = drawdown_sum(&tilted, DRAWDOWN_B, lambda, cfg.samples, DEFAULT_STEP_CAP, seed)?;
            let bl = DRAWDOWN_B * lambda;
            let brownian = 2.0 / (s2 * DRAWDOWN_B * DRAWDOWN_B) * (1.0 - (1.0 + bl) * (-bl).exp());
            t.push(vec![fmt17(lambda), fmt17(DRAWDOWN_B), fmt17(e.mean), fmt17(e.se), e.trials.to_string(), e.truncated.to_string(), fmt17(brownian)]);
            values.push((e.mean, e.se));
        }
        out.tables.push(t);
        let ps = increase_p_values(&values);
        let min_p = ps.iter().copied().fold(1.0, f64::min);
        out.checks.push(Check::new("drawdown_no_growth", min_p, 0.05, min_p >= 0.05, "smallest one-sided p-value for an increase between consecutive lambda"));
    }
    Ok(out)
}

pub fn umin(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let law = law(cfg)?;
    let ucfg = umin_config(cfg);
    let results: Vec<anyhow::Result<Vec<String>>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let (mut tree, _) = surviving_tree(&law, cfg.master_seed, r, "umin", DEFAULT_DEPTH, cfg.arena_cap)?;
            let u = find_umin(&mut tree, &ucfg)?;
            let depths = u.minimizers.iter().map(|&x| tree.get(x).depth.to_string()).collect::<Vec<_>>().join(";");
            Ok(vec![
                r.to_string(),
                tree.seed().to_string(),
                fmt17(u.min_value),
                u.minimizers.len().to_string(),
                depths,
                fmt17(u.frontier_bound),
                fmt17(u.lambda_cap),
                b(u.certified),
                u.expansions.to_string(),
            ])
        })
        .collect();
    let mut t = Table::new(
        "umin",
        1,
        &["replica", "tree_seed", "min_value", "n_minimizers", "minimizer_depths", "frontier_bound", "lambda_cap", "certified", "expansions"],
    );
    let mut certified = 0u64;
    for r in results {
        let row = r?;
        certified += u64::from(row[7] == "true");
        t.push(row);
    }
    let frac = certified as f64 / cfg.replicas as f64;
    Ok(Outcome {
        tables: vec![t],
        checks: vec![Check::new("umin_certified_fraction", frac, 0.0, true, "informational")],
        files: Vec::new(),
    })
}

pub fn theorem21(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let law = law(cfg)?;
    let c = ConvergenceConfig {
        n_grid: cfg.n_grid.clone(),
        vertex_budget: cfg.vertex_budget,
        walk_replicas: cfg.replicas as usize,
        excursions: *cfg.m_grid.last().expect("validated"),
        umin: umin_config(cfg),
        ..ConvergenceConfig::default()
    };
    let r = local_time_convergence(&law, cfg.master_seed, &c)?;
    let mut rows = Table::new("theorem21", 1, &["vertex", "depth", "U", "n", "measured", "predicted", "ratio", "d_inf", "sigma2"]);
    for row in &r.rows {
        rows.push(vec![
            row.vertex.to_string(),
            row.depth.to_string(),
            fmt17(row.u),
            row.n.to_string(),
            fmt17(row.measured),
            fmt17(row.predicted),
            fmt17(row.ratio),
            fmt17(r.dinf.value),
            fmt17(r.sigma2),
        ]);
    }
    let mut ex = Table::new("theorem21_excursions", 1, &["vertex", "depth", "U", "excursions", "mean", "se", "expected", "z"]);
    let mut out = Outcome::default();
    for e in &r.excursions {
        ex.push(vec![e.vertex.to_string(), e.depth.to_string(), fmt17(e.u), e.excursions.to_string(), fmt17(e.mean), fmt17(e.se), fmt17(e.expected), fmt17(e.z)]);
        out.checks.push(Check::new(format!("excursion_mean_vertex_{}", e.vertex), e.z, 4.0, e.pass(4.0), "mean local time per excursion vs exp(-(U(x)-U(root)))"));
    }
    out.checks.push(Check::new("dinf_stability", r.dinf.max_rel_change, favsite::analysis::STABILITY_TOL, true, "informational"));
    out.tables.push(rows);
    out.tables.push(ex);
    Ok(out)
}

pub fn corollary22(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let law = law(cfg)?;
    let c = FrequencyConfig {
        n_grid: cfg.n_grid.clone(),
        replicas: cfg.replicas as usize,
        survival_depth: DEFAULT_DEPTH,
        gamma: cfg.gamma,
        umin: umin_config(cfg),
    };
    let rep = favorite_frequency(&law, cfg.master_seed, &c)?;
    let mut t = Table::new("corollary22", 1, &["n", "hits", "certified", "excluded", "frequency", "ci_low", "ci_high"]);
    for r in &rep.rows {
        t.push(vec![r.n.to_string(), r.hits.to_string(), r.certified.to_string(), rep.excluded.to_string(), fmt17(r.frequency), fmt17(r.ci_low), fmt17(r.ci_high)]);
    }
    let pass = rep.p_value < 0.01;
    Ok(Outcome {
        tables: vec![t, trajectory_table(&rep.trajectories)],
        checks: vec![
            Check::new("favorites_audit", f64::from(u8::from(rep.audit_ok)), 1.0, rep.audit_ok, "argmax re-scan at every recorded time"),
            Check::new(
                "frequency_increase",
                rep.p_value,
                0.01,
                pass,
                format!("paired one-sided test, improved {} worsened {}", rep.improved, rep.worsened),
            ),
        ],
        files: Vec::new(),
    })
}

pub fn prop23(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let law = law(cfg)?;
    let c = FarFavoriteConfig {
        eps_grid: cfg.eps_grid.clone(),
        n_grid: cfg.n_grid.clone(),
        replicas: cfg.replicas as usize,
        gamma: cfg.gamma,
        survival_depth: DEFAULT_DEPTH,
    };
    let rep = far_favorite_diagnostic(&law, cfg.master_seed, &c)?;
    let label = |e: Option<f64>| e.map_or("barrier".to_string(), fmt17);
    let mut t = Table::new("prop23", 1, &["event", "n", "threshold", "events", "replicas", "probability", "se"]);
    for r in &rep.rows {
        t.push(vec![label(r.eps), r.n.to_string(), fmt17(r.threshold), r.events.to_string(), r.replicas.to_string(), fmt17(r.probability), fmt17(r.se)]);
    }
    let mut tr = Table::new("prop23_trend", 1, &["event", "n_from", "n_to", "p_value"]);
    for s in &rep.trend {
        tr.push(vec![label(s.eps), s.n_from.to_string(), s.n_to.to_string(), fmt17(s.p_value)]);
    }
    let mut checks = Vec::new();
    for e in cfg.eps_grid.iter().map(|&e| Some(e)).chain([None]) {
        let min_p = rep.trend.iter().filter(|s| s.eps == e).map(|s| s.p_value).fold(1.0, f64::min);
        checks.push(Check::new(format!("nonincreasing_{}", e.map_or("barrier".to_string(), |x| x.to_string())), min_p, 0.05, rep.nonincreasing(e, 0.05), "smallest one-sided p-value for an increase"));
    }
    Ok(Outcome { tables: vec![t, tr], checks, files: Vec::new() })
}

pub fn barrier(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let law = law(cfg)?;
    if cfg.gamma >= 2.0 {
        bail!("barrier sums need gamma < 2");
    }
    let limits = BarrierLimits::default();
    let results: Vec<anyhow::Result<Vec<Vec<String>>>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let (mut tree, _) = surviving_tree(&law, cfg.master_seed, r, "barrier", DEFAULT_DEPTH, cfg.arena_cap)?;
            let mut rows = Vec::new();
            for &n in &cfg.n_grid {
                let a = barrier_sum(&mut tree, n, cfg.gamma, &limits)?;
                let b2 = barrier_sum(&mut tree, 2 * n, cfg.gamma, &limits)?;
                rows.push(vec![
                    r.to_string(),
                    tree.seed().to_string(),
                    n.to_string(),
                    fmt17(cfg.gamma),
                    fmt17(a.value),
                    fmt17(b2.value),
                    fmt17((b2.value - a.value) / a.value),
                    a.vertices.to_string(),
                    a.cut.to_string(),
                    fmt17(a.cut_mass),
                    b(a.truncated || b2.truncated),
                ]);
            }
            Ok(rows)
        })
        .collect();
    let mut t = Table::new(
        "barrier",
        1,
        &["replica", "tree_seed", "n", "gamma", "value", "value_2n", "relative_change", "vertices", "cut", "cut_mass", "truncated"],
    );
    let mut truncated = 0u64;
    for r in results {
        for row in r? {
            truncated += u64::from(row[10] == "true");
            t.push(row);
        }
    }
    Ok(Outcome {
        tables: vec![t],
        checks: vec![Check::new("barrier_truncated_rows", truncated as f64, 0.0, true, "informational")],
        files: Vec::new(),
    })
}

/// Every table the report renderer reads, from one configuration.
pub fn report_data(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let mut out = calibrate(cfg)?;
    out.merge(theorem21(cfg)?);
    out.merge(corollary22(cfg)?);
    out.merge(prop23(cfg)?);
    out.merge(barrier(cfg)?);
    Ok(out)
}
