use serde::{Deserialize, Serialize};

use super::{f_at, par_map, require_bias, Estimate, RunSpec};
use crate::error::{invalid, LabError, Result};
use crate::exact::periodic_stationary;
use crate::lattice::{BiasSpec, Environment, Move, Site, MAX_MOVES};
use crate::regen::{default_lookahead, detect_approx_regenerations, inter_regen_summary, HyperplaneGrid};
use crate::stats::{combined_se, ess_fraction, ratio_one_dependent, weighted_line_fit, weighted_mean, MeanVar};
use crate::walk::{log_normalizer_ratio, run_walk, untilted_moments, LocalFunction, Walker};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "route")]
pub enum SteadyRoute {
    Timeavg,
    Regen,
    TorusOracle { period: usize },
}

/// Q_lambda f by one of three routes.
pub fn estimate_steady_state(spec: &RunSpec, f: &LocalFunction, route: SteadyRoute) -> Result<Estimate> {
    if let LocalFunction::Constant { value } = f {
        return Ok(Estimate::scalar(
            "steady_constant",
            *value,
            0.0,
            spec.replicas,
            spec.hash("steady_constant"),
        ));
    }
    match route {
        SteadyRoute::Timeavg => Ok(steady_timeavg(spec, f)),
        SteadyRoute::Regen => steady_regen(spec, f),
        SteadyRoute::TorusOracle { period } => steady_torus_oracle(spec, f, period),
    }
}

fn time_average<E: Environment + ?Sized>(env: &E, bias: &BiasSpec, f: &LocalFunction, horizon: usize, rng: &mut impl rand::RngCore) -> f64 {
    let origin = Site::origin(env.dim()).expect("validated dimension");
    let mut w = Walker::new(env, bias, &origin);
    let burn = horizon / 10;
    for _ in 0..burn {
        w.step(rng);
    }
    let mut sum = 0.0;
    for _ in burn..horizon {
        sum += f_at(&mut w, env, f);
        w.step(rng);
    }
    sum / (horizon - burn) as f64
}

/// Time average over [n/10, n); at lambda = 0 replicas are Q_0-reweighted.
fn steady_timeavg(spec: &RunSpec, f: &LocalFunction) -> Estimate {
    let horizon = spec.horizon.max(10);
    let runs = par_map(spec.replicas, |r| {
        let env = spec.env("steady", r);
        let mut rng = spec.stream("steady", r).rng();
        let origin = Site::origin(spec.dim()).expect("validated dimension");
        let weight = if spec.bias.lambda == 0.0 {
            env.q0_density(&origin)
        } else {
            1.0
        };
        (time_average(&env, &spec.bias, f, horizon, &mut rng), weight)
    });
    let xs: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let ws: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let (m, se) = weighted_mean(&xs, &ws);
    Estimate::scalar("steady_timeavg", m, se, spec.replicas, spec.hash("steady_timeavg"))
}

fn steady_regen(spec: &RunSpec, f: &LocalFunction) -> Result<Estimate> {
    require_bias(&spec.bias, "regeneration steady state")?;
    let grid = HyperplaneGrid::new(&spec.bias)?;
    let lookahead = default_lookahead(&spec.bias)?;
    let blocks = par_map(spec.replicas, |r| -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let env = spec.env("steady", r);
        let origin = Site::origin(spec.dim())?;
        let path = run_walk(&env, &spec.bias, &origin, spec.horizon, &spec.stream("steady", r));
        let rec = detect_approx_regenerations(&path, &grid, lookahead)?;
        match inter_regen_summary(&rec, &path, &env, Some(f)) {
            Ok(s) => Ok(Some((s.fsum, s.dtau))),
            Err(LabError::TooFewBlocks { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let (mut num, mut den) = (Vec::new(), Vec::new());
    let mut skipped = 0;
    for b in blocks {
        match b? {
            Some((fs, dt)) => {
                num.extend(fs);
                den.extend(dt);
            }
            None => skipped += 1,
        }
    }
    if num.len() < 2 {
        return Err(LabError::NoRegeneration);
    }
    let (r, se) = ratio_one_dependent(&num, &den);
    Ok(Estimate::scalar("steady_regen", r, se, spec.replicas, spec.hash("steady_regen"))
        .with_note(format!("{} blocks; {skipped} replicas with < 2 blocks", num.len())))
}

/// sum_x pi(x) f(theta_x omega) for the periodic environment of replica r.
fn torus_exact(spec: &RunSpec, f: &LocalFunction, period: usize, r: u64) -> Result<(crate::lattice::PeriodicEnvironment, f64)> {
    let penv = spec.env("torus", r).sample_periodic(period)?;
    let sol = periodic_stationary(&penv, &spec.bias)?;
    let value = sol.expect(|i| {
        let site = Site::from_raw(penv.site_coords(i), penv.dim());
        f.evaluate(&penv, &site)
    });
    Ok((penv, value))
}

fn steady_torus_oracle(spec: &RunSpec, f: &LocalFunction, period: usize) -> Result<Estimate> {
    let vals = par_map(spec.replicas, |r| torus_exact(spec, f, period, r).map(|x| x.1));
    let vals: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    let acc = MeanVar::from_slice(&vals);
    Ok(Estimate::scalar(
        "steady_torus_oracle",
        acc.mean(),
        acc.stderr(),
        spec.replicas,
        spec.hash("steady_torus_oracle"),
    ))
}

/// Time averages on sampled periodic environments next to their exact
/// stationary values. Returns (timeavg, oracle, paired difference).
pub fn torus_route_comparison(spec: &RunSpec, f: &LocalFunction, period: usize) -> Result<(Estimate, Estimate, Estimate)> {
    let horizon = spec.horizon.max(10);
    let runs = par_map(spec.replicas, |r| -> Result<(f64, f64)> {
        let (penv, exact) = torus_exact(spec, f, period, r)?;
        let mut rng = spec.stream("torus-walk", r).rng();
        Ok((time_average(&penv, &spec.bias, f, horizon, &mut rng), exact))
    });
    let runs: Vec<(f64, f64)> = runs.into_iter().collect::<Result<_>>()?;
    let ta = MeanVar::from_slice(&runs.iter().map(|r| r.0).collect::<Vec<_>>());
    let ex = MeanVar::from_slice(&runs.iter().map(|r| r.1).collect::<Vec<_>>());
    let diff = MeanVar::from_slice(&runs.iter().map(|r| r.0 - r.1).collect::<Vec<_>>());
    let n = spec.replicas;
    Ok((
        Estimate::scalar("torus_timeavg", ta.mean(), ta.stderr(), n, spec.hash("torus_timeavg")),
        Estimate::scalar("steady_torus_oracle", ex.mean(), ex.stderr(), n, spec.hash("steady_torus_oracle")),
        Estimate::scalar("torus_paired_difference", diff.mean(), diff.stderr(), n, spec.hash("torus_diff")),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "route")]
pub enum LambdaFRoute {
    CltCov,
    Girsanov { t: f64 },
}

struct UnperturbedRun {
    /// lambda * sum_{k<n} f(omega_k)
    a: f64,
    /// M_n along ell
    m: f64,
    log_g: f64,
    weight: f64,
}

fn unperturbed_run(spec: &RunSpec, f: &LocalFunction, tilted: &BiasSpec, n: usize, r: u64) -> UnperturbedRun {
    let env = spec.env("lambda_f", r);
    let mut rng = spec.stream("lambda_f", r).rng();
    let d = spec.dim();
    let origin = Site::origin(d).expect("validated dimension");
    let flat = spec.bias.with_lambda(0.0).expect("zero tilt is valid");
    let ell = flat.ell().to_vec();
    let tilt = tilted.tilt_factors();
    let lambda = tilted.lambda;
    let weight = env.q0_density(&origin);
    let mut w = Walker::new(&env, &flat, &origin);
    let (mut fsum, mut m, mut log_g) = (0.0, 0.0, 0.0);
    let mut inc = [0.0; MAX_MOVES];
    for _ in 0..n {
        inc[..2 * d].copy_from_slice(w.incident());
        fsum += f.eval_with(&env, w.position(), &inc[..2 * d]);
        let (drift, _) = untilted_moments(&inc[..2 * d], &ell);
        let norm = log_normalizer_ratio(&inc[..2 * d], &tilt[..2 * d]);
        let mv = Move(w.step(&mut rng));
        let e = mv.dot(&ell);
        m += e - drift;
        log_g += lambda * e - norm;
    }
    UnperturbedRun {
        a: lambda * fsum,
        m,
        log_g,
        weight,
    }
}

/// Lambda f from unperturbed runs of length t / lambda^2, Q_0-reweighted.
/// `f` should be centered under Q_0. The clt_cov route returns
/// Cov(A, lambda M_n) / t with A = lambda sum f(omega_k); the Girsanov
/// route returns E[A G(lambda, n)] / t.
pub fn estimate_lambda_f(spec: &RunSpec, f: &LocalFunction, route: LambdaFRoute) -> Result<Estimate> {
    require_bias(&spec.bias, "lambda f")?;
    let lambda = spec.bias.lambda;
    let t = match route {
        LambdaFRoute::CltCov => 1.0,
        LambdaFRoute::Girsanov { t } => t,
    };
    if !(t > 0.0) {
        return Err(invalid("t", "must be positive"));
    }
    let n = ((t / (lambda * lambda)).round() as usize).max(1);
    let tilted = spec.bias;
    let runs = par_map(spec.replicas, |r| unperturbed_run(spec, f, &tilted, n, r));
    match route {
        LambdaFRoute::CltCov => Ok(clt_from_runs(spec, &runs, lambda, t, n)),
        LambdaFRoute::Girsanov { .. } => girsanov_from_runs(spec, &runs, lambda, t, n),
    }
}

fn girsanov_from_runs(spec: &RunSpec, runs: &[UnperturbedRun], lambda: f64, t: f64, n: usize) -> Result<Estimate> {
    let ws: Vec<f64> = runs.iter().map(|r| r.weight).collect();
    let g: Vec<f64> = runs.iter().map(|r| r.log_g.exp()).collect();
    let combined: Vec<f64> = g.iter().zip(&ws).map(|(g, w)| g * w).collect();
    let ess = ess_fraction(&combined);
    if ess < 0.05 {
        return Err(LabError::WeightDegeneracy { fraction: ess });
    }
    let (g_mean, g_se) = weighted_mean(&g, &ws);
    let vals: Vec<f64> = runs.iter().zip(&g).map(|(r, g)| r.a * g / t).collect();
    let (v, se) = weighted_mean(&vals, &ws);
    let hash = spec.with_horizon(n).hash("lambda_f_girsanov");
    Ok(Estimate::scalar("lambda_f_girsanov", v, se, spec.replicas, hash)
        .with_note(format!("lambda {lambda}, t {t}, n {n}, mean weight {g_mean:.6} +- {g_se:.2e}, ess {ess:.3}")))
}

/// clt_cov estimates across a lambda grid and their linear extrapolation
/// to lambda = 0 (the intercept of a weighted line fit in lambda).
pub fn lambda_f_extrapolated(spec: &RunSpec, f: &LocalFunction, lambdas: &[f64]) -> Result<(Vec<Estimate>, Estimate)> {
    if lambdas.is_empty() {
        return Err(invalid("lambda", "empty grid"));
    }
    let per: Vec<Estimate> = lambdas
        .iter()
        .map(|&l| estimate_lambda_f(&spec.with_lambda(l)?, f, LambdaFRoute::CltCov))
        .collect::<Result<_>>()?;
    if per.len() == 1 || per.iter().all(|e| e.se() == 0.0) {
        let e = per[0].clone();
        return Ok((per, Estimate { estimator_id: "lambda_f_clt_cov_extrapolated".into(), ..e }));
    }
    let fit = weighted_line_fit(
        lambdas,
        &per.iter().map(|e| e.value()).collect::<Vec<_>>(),
        &per.iter().map(|e| e.se()).collect::<Vec<_>>(),
    );
    let est = Estimate::scalar(
        "lambda_f_clt_cov_extrapolated",
        fit.intercept,
        fit.intercept_se,
        spec.replicas,
        spec.hash("lambda_f_clt_cov_extrapolated"),
    )
    .with_note(format!("slope in lambda {:.6e} +- {:.2e}", fit.slope, fit.slope_se));
    Ok((per, est))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub lambda: f64,
    pub q_lambda: Estimate,
    /// (Q_lambda f - Q_0 f) / lambda
    pub ratio: f64,
    pub ratio_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirsanovRow {
    pub lambda: f64,
    pub t: f64,
    pub girsanov: Estimate,
    pub clt_cov: Estimate,
    /// Girsanov minus clt_cov, paired replica by replica.
    pub difference: Estimate,
    /// |Girsanov(t) - (Q_lambda f - Q_0 f)/lambda| for the steady-state row
    /// at the same lambda, when there is one.
    pub gap_to_steady: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub q0: f64,
    /// Q_0-weighted lambda = 0 time average, a check on `q0`.
    pub q0_check: Estimate,
    pub rows: Vec<ExpansionRow>,
    pub lambda_f_per_lambda: Vec<Estimate>,
    pub lambda_f: Estimate,
    pub girsanov: Vec<GirsanovRow>,
    /// d <= 2: reported, not asserted.
    pub exploratory: bool,
    /// Ratios at neighbouring lambdas agree, and each agrees with lambda_f,
    /// within 4 combined sigma.
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPlan {
    pub lambdas: Vec<f64>,
    /// Steady-state horizons are max(steady.horizon, horizon_scale / lambda^2).
    pub horizon_scale: f64,
    pub clt_lambdas: Vec<f64>,
    pub girsanov_lambda: f64,
    pub girsanov_ts: Vec<f64>,
}

/// (Q_lambda f - Q_0 f)/lambda across lambdas against Lambda f. `f` is
/// centered with its exact Q_0 mean, so Q_0 f = 0.
pub fn steady_state_expansion_report(
    steady: &RunSpec,
    lambda_spec: &RunSpec,
    f: &LocalFunction,
    plan: &ExpansionPlan,
) -> Result<ExpansionReport> {
    let q0 = f.q0_mean(&steady.field);
    let q0_check = estimate_steady_state(&steady.with_lambda(0.0)?, f, SteadyRoute::Timeavg)?;
    let mut rows = Vec::new();
    for &lambda in &plan.lambdas {
        let horizon = steady
            .horizon
            .max((plan.horizon_scale / (lambda * lambda)).ceil() as usize);
        let spec = steady.with_lambda(lambda)?.with_horizon(horizon);
        let q = estimate_steady_state(&spec, f, SteadyRoute::Timeavg)?;
        rows.push(ExpansionRow {
            lambda,
            ratio: (q.value() - q0) / lambda,
            ratio_se: q.se() / lambda,
            q_lambda: q,
        });
    }
    let (lambda_f_per_lambda, lambda_f) = if f.is_constant() {
        let z = Estimate::scalar("lambda_f_clt_cov_extrapolated", 0.0, 0.0, 0, lambda_spec.hash("lambda_f_zero"));
        (vec![], z)
    } else {
        lambda_f_extrapolated(lambda_spec, f, &plan.clt_lambdas)?
    };
    let mut girsanov = Vec::new();
    if !f.is_constant() {
        let gspec = lambda_spec.with_lambda(plan.girsanov_lambda)?;
        for &t in &plan.girsanov_ts {
            let cmp = lambda_f_paired(&gspec, f, t)?;
            let gap = rows
                .iter()
                .find(|r| r.lambda == plan.girsanov_lambda)
                .map(|r| (cmp.girsanov.value() - r.ratio).abs());
            girsanov.push(GirsanovRow {
                lambda: plan.girsanov_lambda,
                t,
                girsanov: cmp.girsanov,
                clt_cov: cmp.clt_cov,
                difference: cmp.difference,
                gap_to_steady: gap,
            });
        }
    }
    let neighbours = rows
        .windows(2)
        .all(|w| (w[0].ratio - w[1].ratio).abs() <= 4.0 * combined_se(w[0].ratio_se, w[1].ratio_se));
    let against = rows
        .iter()
        .all(|r| (r.ratio - lambda_f.value()).abs() <= 4.0 * combined_se(r.ratio_se, lambda_f.se()));
    Ok(ExpansionReport {
        q0,
        q0_check,
        rows,
        lambda_f_per_lambda,
        lambda_f,
        girsanov,
        exploratory: steady.dim() <= 2,
        consistent: neighbours && against,
    })
}

/// Girsanov and clt_cov at horizon t / lambda^2 from the same unperturbed
/// runs, with the paired per-replica difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaFComparison {
    pub girsanov: Estimate,
    pub clt_cov: Estimate,
    pub difference: Estimate,
}

pub fn lambda_f_paired(spec: &RunSpec, f: &LocalFunction, t: f64) -> Result<LambdaFComparison> {
    require_bias(&spec.bias, "lambda f")?;
    if !(t > 0.0) {
        return Err(invalid("t", "must be positive"));
    }
    let lambda = spec.bias.lambda;
    let n = ((t / (lambda * lambda)).round() as usize).max(1);
    let runs = par_map(spec.replicas, |r| unperturbed_run(spec, f, &spec.bias, n, r));
    let girsanov = girsanov_from_runs(spec, &runs, lambda, t, n)?;
    let clt_cov = clt_from_runs(spec, &runs, lambda, t, n);
    let ws: Vec<f64> = runs.iter().map(|r| r.weight).collect();
    let a: Vec<f64> = runs.iter().map(|r| r.a).collect();
    let b: Vec<f64> = runs.iter().map(|r| lambda * r.m).collect();
    let (ma, _) = weighted_mean(&a, &ws);
    let (mb, _) = weighted_mean(&b, &ws);
    let diff: Vec<f64> = runs
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(r, (x, y))| (x * r.log_g.exp() - (x - ma) * (y - mb)) / t)
        .collect();
    let (v, se) = weighted_mean(&diff, &ws);
    let difference = Estimate::scalar(
        "lambda_f_girsanov_minus_clt_cov",
        v,
        se,
        spec.replicas,
        spec.with_horizon(n).hash("lambda_f_girsanov_minus_clt_cov"),
    );
    Ok(LambdaFComparison {
        girsanov,
        clt_cov,
        difference,
    })
}

fn clt_from_runs(spec: &RunSpec, runs: &[UnperturbedRun], lambda: f64, t: f64, n: usize) -> Estimate {
    let ws: Vec<f64> = runs.iter().map(|r| r.weight).collect();
    let a: Vec<f64> = runs.iter().map(|r| r.a).collect();
    let b: Vec<f64> = runs.iter().map(|r| lambda * r.m).collect();
    let (ma, _) = weighted_mean(&a, &ws);
    let (mb, _) = weighted_mean(&b, &ws);
    let prod: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb) / t).collect();
    let (v, se) = weighted_mean(&prod, &ws);
    Estimate::scalar("lambda_f_clt_cov", v, se, spec.replicas, spec.with_horizon(n).hash("lambda_f_clt_cov"))
        .with_note(format!("lambda {lambda}, t {t}, n {n}"))
}
