//! Suites, result rows and run artifacts.
//!
//! A run writes, into its output directory:
//! `manifest.json` (status `incomplete` until the run finishes),
//! `results.csv` or `results.json`, one `regen_lambda_<l>.csv` per tilt for
//! the regeneration diagnostics, `seeds.csv` and the resolved `spec.toml`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::{EstimatorKind, ExperimentSpec};
use crate::error::{LabError, Result};
use crate::estimators::{par_map, *};
use crate::regen::{
    coin_trick_sample, default_lookahead, detect_approx_regenerations, inter_regen_summary, truncation_invalidations,
    CoinStream, HyperplaneGrid, RegenerationRecord, SlabChain, SlabProblem,
};
use crate::rng::{derive_seed, StreamId};
use crate::stats::{exp_moment, pooled_autocorrelation};
use crate::walk::{run_walk, LocalFunction, WalkPath};
use crate::Site;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CSV_HEADER: &str =
    "experiment_id,lambda,estimator_id,component,value,stderr,n_replicas,horizon,seed,config_hash";
pub const REGEN_HEADER: &str = "replica,k,tau_k,dtau,dx_e1,block_fsum,mode";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Einstein,
    Expansion,
    Probes,
    RegenDiagnostics,
    All,
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Einstein => "einstein",
            Suite::Expansion => "expansion",
            Suite::Probes => "probes",
            Suite::RegenDiagnostics => "regen-diagnostics",
            Suite::All => "all",
        }
    }

    pub fn includes(&self, kind: EstimatorKind) -> bool {
        use EstimatorKind::*;
        match self {
            Suite::Einstein => matches!(kind, Speed | SpeedRegen | Sigma | Einstein),
            Suite::Expansion => matches!(
                kind,
                SteadyTimeavg | SteadyRegen | SteadyTorus | LambdaF | Girsanov | Expansion
            ),
            Suite::Probes => matches!(kind, Probes | VarianceDecay | Maxima),
            Suite::RegenDiagnostics => matches!(kind, Regen),
            Suite::All => true,
        }
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "einstein" => Ok(Suite::Einstein),
            "expansion" => Ok(Suite::Expansion),
            "probes" => Ok(Suite::Probes),
            "regen-diagnostics" => Ok(Suite::RegenDiagnostics),
            "all" => Ok(Suite::All),
            _ => Err(format!(
                "unknown suite `{s}` (einstein, expansion, probes, regen-diagnostics, all)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}` (csv, json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub lambda: f64,
    pub estimator_id: String,
    pub component: usize,
    pub value: f64,
    pub stderr: f64,
    pub n_replicas: usize,
    pub horizon: usize,
    pub seed: u64,
    pub config_hash: String,
}

/// Floats at 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.experiment_id,
            num(self.lambda),
            self.estimator_id,
            self.component,
            num(self.value),
            num(self.stderr),
            self.n_replicas,
            self.horizon,
            self.seed,
            self.config_hash
        )
    }
}

/// An invariant evaluated during the run. Only asserted checks decide the
/// exit code; the others are reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub experiment_id: String,
    pub name: String,
    pub pass: bool,
    pub asserted: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegenRow {
    pub replica: u64,
    pub k: usize,
    pub tau_k: usize,
    pub dtau: usize,
    pub dx_e1: i64,
    pub block_fsum: f64,
    pub mode: String,
}

impl RegenRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.replica,
            self.k,
            self.tau_k,
            self.dtau,
            self.dx_e1,
            num(self.block_fsum),
            self.mode
        )
    }
}

/// Rows for the blocks k >= 1 of a record: block k is [tau_{k-1}, tau_k).
pub fn regen_rows(replica: u64, rec: &RegenerationRecord, fsum: &[f64]) -> Vec<RegenRow> {
    (1..rec.len())
        .map(|k| RegenRow {
            replica,
            k,
            tau_k: rec.tau[k],
            dtau: rec.tau[k] - rec.tau[k - 1],
            dx_e1: rec.levels[k] - rec.levels[k - 1],
            block_fsum: fsum.get(k - 1).copied().unwrap_or(0.0),
            mode: rec.mode.name().to_string(),
        })
        .collect()
}

/// Replicas of one estimator tag; expanded to per-replica streams in the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub experiment_id: String,
    pub tag: String,
    pub lambda: f64,
    pub seed: u64,
    pub replicas: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SuiteOutput {
    pub rows: Vec<ResultRow>,
    pub checks: Vec<Check>,
    pub reports: BTreeMap<String, serde_json::Value>,
    /// (lambda, rows) for the regeneration CSVs.
    pub regen: Vec<(f64, Vec<RegenRow>)>,
    pub ledger: Vec<LedgerEntry>,
}

impl SuiteOutput {
    pub fn all_asserted_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass || !c.asserted)
    }
}

struct Runner<'a> {
    spec: &'a ExperimentSpec,
    hash: String,
    f: LocalFunction,
    out: SuiteOutput,
    lln: BTreeMap<u64, Estimate>,
    timeavg: BTreeMap<u64, Estimate>,
}

fn combined(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

fn within_4(diff: f64, se: f64) -> bool {
    diff.abs() <= 4.0 * se || diff.abs() <= 1e-12
}

impl<'a> Runner<'a> {
    fn push(&mut self, exp: &str, lambda: f64, horizon: usize, e: &Estimate) {
        self.push_as(exp, lambda, horizon, &e.estimator_id, e);
    }

    fn push_as(&mut self, exp: &str, lambda: f64, horizon: usize, id: &str, e: &Estimate) {
        for (i, (v, s)) in e.value.iter().zip(&e.stderr).enumerate() {
            self.out.rows.push(ResultRow {
                experiment_id: exp.to_string(),
                lambda,
                estimator_id: id.to_string(),
                component: i,
                value: *v,
                stderr: *s,
                n_replicas: e.n_replicas,
                horizon,
                seed: self.spec.seed,
                config_hash: self.hash.clone(),
            });
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push_value(&mut self, exp: &str, lambda: f64, horizon: usize, id: &str, value: f64, stderr: f64, n: usize) {
        let e = Estimate::scalar(id, value, stderr, n, 0);
        self.push(exp, lambda, horizon, &e);
    }

    fn check(&mut self, exp: &str, name: String, pass: bool, asserted: bool, detail: String) {
        self.out.checks.push(Check {
            experiment_id: exp.to_string(),
            name,
            pass,
            asserted,
            detail,
        });
    }

    fn ledger(&mut self, exp: &str, tag: &str, spec: &RunSpec) {
        self.out.ledger.push(LedgerEntry {
            experiment_id: exp.to_string(),
            tag: tag.to_string(),
            lambda: spec.bias.lambda,
            seed: spec.seed,
            replicas: spec.replicas,
        });
    }

    fn report<T: Serialize>(&mut self, key: String, value: &T) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.out.reports.insert(key, v);
    }

    fn base(&self, lambda: f64) -> Result<RunSpec> {
        self.spec.run_spec(lambda)
    }

    fn scaled(&self, lambda: f64) -> usize {
        if lambda > 0.0 {
            self.spec
                .horizon
                .max((self.spec.horizon_scale / (lambda * lambda)).ceil() as usize)
        } else {
            self.spec.horizon
        }
    }

    fn regen_horizon(&self, spec: &RunSpec) -> Result<usize> {
        Ok(self.scaled(spec.bias.lambda).max(4 * default_lookahead(&spec.bias)?))
    }

    fn deterministic_field(&self) -> bool {
        let field = match self.spec.field() {
            Ok(f) => f,
            Err(_) => return false,
        };
        field.law.constant_value(field.kappa).is_some()
    }

    fn run(&mut self, kind: EstimatorKind) {
        let res = match kind {
            EstimatorKind::Speed => self.speed(),
            EstimatorKind::SpeedRegen => self.speed_regen(),
            EstimatorKind::Sigma => self.sigma(),
            EstimatorKind::Einstein => self.einstein(),
            EstimatorKind::SteadyTimeavg => self.steady_timeavg(),
            EstimatorKind::SteadyRegen => self.steady_regen(),
            EstimatorKind::SteadyTorus => self.steady_torus(),
            EstimatorKind::LambdaF => self.lambda_f(),
            EstimatorKind::Girsanov => self.girsanov(),
            EstimatorKind::Expansion => self.expansion(),
            EstimatorKind::Probes => self.probes(),
            EstimatorKind::VarianceDecay => self.variance_decay(),
            EstimatorKind::Maxima => self.maxima(),
            EstimatorKind::Regen => self.regen(),
        };
        if let Err(e) = res {
            self.check(kind.name(), "estimator_error".into(), false, true, e.to_string());
        }
    }

    fn speed(&mut self) -> Result<()> {
        let exp = "speed";
        for lambda in self.spec.positive_lambdas() {
            let h = self.scaled(lambda);
            let rs = self.base(lambda)?.with_horizon(h);
            let e = estimate_speed(&rs, SpeedRoute::Lln)?;
            self.push(exp, lambda, h, &e);
            self.ledger(exp, "speed", &rs);
            if self.deterministic_field() {
                let v = homogeneous_speed(&rs.bias);
                let exact = Estimate::new("speed_closed_form", v.clone(), vec![0.0; v.len()], 0, 0);
                self.push(exp, lambda, h, &exact);
                let pass = v
                    .iter()
                    .enumerate()
                    .all(|(i, x)| within_4(e.value[i] - x, e.stderr[i]));
                self.check(
                    exp,
                    format!("closed_form_lambda_{lambda}"),
                    pass,
                    true,
                    format!("v = {:?}, exact {:?}", e.value, v),
                );
            }
            self.lln.insert(lambda.to_bits(), e);
        }
        Ok(())
    }

    fn speed_regen(&mut self) -> Result<()> {
        let exp = "speed_regen";
        for lambda in self.spec.positive_lambdas() {
            let rs0 = self.base(lambda)?;
            let h = self.regen_horizon(&rs0)?;
            let rs = rs0.with_horizon(h);
            let e = estimate_speed(&rs, SpeedRoute::Regen)?;
            self.push(exp, lambda, h, &e);
            self.ledger(exp, "speed", &rs);
            if let Some(l) = self.lln.get(&lambda.to_bits()).cloned() {
                let pass = (0..e.value.len()).all(|i| {
                    within_4(e.value[i] - l.value[i], combined(e.stderr[i], l.stderr[i]))
                });
                self.check(
                    exp,
                    format!("lln_vs_regen_lambda_{lambda}"),
                    pass,
                    true,
                    format!("regen {:?} vs lln {:?}", e.value, l.value),
                );
            }
        }
        Ok(())
    }

    fn sigma(&mut self) -> Result<()> {
        let exp = "sigma";
        let rs = self.base(0.0)?.with_horizon(self.spec.sigma_horizon);
        let e = estimate_sigma(&rs)?;
        self.push(exp, 0.0, rs.horizon, &e);
        self.ledger(exp, "sigma", &rs);
        let d = rs.dim();
        let mut pass = true;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    pass &= within_4(e.value[i * d + j], e.stderr[i * d + j]);
                }
            }
        }
        self.check(exp, "off_diagonal_zero".into(), pass, true, format!("{:?}", e.value));
        Ok(())
    }

    fn einstein(&mut self) -> Result<()> {
        let exp = "einstein";
        let lambdas = self.spec.positive_lambdas();
        let speed = self.base(lambdas.first().copied().unwrap_or(0.0))?;
        let sigma = self.base(0.0)?.with_horizon(self.spec.sigma_horizon);
        let rep = einstein_report(&speed, &sigma, &lambdas, self.spec.horizon_scale)?;
        self.push(exp, 0.0, sigma.horizon, &rep.sigma);
        self.ledger(exp, "sigma", &sigma);
        let n = rep.sigma.n_replicas;
        self.push_value(exp, 0.0, sigma.horizon, "einstein_sigma_ll", rep.sigma_ll.0, rep.sigma_ll.1, n);
        for row in &rep.rows {
            let n = row.speed.n_replicas;
            self.push(exp, row.lambda, row.horizon, &row.speed);
            self.ledger(exp, "speed", &speed.with_lambda(row.lambda)?.with_horizon(row.horizon));
            let ratio = Estimate::new(
                "einstein_ratio",
                row.ratio.iter().map(|r| r.0).collect(),
                row.ratio.iter().map(|r| r.1).collect(),
                n,
                0,
            );
            self.push(exp, row.lambda, row.horizon, &ratio);
            self.push_value(exp, row.lambda, row.horizon, "einstein_gap", row.gap, row.gap_se, n);
            if let Some(cf) = row.closed_form {
                self.push_value(exp, row.lambda, row.horizon, "einstein_closed_form", cf, 0.0, 0);
                let along: f64 = row.ratio.iter().zip(speed.bias.ell()).map(|(r, l)| r.0 * l).sum();
                let se = row
                    .ratio
                    .iter()
                    .zip(speed.bias.ell())
                    .map(|(r, l)| (r.1 * l).powi(2))
                    .sum::<f64>()
                    .sqrt();
                self.check(
                    exp,
                    format!("closed_form_lambda_{}", row.lambda),
                    within_4(along - cf, se),
                    true,
                    format!("v/lambda {along:.6e} +- {se:.2e} vs {cf:.6e}"),
                );
            }
        }
        let n = rep.rows.first().map(|r| r.speed.n_replicas).unwrap_or(0);
        self.push_value(exp, 0.0, 0, "einstein_slope", rep.slope, rep.slope_se, n);
        self.check(
            exp,
            "slope_vs_sigma".into(),
            rep.slope_consistent,
            true,
            format!(
                "slope {:.6e} +- {:.2e}, ell.Sigma.ell {:.6e} +- {:.2e}",
                rep.slope, rep.slope_se, rep.sigma_ll.0, rep.sigma_ll.1
            ),
        );
        self.check(
            exp,
            "gap_monotone".into(),
            rep.gap_monotone,
            true,
            rep.rows
                .iter()
                .map(|r| format!("{}: {:.3e} +- {:.1e}", r.lambda, r.gap, r.gap_se))
                .collect::<Vec<_>>()
                .join(", "),
        );
        self.report(exp.into(), &rep);
        Ok(())
    }

    fn all_lambdas(&self) -> Vec<f64> {
        let mut v = self.spec.lambda.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
        v
    }

    fn steady_timeavg(&mut self) -> Result<()> {
        let exp = "steady_timeavg";
        for lambda in self.all_lambdas() {
            let h = self.scaled(lambda);
            let rs = self.base(lambda)?.with_horizon(h);
            let e = estimate_steady_state(&rs, &self.f, SteadyRoute::Timeavg)?;
            self.push(exp, lambda, h, &e);
            self.ledger(exp, "steady", &rs);
            self.timeavg.insert(lambda.to_bits(), e);
        }
        Ok(())
    }

    fn steady_regen(&mut self) -> Result<()> {
        let exp = "steady_regen";
        for lambda in self.spec.positive_lambdas() {
            let rs0 = self.base(lambda)?;
            let h = self.regen_horizon(&rs0)?;
            let rs = rs0.with_horizon(h);
            let e = estimate_steady_state(&rs, &self.f, SteadyRoute::Regen)?;
            self.push(exp, lambda, h, &e);
            self.ledger(exp, "steady", &rs);
            if let Some(t) = self.timeavg.get(&lambda.to_bits()).cloned() {
                self.check(
                    exp,
                    format!("regen_vs_timeavg_lambda_{lambda}"),
                    within_4(e.value() - t.value(), combined(e.se(), t.se())),
                    true,
                    format!("regen {:.6e} +- {:.2e}, timeavg {:.6e} +- {:.2e}", e.value(), e.se(), t.value(), t.se()),
                );
            }
        }
        Ok(())
    }

    fn steady_torus(&mut self) -> Result<()> {
        let exp = "steady_torus";
        for lambda in self.all_lambdas() {
            let h = self.scaled(lambda);
            let rs = self.base(lambda)?.with_horizon(h);
            let (ta, ex, diff) = torus_route_comparison(&rs, &self.f, self.spec.torus_period)?;
            self.push(exp, lambda, h, &ta);
            self.push(exp, lambda, h, &ex);
            self.push(exp, lambda, h, &diff);
            self.ledger(exp, "torus", &rs);
            self.ledger(exp, "torus-walk", &rs);
            self.check(
                exp,
                format!("timeavg_vs_exact_lambda_{lambda}"),
                within_4(diff.value(), diff.se()),
                true,
                format!("paired difference {:.3e} +- {:.2e}", diff.value(), diff.se()),
            );
        }
        Ok(())
    }

    fn lambda_f(&mut self) -> Result<()> {
        let exp = "lambda_f";
        let lambdas = self.spec.positive_lambdas();
        let rs = self.base(lambdas.first().copied().unwrap_or(0.0))?;
        let (per, extrapolated) = lambda_f_extrapolated(&rs, &self.f, &lambdas)?;
        for (l, e) in lambdas.iter().zip(&per) {
            let n = ((1.0 / (l * l)).round() as usize).max(1);
            self.push(exp, *l, n, e);
            self.ledger(exp, "lambda_f", &rs.with_lambda(*l)?);
        }
        self.push(exp, 0.0, 0, &extrapolated);
        let stable = per
            .windows(2)
            .all(|w| within_4(w[0].value() - w[1].value(), combined(w[0].se(), w[1].se())));
        self.check(
            exp,
            "lambda_stability".into(),
            stable,
            self.spec.dimension >= 3,
            per.iter()
                .map(|e| format!("{:.4e} +- {:.2e}", e.value(), e.se()))
                .collect::<Vec<_>>()
                .join(", "),
        );
        if self.deterministic_field() {
            let zero = per.iter().all(|e| within_4(e.value(), e.se()));
            self.check(exp, "deterministic_zero".into(), zero, true, String::new());
        }
        Ok(())
    }

    fn girsanov(&mut self) -> Result<()> {
        let exp = "girsanov";
        for lambda in self.spec.positive_lambdas() {
            let rs = self.base(lambda)?;
            self.ledger(exp, "lambda_f", &rs);
            for &t in &self.spec.girsanov_t.clone() {
                let n = ((t / (lambda * lambda)).round() as usize).max(1);
                let cmp = lambda_f_paired(&rs, &self.f, t)?;
                let (g, c, diff) = (&cmp.girsanov, &cmp.clt_cov, &cmp.difference);
                self.push(exp, lambda, n, g);
                self.push(exp, lambda, n, c);
                self.push(exp, lambda, n, diff);
                self.check(
                    exp,
                    format!("girsanov_vs_clt_cov_lambda_{lambda}_t_{t}"),
                    within_4(diff.value(), diff.se()),
                    true,
                    format!(
                        "{}; clt_cov {:.4e} +- {:.2e}; paired difference {:.4e} +- {:.2e}",
                        g.notes,
                        c.value(),
                        c.se(),
                        diff.value(),
                        diff.se()
                    ),
                );
            }
        }
        Ok(())
    }

    fn expansion(&mut self) -> Result<()> {
        let exp = "expansion";
        let lambdas = self.spec.positive_lambdas();
        let plan = ExpansionPlan {
            lambdas: lambdas.clone(),
            horizon_scale: self.spec.horizon_scale,
            clt_lambdas: lambdas.clone(),
            girsanov_lambda: lambdas.last().copied().unwrap_or(0.0),
            girsanov_ts: self.spec.girsanov_t.clone(),
        };
        let base = self.base(lambdas.first().copied().unwrap_or(0.0))?;
        let rep = steady_state_expansion_report(&base, &base, &self.f, &plan)?;
        let n = rep.q0_check.n_replicas;
        self.push_value(exp, 0.0, 0, "expansion_q0_exact", rep.q0, 0.0, 0);
        self.push(exp, 0.0, base.horizon, &rep.q0_check);
        self.ledger(exp, "steady", &base.with_lambda(0.0)?);
        self.check(
            exp,
            "q0_timeavg_vs_exact".into(),
            within_4(rep.q0_check.value() - rep.q0, rep.q0_check.se()),
            true,
            format!("{:.6e} +- {:.2e} vs {:.6e}", rep.q0_check.value(), rep.q0_check.se(), rep.q0),
        );
        for row in &rep.rows {
            let h = self.scaled(row.lambda);
            self.push(exp, row.lambda, h, &row.q_lambda);
            self.push_value(exp, row.lambda, h, "expansion_ratio", row.ratio, row.ratio_se, n);
            self.ledger(exp, "steady", &base.with_lambda(row.lambda)?.with_horizon(h));
        }
        for (l, e) in plan.clt_lambdas.iter().zip(&rep.lambda_f_per_lambda) {
            self.push(exp, *l, ((1.0 / (l * l)).round() as usize).max(1), e);
            self.ledger(exp, "lambda_f", &base.with_lambda(*l)?);
        }
        self.push(exp, 0.0, 0, &rep.lambda_f);
        for g in &rep.girsanov {
            let h = ((g.t / (g.lambda * g.lambda)).round() as usize).max(1);
            self.push(exp, g.lambda, h, &g.girsanov);
            self.push(exp, g.lambda, h, &g.clt_cov);
            self.check(
                exp,
                format!("girsanov_vs_clt_cov_t_{}", g.t),
                within_4(g.girsanov.value() - g.clt_cov.value(), combined(g.girsanov.se(), g.clt_cov.se())),
                true,
                g.girsanov.notes.clone(),
            );
        }
        self.check(
            exp,
            "first_order_consistent".into(),
            rep.consistent,
            !rep.exploratory,
            rep.rows
                .iter()
                .map(|r| format!("{}: {:.4e} +- {:.2e}", r.lambda, r.ratio, r.ratio_se))
                .chain(std::iter::once(format!(
                    "lambda_f {:.4e} +- {:.2e}",
                    rep.lambda_f.value(),
                    rep.lambda_f.se()
                )))
                .collect::<Vec<_>>()
                .join(", "),
        );
        self.report(exp.into(), &rep);
        Ok(())
    }

    fn probes(&mut self) -> Result<()> {
        let exp = "probes";
        for lambda in self.spec.positive_lambdas() {
            let h = self.scaled(lambda);
            let rs = self.base(lambda)?.with_horizon(h);
            let a = probe_left_right(&rs)?;
            self.push(exp, lambda, h, &a.estimate);
            self.ledger(exp, "probe-a", &rs);
            self.check(
                exp,
                format!("left_before_right_lambda_{lambda}"),
                a.pass,
                true,
                format!("{:.4} +- {:.4} at L0 = {}", a.estimate.value(), a.estimate.se(), a.l0),
            );
            let b = probe_backtrack(&rs, self.spec.probe_levels)?;
            for &(n, p, se, bound) in &b.rows {
                self.push_value(exp, lambda, h, &format!("probe_backtrack_n{n}"), p, se, rs.replicas);
                self.push_value(exp, lambda, h, &format!("probe_backtrack_bound_n{n}"), bound, 0.0, 0);
            }
            self.ledger(exp, "probe-b", &rs);
            self.check(exp, format!("backtrack_bound_lambda_{lambda}"), b.pass, true, String::new());
            let c = probe_level_times(&rs, self.spec.probe_levels, self.spec.probe_c)?;
            for &(n, p, se) in &c.rows {
                self.push_value(exp, lambda, h, &format!("probe_level_time_n{n}"), p, se, rs.replicas);
            }
            self.ledger(exp, "probe-c", &rs);
            let d = probe_max_moments(&rs, &self.spec.probe_times, &self.spec.probe_powers)?;
            for &(p, t, m, se) in &d.rows {
                self.push_value(exp, lambda, h, &format!("probe_max_moment_p{p}_t{t}"), m, se, rs.replicas);
            }
            self.ledger(exp, "probe-d", &rs);
            self.check(exp, format!("max_moments_flat_lambda_{lambda}"), d.pass, true, String::new());
            let e = probe_orthogonality(&rs, &self.f)?;
            self.push(exp, 0.0, h, &e.covariance);
            self.ledger(exp, "probe-e", &rs.with_lambda(0.0)?);
            self.check(
                exp,
                format!("orthogonality_horizon_{h}"),
                e.pass,
                true,
                format!("t = {:.3}", e.t_stat),
            );
            self.report(format!("probes_lambda_{lambda}"), &(a, b, c, d, e));
        }
        Ok(())
    }

    fn variance_decay(&mut self) -> Result<()> {
        let exp = "variance_decay";
        let rs = self.base(0.0)?;
        let p = probe_variance_decay(&rs, &self.f, &self.spec.variance_times, self.spec.inner_walks)?;
        for &(n, v, se) in &p.rows {
            self.push_value(exp, 0.0, n, "variance_decay", v, se, rs.replicas);
        }
        self.push_value(exp, 0.0, 0, "variance_decay_slope", p.slope, p.slope_se, rs.replicas);
        self.ledger(exp, "probe-f", &rs);
        self.ledger(exp, "probe-f-accept", &rs);
        self.check(
            exp,
            "slope_below_threshold".into(),
            p.pass,
            self.spec.dimension >= 3,
            format!("slope {:.3} +- {:.3}, threshold {:.2}", p.slope, p.slope_se, p.threshold),
        );
        self.report(exp.into(), &p);
        Ok(())
    }

    fn maxima(&mut self) -> Result<()> {
        let exp = "maxima";
        for lambda in self.spec.positive_lambdas() {
            let rs = self.base(lambda)?;
            self.ledger(exp, "maxima", &rs);
            let incs = [
                ("displacement", Increment::Displacement { axis: 0 }, true),
                ("local", Increment::Local { f: self.f.clone() }, self.spec.dimension >= 3),
            ];
            for (name, g, asserted) in incs {
                let p = maxima_moment_probe(&rs, &g, &self.spec.maxima_n)?;
                for &(n, v, se) in &p.rows {
                    let h = (n as f64 / (lambda * lambda)).ceil() as usize;
                    self.push_value(exp, lambda, h, &format!("maxima_{name}"), v, se, rs.replicas);
                }
                self.check(
                    exp,
                    format!("{name}_envelope_lambda_{lambda}"),
                    p.pass,
                    asserted,
                    format!("{:?}", p.envelope),
                );
                self.report(format!("maxima_{name}_lambda_{lambda}"), &p);
            }
        }
        Ok(())
    }

    fn regen(&mut self) -> Result<()> {
        let exp = "regen";
        for lambda in self.spec.positive_lambdas() {
            let mut rows = Vec::new();
            self.regen_exact(exp, lambda, &mut rows)?;
            self.regen_approximate(exp, lambda, &mut rows)?;
            self.out.regen.push((lambda, rows));
        }
        Ok(())
    }

    fn regen_exact(&mut self, exp: &str, lambda: f64, rows: &mut Vec<RegenRow>) -> Result<()> {
        let rs = self.base(lambda)?;
        let spec = self.spec;
        let f = &self.f;
        let runs = par_map(rs.replicas, |r| -> Result<Option<(Vec<RegenRow>, Vec<f64>, Vec<f64>, f64)>> {
            let field = rs.env("regen-slab", r);
            let problem = SlabProblem::new(field, rs.bias, spec.slab_cross, spec.slab_backstop)?;
            let chain = SlabChain::build(problem, spec.slab_levels)?;
            let beta_max = chain.beta_max();
            let coins = CoinStream::new(spec.beta_fraction * beta_max, derive_seed(rs.seed, "regen-coins", r))?;
            let mut rng = rs.stream("regen-slab", r).rng();
            let (path, rec) = match coin_trick_sample(&chain, &coins, &mut rng, 2) {
                Ok(x) => x,
                Err(LabError::NoRegeneration) => return Ok(None),
                Err(e) => return Err(e),
            };
            match inter_regen_summary(&rec, &path, chain.problem().environment(), Some(f)) {
                Ok(s) => Ok(Some((regen_rows(r, &rec, &s.fsum), s.dx, s.dtau, beta_max))),
                Err(LabError::TooFewBlocks { .. }) => Ok(Some((Vec::new(), Vec::new(), Vec::new(), beta_max))),
                Err(e) => Err(e),
            }
        });
        self.ledger(exp, "regen-slab", &rs);
        self.ledger(exp, "regen-coins", &rs);
        let mut dx_seqs = Vec::new();
        let (mut dx_all, mut dt_all, mut betas) = (Vec::new(), Vec::new(), Vec::new());
        let mut skipped = 0usize;
        for run in runs {
            match run? {
                Some((r, dx, dt, b)) => {
                    rows.extend(r);
                    betas.push(b);
                    if dx.is_empty() {
                        skipped += 1;
                    }
                    dx_all.extend(dx.iter().copied());
                    dt_all.extend(dt);
                    dx_seqs.push(dx);
                }
                None => skipped += 1,
            }
        }
        self.regen_statistics(exp, lambda, "regen_exact", &dx_seqs, &dx_all, &dt_all, rs.replicas, true);
        let beta = crate::stats::MeanVar::from_slice(&betas);
        self.push_value(exp, lambda, 0, "regen_exact_beta_max", beta.mean(), beta.stderr(), betas.len());
        self.push_value(exp, lambda, 0, "regen_exact_replicas_without_blocks", skipped as f64, 0.0, rs.replicas);
        let problem = SlabProblem::new(rs.env("regen-slab", 0), rs.bias, spec.slab_cross, spec.slab_backstop)?;
        let plain = problem.mu_decomposition(0, None)?;
        let beta = spec.beta_fraction * plain.beta_max;
        let dec = problem.mu_decomposition(0, Some(beta))?;
        let mu0 = dec.mu0.as_ref().expect("beta given");
        let mut err = 0.0f64;
        for x in 0..dec.nu.len() {
            for w in 0..dec.nu[x].len() {
                err = err.max((beta * dec.mu1[x][w] + (1.0 - beta) * mu0[x][w] - dec.nu[x][w]).abs());
            }
        }
        self.check(
            exp,
            format!("mixture_identity_lambda_{lambda}"),
            err <= 1e-12,
            true,
            format!("max error {err:.2e}"),
        );
        Ok(())
    }

    fn regen_approximate(&mut self, exp: &str, lambda: f64, rows: &mut Vec<RegenRow>) -> Result<()> {
        let rs0 = self.base(lambda)?;
        let h = self.regen_horizon(&rs0)?;
        let rs = rs0.with_horizon(h);
        let grid = HyperplaneGrid::new(&rs.bias)?;
        let lookahead = default_lookahead(&rs.bias)?;
        let f = &self.f;
        let runs = par_map(rs.replicas, |r| -> Result<(Vec<RegenRow>, Vec<f64>, Vec<f64>, (usize, usize))> {
            let env = rs.env("regen", r);
            let origin = Site::origin(rs.dim())?;
            let path: WalkPath = run_walk(&env, &rs.bias, &origin, h, &rs.stream("regen", r));
            let rec = detect_approx_regenerations(&path, &grid, lookahead)?;
            let trunc = truncation_invalidations(&path, &grid, lookahead)?;
            match inter_regen_summary(&rec, &path, &env, Some(f)) {
                Ok(s) => Ok((regen_rows(r, &rec, &s.fsum), s.dx, s.dtau, trunc)),
                Err(LabError::TooFewBlocks { .. }) => Ok((Vec::new(), Vec::new(), Vec::new(), trunc)),
                Err(e) => Err(e),
            }
        });
        self.ledger(exp, "regen", &rs);
        let mut dx_seqs = Vec::new();
        let (mut dx_all, mut dt_all) = (Vec::new(), Vec::new());
        let (mut checked, mut invalid) = (0usize, 0usize);
        for run in runs {
            let (r, dx, dt, (c, i)) = run?;
            rows.extend(r);
            dx_all.extend(dx.iter().copied());
            dt_all.extend(dt);
            dx_seqs.push(dx);
            checked += c;
            invalid += i;
        }
        self.regen_statistics(exp, lambda, "regen_approx", &dx_seqs, &dx_all, &dt_all, rs.replicas, false);
        let frac = if checked > 0 { invalid as f64 / checked as f64 } else { 0.0 };
        self.push_value(exp, lambda, h, "regen_approx_truncation_invalidated", frac, 0.0, checked);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn regen_statistics(
        &mut self,
        exp: &str,
        lambda: f64,
        prefix: &str,
        dx_seqs: &[Vec<f64>],
        dx: &[f64],
        dt: &[f64],
        replicas: usize,
        asserted: bool,
    ) {
        let blocks = dx.len();
        self.push_value(exp, lambda, 0, &format!("{prefix}_blocks"), blocks as f64, 0.0, replicas);
        if blocks < 3 {
            self.check(exp, format!("{prefix}_blocks_lambda_{lambda}"), false, asserted, "fewer than 3 blocks".into());
            return;
        }
        for lag in 1..=2 {
            let (rho, se) = pooled_autocorrelation(dx_seqs, lag);
            self.push_value(exp, lambda, 0, &format!("{prefix}_autocorr_lag{lag}"), rho, se, replicas);
            if lag == 2 {
                self.check(
                    exp,
                    format!("{prefix}_lag2_uncorrelated_lambda_{lambda}"),
                    within_4(rho, se),
                    asserted,
                    format!("rho {rho:.4} +- {se:.4}"),
                );
            }
        }
        let c = self.spec.moment_c;
        let x: Vec<f64> = dx.iter().map(|d| lambda * d).collect();
        let t: Vec<f64> = dt.iter().map(|d| lambda * lambda * d).collect();
        let (mx, sx) = exp_moment(&x, c);
        let (mt, st) = exp_moment(&t, c);
        self.push_value(exp, lambda, 0, &format!("{prefix}_exp_moment_dx"), mx, sx, replicas);
        self.push_value(exp, lambda, 0, &format!("{prefix}_exp_moment_dtau"), mt, st, replicas);
        let mean_dx = crate::stats::MeanVar::from_slice(dx);
        let mean_dt = crate::stats::MeanVar::from_slice(dt);
        self.push_value(exp, lambda, 0, &format!("{prefix}_mean_dx"), mean_dx.mean(), mean_dx.stderr(), replicas);
        self.push_value(exp, lambda, 0, &format!("{prefix}_mean_dtau"), mean_dt.mean(), mean_dt.stderr(), replicas);
        self.check(
            exp,
            format!("{prefix}_moments_finite_lambda_{lambda}"),
            mx.is_finite() && mt.is_finite() && sx.is_finite() && st.is_finite(),
            asserted,
            format!("E exp(c lambda dx) {mx:.4} +- {sx:.2e}, E exp(c lambda^2 dtau) {mt:.4} +- {st:.2e}"),
        );
    }
}

/// Runs every configured estimator that belongs to `suite`, in a fixed order.
pub fn run_suite(spec: &ExperimentSpec, suite: Suite) -> Result<SuiteOutput> {
    let mut runner = Runner {
        spec,
        hash: format!("{:016x}", spec.config_hash()),
        f: spec.local_function()?,
        out: SuiteOutput::default(),
        lln: BTreeMap::new(),
        timeavg: BTreeMap::new(),
    };
    for kind in spec.estimators.iter().copied().filter(|k| suite.includes(*k)) {
        runner.run(kind);
    }
    Ok(runner.out)
}

pub fn selected(spec: &ExperimentSpec, suite: Suite) -> Vec<EstimatorKind> {
    spec.estimators.iter().copied().filter(|k| suite.includes(*k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Incomplete,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub tool_version: String,
    pub suite: String,
    pub status: RunStatus,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    /// Output name -> file path.
    pub outputs: BTreeMap<String, String>,
    pub seed_ledger: String,
    pub checks: Vec<Check>,
}

impl RunManifest {
    /// 0 when every asserted check passed, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.status == RunStatus::Complete && self.checks.iter().all(|c| c.pass || !c.asserted) {
            0
        } else {
            2
        }
    }

    pub fn read(dir: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes to a sibling temporary file and renames, so readers never see a
/// truncated file.
fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn write_manifest(dir: &Path, m: &RunManifest) -> io::Result<()> {
    let text = serde_json::to_string_pretty(m).map_err(io::Error::other)?;
    write_atomic(&dir.join("manifest.json"), text.as_bytes())
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExperimentJson {
    pub experiment_id: String,
    pub rows: Vec<ResultRow>,
    pub checks: Vec<Check>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResultsJson {
    pub config_hash: String,
    pub suite: String,
    pub experiments: Vec<ExperimentJson>,
    pub reports: BTreeMap<String, serde_json::Value>,
}

pub fn results_json(out: &SuiteOutput, config_hash: &str, suite: Suite) -> String {
    let mut ids: Vec<String> = Vec::new();
    for id in out
        .rows
        .iter()
        .map(|r| &r.experiment_id)
        .chain(out.checks.iter().map(|c| &c.experiment_id))
    {
        if !ids.contains(id) {
            ids.push(id.clone());
        }
    }
    let experiments = ids
        .into_iter()
        .map(|id| ExperimentJson {
            rows: out.rows.iter().filter(|r| r.experiment_id == id).cloned().collect(),
            checks: out.checks.iter().filter(|c| c.experiment_id == id).cloned().collect(),
            experiment_id: id,
        })
        .collect();
    let doc = ResultsJson {
        config_hash: config_hash.to_string(),
        suite: suite.name().to_string(),
        experiments,
        reports: out.reports.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("results serialize")
}

fn seed_ledger_csv(entries: &[LedgerEntry]) -> String {
    let mut s = String::from("experiment_id,tag,lambda,replica,env_seed,stream_id\n");
    for e in entries {
        for r in 0..e.replicas as u64 {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.experiment_id,
                e.tag,
                num(e.lambda),
                r,
                derive_seed(e.seed, &format!("{}-env", e.tag), r),
                StreamId::new(e.seed, &e.tag, r).id()
            ));
        }
    }
    s
}

/// Full run: manifest (incomplete), suite, outputs, manifest (complete).
pub fn execute(spec: &ExperimentSpec, suite: Suite, dir: &Path, format: Format) -> anyhow::Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let hash = format!("{:016x}", spec.config_hash());
    let path_str = |p: PathBuf| p.to_string_lossy().into_owned();
    let mut manifest = RunManifest {
        config_hash: hash.clone(),
        tool_version: TOOL_VERSION.to_string(),
        suite: suite.name().to_string(),
        status: RunStatus::Incomplete,
        started_unix: now(),
        finished_unix: None,
        outputs: BTreeMap::new(),
        seed_ledger: path_str(dir.join("seeds.csv")),
        checks: Vec::new(),
    };
    write_manifest(dir, &manifest)?;
    write_atomic(&dir.join("spec.toml"), spec.to_toml().as_bytes())?;
    manifest.outputs.insert("spec".into(), path_str(dir.join("spec.toml")));

    let out = run_suite(spec, suite)?;

    match format {
        Format::Csv => {
            let p = dir.join("results.csv");
            write_atomic(&p, results_csv(&out.rows).as_bytes())?;
            manifest.outputs.insert("results".into(), path_str(p));
        }
        Format::Json => {
            let p = dir.join("results.json");
            write_atomic(&p, results_json(&out, &hash, suite).as_bytes())?;
            manifest.outputs.insert("results".into(), path_str(p));
        }
    }
    for (lambda, rows) in &out.regen {
        let name = format!("regen_lambda_{lambda}.csv");
        let mut s = String::from(REGEN_HEADER);
        s.push('\n');
        for r in rows {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        let p = dir.join(&name);
        write_atomic(&p, s.as_bytes())?;
        manifest.outputs.insert(format!("regen_lambda_{lambda}"), path_str(p));
    }
    write_atomic(&dir.join("seeds.csv"), seed_ledger_csv(&out.ledger).as_bytes())?;
    manifest.checks = out.checks;
    manifest.status = RunStatus::Complete;
    manifest.finished_unix = Some(now());
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn suites_partition_estimators() {
        use EstimatorKind::*;
        for k in [
            Speed, SpeedRegen, Sigma, Einstein, SteadyTimeavg, SteadyRegen, SteadyTorus, LambdaF, Girsanov, Expansion,
            Probes, VarianceDecay, Maxima, Regen,
        ] {
            let n = [Suite::Einstein, Suite::Expansion, Suite::Probes, Suite::RegenDiagnostics]
                .iter()
                .filter(|s| s.includes(k))
                .count();
            assert_eq!(n, 1, "{k:?}");
            assert!(Suite::All.includes(k));
        }
        assert_eq!("regen-diagnostics".parse::<Suite>().unwrap(), Suite::RegenDiagnostics);
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn csv_rows_have_documented_columns() {
        let spec = parse_config(
            "dimension = 2\nkappa = 2.0\nlaw = \"constant\"\nseed = 1\nlambda = [0.2]\nreplicas = 50\nestimators = [\"speed\"]\n",
        )
        .unwrap();
        let out = run_suite(&spec, Suite::Einstein).unwrap();
        let csv = results_csv(&out.rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        for l in lines {
            assert_eq!(l.split(',').count(), 10);
        }
        assert!(out.all_asserted_pass(), "{:?}", out.checks);
    }
}
