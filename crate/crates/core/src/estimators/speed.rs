use serde::{Deserialize, Serialize};

use super::{homogeneous_speed, par_map, require_bias, Estimate, RunSpec};
use crate::error::{LabError, Result};
use crate::lattice::{Coords, Move, Site, MAX_DIM};
use crate::regen::{default_lookahead, detect_approx_regenerations, HyperplaneGrid};
use crate::stats::{combined_se, ratio_one_dependent, slope_through_origin, weighted_mean, MeanVar};
use crate::walk::{run_walk, Walker};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedRoute {
    Lln,
    Regen,
}

/// v(lambda) as a d-vector.
pub fn estimate_speed(spec: &RunSpec, route: SpeedRoute) -> Result<Estimate> {
    require_bias(&spec.bias, "speed estimate")?;
    match route {
        SpeedRoute::Lln => Ok(speed_lln(spec)),
        SpeedRoute::Regen => speed_regen(spec),
    }
}

fn speed_lln(spec: &RunSpec) -> Estimate {
    let d = spec.dim();
    let n = spec.horizon.max(1);
    let ends = par_map(spec.replicas, |r| {
        let env = spec.env("speed", r);
        let mut rng = spec.stream("speed", r).rng();
        let origin = Site::origin(d).expect("validated dimension");
        let mut w = Walker::new(&env, &spec.bias, &origin);
        for _ in 0..n {
            w.step(&mut rng);
        }
        *w.position()
    });
    let mut acc = vec![MeanVar::new(); d];
    for x in &ends {
        for (i, a) in acc.iter_mut().enumerate() {
            a.push(x[i] as f64 / n as f64);
        }
    }
    Estimate::new(
        "speed_lln",
        acc.iter().map(|a| a.mean()).collect(),
        acc.iter().map(|a| a.stderr()).collect(),
        spec.replicas,
        spec.hash("speed_lln"),
    )
}

/// Positions of the path at the given increasing times.
fn positions_at(start: &Coords, steps: &[u8], times: &[usize]) -> Vec<Coords> {
    let mut out = Vec::with_capacity(times.len());
    let mut x = *start;
    let mut t = 0;
    for &target in times {
        while t < target {
            let mv = Move(steps[t] as usize);
            x[mv.axis()] += mv.sign();
            t += 1;
        }
        out.push(x);
    }
    out
}

fn speed_regen(spec: &RunSpec) -> Result<Estimate> {
    let d = spec.dim();
    let grid = HyperplaneGrid::new(&spec.bias)?;
    let lookahead = default_lookahead(&spec.bias)?;
    let blocks = par_map(spec.replicas, |r| -> Result<(Vec<f64>, Vec<[f64; MAX_DIM]>)> {
        let env = spec.env("speed", r);
        let origin = Site::origin(d)?;
        let path = run_walk(&env, &spec.bias, &origin, spec.horizon, &spec.stream("speed", r));
        let rec = detect_approx_regenerations(&path, &grid, lookahead)?;
        let pos = positions_at(origin.raw(), &path.steps, &rec.tau);
        let mut dtau = Vec::new();
        let mut dx = Vec::new();
        for k in 1..rec.len() {
            dtau.push((rec.tau[k] - rec.tau[k - 1]) as f64);
            let mut v = [0.0; MAX_DIM];
            for (i, vi) in v.iter_mut().enumerate().take(d) {
                *vi = (pos[k][i] - pos[k - 1][i]) as f64;
            }
            dx.push(v);
        }
        Ok((dtau, dx))
    });
    let mut dtau = Vec::new();
    let mut dx = vec![Vec::new(); d];
    for b in blocks {
        let (t, x) = b?;
        dtau.extend(t);
        for v in x {
            for i in 0..d {
                dx[i].push(v[i]);
            }
        }
    }
    if dtau.len() < 2 {
        return Err(LabError::NoRegeneration);
    }
    let (mut value, mut stderr) = (Vec::new(), Vec::new());
    for comp in &dx {
        let (r, se) = ratio_one_dependent(comp, &dtau);
        value.push(r);
        stderr.push(se);
    }
    Ok(Estimate::new("speed_regen", value, stderr, spec.replicas, spec.hash("speed_regen"))
        .with_note(format!("{} blocks, lookahead {lookahead}", dtau.len())))
}

/// Sigma = E[X_n X_n^T] / n under lambda = 0, Q_0-reweighted start.
pub fn estimate_sigma(spec: &RunSpec) -> Result<Estimate> {
    let spec = spec.with_lambda(0.0)?;
    let d = spec.dim();
    let n = spec.horizon.max(1);
    let runs = par_map(spec.replicas, |r| {
        let env = spec.env("sigma", r);
        let mut rng = spec.stream("sigma", r).rng();
        let origin = Site::origin(d).expect("validated dimension");
        let weight = env.q0_density(&origin);
        let mut w = Walker::new(&env, &spec.bias, &origin);
        for _ in 0..n {
            w.step(&mut rng);
        }
        (*w.position(), weight)
    });
    let weights: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let mut value = vec![0.0; d * d];
    let mut stderr = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let xs: Vec<f64> = runs
                .iter()
                .map(|(x, _)| (x[i] * x[j]) as f64 / n as f64)
                .collect();
            let (m, se) = weighted_mean(&xs, &weights);
            value[i * d + j] = m;
            value[j * d + i] = m;
            stderr[i * d + j] = se;
            stderr[j * d + i] = se;
        }
    }
    Ok(Estimate::new("sigma", value, stderr, spec.replicas, spec.hash("sigma")))
}

/// (Sigma ell)_i with standard errors, from a flattened Sigma estimate.
pub fn sigma_times(sigma: &Estimate, ell: &[f64]) -> Vec<(f64, f64)> {
    let d = ell.len();
    (0..d)
        .map(|i| {
            let v: f64 = (0..d).map(|j| sigma.value[i * d + j] * ell[j]).sum();
            let s: f64 = (0..d)
                .map(|j| (sigma.stderr[i * d + j] * ell[j]).powi(2))
                .sum::<f64>()
                .sqrt();
            (v, s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EinsteinRow {
    pub lambda: f64,
    pub horizon: usize,
    pub speed: Estimate,
    /// v_i / lambda with stderr.
    pub ratio: Vec<(f64, f64)>,
    /// (Sigma ell)_i with stderr.
    pub sigma_ell: Vec<(f64, f64)>,
    /// |v.ell / lambda - ell.Sigma.ell| and its combined stderr.
    pub gap: f64,
    pub gap_se: f64,
    /// Homogeneous closed form v.ell / lambda when the field is constant.
    pub closed_form: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EinsteinReport {
    pub rows: Vec<EinsteinRow>,
    pub sigma: Estimate,
    /// ell.Sigma.ell with stderr.
    pub sigma_ll: (f64, f64),
    pub slope: f64,
    pub slope_se: f64,
    /// Slope within 4 combined sigma of ell.Sigma.ell.
    pub slope_consistent: bool,
    /// Gap does not grow as lambda decreases, beyond 4 combined sigma.
    pub gap_monotone: bool,
}

/// v(lambda)/lambda against Sigma ell across a lambda grid. Speed horizons
/// are max(speed.horizon, horizon_scale / lambda^2).
pub fn einstein_report(speed: &RunSpec, sigma: &RunSpec, lambdas: &[f64], horizon_scale: f64) -> Result<EinsteinReport> {
    if lambdas.len() < 3 {
        return Err(crate::error::invalid("lambda", "the Einstein report needs at least 3 values"));
    }
    let ell = speed.bias.ell().to_vec();
    let sig = estimate_sigma(sigma)?;
    let sigma_ell = sigma_times(&sig, &ell);
    let sll: f64 = sigma_ell.iter().zip(&ell).map(|((v, _), l)| v * l).sum();
    let sll_se = sigma_ell
        .iter()
        .zip(&ell)
        .map(|((_, s), l)| (s * l).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let constant = speed.field.law.constant_value(speed.field.kappa).is_some();
    let mut rows = Vec::new();
    for &lambda in &sorted {
        let horizon = speed.horizon.max((horizon_scale / (lambda * lambda)).ceil() as usize);
        let spec = speed.with_lambda(lambda)?.with_horizon(horizon);
        let est = estimate_speed(&spec, SpeedRoute::Lln)?;
        let ratio: Vec<(f64, f64)> = est
            .value
            .iter()
            .zip(&est.stderr)
            .map(|(v, s)| (v / lambda, s / lambda))
            .collect();
        let along: f64 = ratio.iter().zip(&ell).map(|((v, _), l)| v * l).sum();
        let along_se = ratio
            .iter()
            .zip(&ell)
            .map(|((_, s), l)| (s * l).powi(2))
            .sum::<f64>()
            .sqrt();
        let closed_form = constant.then(|| {
            let v = homogeneous_speed(&spec.bias);
            v.iter().zip(&ell).map(|(a, b)| a * b).sum::<f64>() / lambda
        });
        rows.push(EinsteinRow {
            lambda,
            horizon,
            speed: est,
            ratio,
            sigma_ell: sigma_ell.clone(),
            gap: (along - sll).abs(),
            gap_se: combined_se(along_se, sll_se),
            closed_form,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let ys: Vec<f64> = rows
        .iter()
        .map(|r| r.speed.value.iter().zip(&ell).map(|(v, l)| v * l).sum())
        .collect();
    let ses: Vec<f64> = rows
        .iter()
        .map(|r| {
            r.speed
                .stderr
                .iter()
                .zip(&ell)
                .map(|(s, l)| (s * l).powi(2))
                .sum::<f64>()
                .sqrt()
                .max(1e-300)
        })
        .collect();
    let (slope, slope_se) = slope_through_origin(&xs, &ys, &ses);
    let slope_consistent = (slope - sll).abs() <= 4.0 * combined_se(slope_se, sll_se);
    let gap_monotone = rows
        .windows(2)
        .all(|w| w[0].gap <= w[1].gap + 4.0 * combined_se(w[0].gap_se, w[1].gap_se));
    Ok(EinsteinReport {
        rows,
        sigma: sig,
        sigma_ll: (sll, sll_se),
        slope,
        slope_se,
        slope_consistent,
        gap_monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{BiasSpec, ConductanceField, Law};

    fn homogeneous(lambda: f64) -> RunSpec {
        let field = ConductanceField::new(2, 2.0, Law::Constant { value: 1.0 }, 0).unwrap();
        RunSpec::new(field, BiasSpec::along_e1(2, lambda, 2).unwrap(), 2_000, 400, 3).unwrap()
    }

    #[test]
    fn lln_speed_homogeneous() {
        let est = estimate_speed(&homogeneous(0.2), SpeedRoute::Lln).unwrap();
        let (v, se) = est.component(0);
        assert!((v - 0.1f64.tanh()).abs() <= 4.0 * se, "{v} {se}");
        assert!(est.value[1].abs() <= 4.0 * est.stderr[1]);
        assert!(est.is_valid());
    }

    #[test]
    fn speed_is_deterministic() {
        let a = estimate_speed(&homogeneous(0.2).with_replicas(20), SpeedRoute::Lln).unwrap();
        let b = estimate_speed(&homogeneous(0.2).with_replicas(20), SpeedRoute::Lln).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn regen_speed_homogeneous() {
        let spec = homogeneous(0.2).with_horizon(40_000).with_replicas(20);
        let est = estimate_speed(&spec, SpeedRoute::Regen).unwrap();
        let (v, se) = est.component(0);
        assert!((v - 0.1f64.tanh()).abs() <= 4.0 * se, "{v} {se}");
    }

    #[test]
    fn sigma_homogeneous_and_symmetric() {
        let spec = homogeneous(0.0).with_horizon(200).with_replicas(4000);
        let s = estimate_sigma(&spec).unwrap();
        assert_eq!(s.value[1], s.value[2]);
        for i in 0..2 {
            assert!((s.value[3 * i] - 0.5).abs() <= 4.0 * s.stderr[3 * i]);
        }
        assert!(s.value[1].abs() <= 4.0 * s.stderr[1]);
    }

    #[test]
    fn speed_needs_bias() {
        assert!(estimate_speed(&homogeneous(0.0), SpeedRoute::Lln).is_err());
    }

    #[test]
    fn einstein_needs_three_points() {
        let s = homogeneous(0.1);
        assert!(einstein_report(&s, &s, &[0.1, 0.2], 10.0).is_err());
    }
}
