use serde::{Deserialize, Serialize};

use super::{f_at, par_map, require_bias, Estimate, RunSpec};
use crate::error::{invalid, Result};
use crate::lattice::{Move, Site};
use crate::regen::right_before_left;
use crate::rng::uniform;
use crate::stats::{combined_se, weighted_line_fit, weighted_mean, MeanVar};
use crate::walk::{LocalFunction, Walker};

fn bernoulli(hits: usize, n: usize) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingProbe {
    pub l0: u32,
    pub estimate: Estimate,
    /// Point estimate >= 2/3 - 4 sigma.
    pub pass: bool,
}

/// (a) P(T_1 < T_-1): one walk per fresh environment, run until one of the
/// two levels is hit or max(horizon, 400 L1 / lambda) steps have passed.
pub fn probe_left_right(spec: &RunSpec) -> Result<HittingProbe> {
    require_bias(&spec.bias, "hitting probe")?;
    let l1 = spec.bias.l1().expect("positive tilt");
    let cap = spec.horizon.max((400.0 * l1 as f64 / spec.bias.lambda) as usize);
    let wins = par_map(spec.replicas, |r| {
        let env = spec.env("probe-a", r);
        let mut rng = spec.stream("probe-a", r).rng();
        right_before_left(&env, &spec.bias, l1, cap, &mut rng).unwrap_or(false)
    });
    let (p, se) = bernoulli(wins.iter().filter(|&&w| w).count(), spec.replicas);
    Ok(HittingProbe {
        l0: spec.bias.l0,
        estimate: Estimate::scalar("probe_left_right", p, se, spec.replicas, spec.hash("probe-a")),
        pass: p >= 2.0 / 3.0 - 4.0 * se,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktrackProbe {
    /// (n, frequency, stderr, bound 2^-n)
    pub rows: Vec<(u32, f64, f64, f64)>,
    pub pass: bool,
}

/// (b) frequency of reaching (X - X_0).e1 <= -n L1 / 4 within the horizon.
pub fn probe_backtrack(spec: &RunSpec, max_n: u32) -> Result<BacktrackProbe> {
    require_bias(&spec.bias, "backtrack probe")?;
    let l1 = spec.bias.l1().expect("positive tilt");
    let minima = par_map(spec.replicas, |r| {
        let env = spec.env("probe-b", r);
        let mut rng = spec.stream("probe-b", r).rng();
        let mut w = Walker::new(&env, &spec.bias, &Site::origin(spec.dim()).expect("dim"));
        let mut low = 0i64;
        for _ in 0..spec.horizon {
            w.step(&mut rng);
            low = low.min(w.position()[0]);
        }
        low
    });
    let rows: Vec<(u32, f64, f64, f64)> = (1..=max_n)
        .map(|n| {
            let depth = n as i64 * l1 / 4;
            let (p, se) = bernoulli(minima.iter().filter(|&&m| m <= -depth).count(), spec.replicas);
            (n, p, se, 0.5f64.powi(n as i32))
        })
        .collect();
    let pass = rows.iter().all(|&(_, p, se, b)| p <= b + 4.0 * se);
    Ok(BacktrackProbe { rows, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTimeProbe {
    pub c: f64,
    /// (n, P(T_n >= c n / lambda^2), stderr)
    pub rows: Vec<(u32, f64, f64)>,
}

/// (c) tail of the level hitting times at fixed c.
pub fn probe_level_times(spec: &RunSpec, levels: u32, c: f64) -> Result<LevelTimeProbe> {
    require_bias(&spec.bias, "level-time probe")?;
    let l1 = spec.bias.l1().expect("positive tilt");
    let lam2 = spec.bias.lambda * spec.bias.lambda;
    let cap = ((c * levels as f64 / lam2).ceil() as usize).max(1);
    let times = par_map(spec.replicas, |r| {
        let env = spec.env("probe-c", r);
        let mut rng = spec.stream("probe-c", r).rng();
        let mut w = Walker::new(&env, &spec.bias, &Site::origin(spec.dim()).expect("dim"));
        let mut hit = vec![usize::MAX; levels as usize];
        let mut next = 0usize;
        for t in 1..=cap {
            w.step(&mut rng);
            while next < levels as usize && w.position()[0] >= (next as i64 + 1) * l1 {
                hit[next] = t;
                next += 1;
            }
            if next == levels as usize {
                break;
            }
        }
        hit
    });
    let rows = (1..=levels)
        .map(|n| {
            let limit = c * n as f64 / lam2;
            let late = times
                .iter()
                .filter(|h| h[n as usize - 1] == usize::MAX || h[n as usize - 1] as f64 >= limit)
                .count();
            let (p, se) = bernoulli(late, spec.replicas);
            (n, p, se)
        })
        .collect();
    Ok(LevelTimeProbe { c, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxMomentProbe {
    /// (p, t, E[max_{s<=t} |lambda X_{s/lambda^2}|^p] / t^p, stderr)
    pub rows: Vec<(u32, f64, f64, f64)>,
    /// For every p the normalized moment does not grow along the t grid
    /// beyond 4 combined sigma.
    pub pass: bool,
}

/// (d) normalized moments of the running maximum of the rescaled walk.
pub fn probe_max_moments(spec: &RunSpec, ts: &[f64], ps: &[u32]) -> Result<MaxMomentProbe> {
    require_bias(&spec.bias, "maximum probe")?;
    let lambda = spec.bias.lambda;
    let mut ts = ts.to_vec();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let checkpoints: Vec<usize> = ts.iter().map(|t| (t / (lambda * lambda)).round() as usize).collect();
    let maxima = par_map(spec.replicas, |r| {
        let env = spec.env("probe-d", r);
        let mut rng = spec.stream("probe-d", r).rng();
        let mut w = Walker::new(&env, &spec.bias, &Site::origin(spec.dim()).expect("dim"));
        let mut best = 0.0f64;
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut s = 0;
        for &cp in &checkpoints {
            while s < cp {
                w.step(&mut rng);
                let norm2: f64 = w.position().iter().map(|&c| (c * c) as f64).sum();
                best = best.max(norm2);
                s += 1;
            }
            out.push(lambda * best.sqrt());
        }
        out
    });
    let mut rows = Vec::new();
    let mut pass = true;
    for &p in ps {
        let mut prev: Option<(f64, f64)> = None;
        for (k, &t) in ts.iter().enumerate() {
            let acc = MeanVar::from_slice(&maxima.iter().map(|m| m[k].powi(p as i32)).collect::<Vec<_>>());
            let scale = t.powi(p as i32);
            let (v, se) = (acc.mean() / scale, acc.stderr() / scale);
            if let Some((pv, pse)) = prev {
                if v > pv + 4.0 * combined_se(se, pse) {
                    pass = false;
                }
            }
            prev = Some((v, se));
            rows.push((p, t, v, se));
        }
    }
    Ok(MaxMomentProbe { rows, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityProbe {
    pub covariance: Estimate,
    pub t_stat: f64,
    pub pass: bool,
}

/// (e) Cov(X_n.e1, sum_{k<n} f(omega_k)) under Q_0-reweighted unperturbed runs.
pub fn probe_orthogonality(spec: &RunSpec, f: &LocalFunction) -> Result<OrthogonalityProbe> {
    let spec = spec.with_lambda(0.0)?;
    let n = spec.horizon;
    let runs = par_map(spec.replicas, |r| {
        let env = spec.env("probe-e", r);
        let mut rng = spec.stream("probe-e", r).rng();
        let origin = Site::origin(spec.dim()).expect("dim");
        let weight = env.q0_density(&origin);
        let mut w = Walker::new(&env, &spec.bias, &origin);
        let mut fsum = 0.0;
        for _ in 0..n {
            fsum += f_at(&mut w, &env, f);
            w.step(&mut rng);
        }
        (w.position()[0] as f64, fsum, weight)
    });
    let ws: Vec<f64> = runs.iter().map(|r| r.2).collect();
    let (mx, _) = weighted_mean(&runs.iter().map(|r| r.0).collect::<Vec<_>>(), &ws);
    let (mf, _) = weighted_mean(&runs.iter().map(|r| r.1).collect::<Vec<_>>(), &ws);
    let prod: Vec<f64> = runs.iter().map(|r| (r.0 - mx) * (r.1 - mf)).collect();
    let (c, se) = weighted_mean(&prod, &ws);
    let t_stat = if se > 0.0 { c / se } else { 0.0 };
    Ok(OrthogonalityProbe {
        covariance: Estimate::scalar("probe_orthogonality", c, se, spec.replicas, spec.hash("probe-e")),
        t_stat,
        pass: t_stat.abs() <= 4.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecayProbe {
    /// (n, E[(E_omega f(omega_n) - Q_0 f)^2], stderr)
    pub rows: Vec<(usize, f64, f64)>,
    pub slope: f64,
    pub slope_se: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// (f) nested Monte Carlo for the decay of Var_Q0(E_omega f(omega_n)).
/// Outer environments are drawn from Q_0 by rejection; each gets `inner`
/// unperturbed walks, and the square of the inner mean is estimated without
/// bias by the pair U-statistic.
pub fn probe_variance_decay(spec: &RunSpec, f: &LocalFunction, times: &[usize], inner: usize) -> Result<VarianceDecayProbe> {
    if inner < 2 {
        return Err(invalid("inner", "need at least 2 inner walks"));
    }
    if times.len() < 2 {
        return Err(invalid("times", "need at least 2 times"));
    }
    let spec = spec.with_lambda(0.0)?;
    let d = spec.dim();
    let q0 = f.q0_mean(&spec.field);
    let mut times = times.to_vec();
    times.sort_unstable();
    let last = *times.last().unwrap();
    let bound = 2.0 * d as f64 * spec.field.kappa;
    let per_env = par_map(spec.replicas, |r| {
        let origin = Site::origin(d).expect("dim");
        let mut accept = spec.stream("probe-f-accept", r).rng();
        let mut attempt = 0u64;
        let env = loop {
            let candidate = spec
                .field
                .with_seed(crate::rng::derive_seed(spec.seed, "probe-f-env", r.wrapping_mul(1 << 20) + attempt));
            attempt += 1;
            if uniform(&mut accept) * bound < candidate.q0_weight(&origin) {
                break candidate;
            }
        };
        let mut rng = spec.stream("probe-f", r).rng();
        let mut sums = vec![0.0; times.len()];
        let mut squares = vec![0.0; times.len()];
        for _ in 0..inner {
            let mut w = Walker::new(&env, &spec.bias, &origin);
            let mut k = 0;
            for s in 0..=last {
                if s == times[k] {
                    let v = f_at(&mut w, &env, f) - q0;
                    sums[k] += v;
                    squares[k] += v * v;
                    k += 1;
                    if k == times.len() {
                        break;
                    }
                }
                w.step(&mut rng);
            }
        }
        let m = inner as f64;
        sums.iter()
            .zip(&squares)
            .map(|(s, q)| (s * s - q) / (m * (m - 1.0)))
            .collect::<Vec<f64>>()
    });
    let mut rows = Vec::new();
    for (k, &n) in times.iter().enumerate() {
        let acc = MeanVar::from_slice(&per_env.iter().map(|v| v[k]).collect::<Vec<_>>());
        rows.push((n, acc.mean(), acc.stderr()));
    }
    let usable: Vec<&(usize, f64, f64)> = rows.iter().filter(|r| r.1 > 0.0).collect();
    let (slope, slope_se) = if usable.len() >= 2 {
        let x: Vec<f64> = usable.iter().map(|r| (r.0 as f64).ln()).collect();
        let y: Vec<f64> = usable.iter().map(|r| r.1.ln()).collect();
        let se: Vec<f64> = usable.iter().map(|r| (r.2 / r.1).max(1e-12)).collect();
        let fit = weighted_line_fit(&x, &y, &se);
        (fit.slope, fit.slope_se)
    } else {
        (f64::NAN, f64::NAN)
    };
    let threshold = -(d as f64) / 2.0 + 0.2;
    Ok(VarianceDecayProbe {
        rows,
        slope,
        slope_se,
        threshold,
        pass: slope <= threshold,
    })
}

/// Increment functional g(omega_k, X_{k+1} - X_k) for the maxima probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Increment {
    Zero,
    Displacement { axis: usize },
    Local { f: LocalFunction },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximaProbe {
    /// (n, L^{3/2} norm of max_{m <= n/lambda^2} |lambda sum_{k<m} g|, stderr)
    pub rows: Vec<(u32, f64, f64)>,
    /// log C and c of the envelope C exp(c sqrt(n)) fitted on the first three n.
    pub envelope: Option<(f64, f64)>,
    pub pass: bool,
}

/// L^{3/2} norms of the running maximum of lambda-scaled additive functionals.
pub fn maxima_moment_probe(spec: &RunSpec, g: &Increment, ns: &[u32]) -> Result<MaximaProbe> {
    require_bias(&spec.bias, "maxima probe")?;
    if ns.len() < 4 {
        return Err(invalid("n", "need three fit points and one check point"));
    }
    let lambda = spec.bias.lambda;
    let checkpoints: Vec<usize> = ns
        .iter()
        .map(|&n| (n as f64 / (lambda * lambda)).round() as usize)
        .collect();
    let maxima = par_map(spec.replicas, |r| {
        let env = spec.env("maxima", r);
        let mut rng = spec.stream("maxima", r).rng();
        let mut w = Walker::new(&env, &spec.bias, &Site::origin(spec.dim()).expect("dim"));
        let (mut sum, mut best) = (0.0f64, 0.0f64);
        let mut out = Vec::new();
        let mut s = 0;
        for &cp in &checkpoints {
            while s < cp {
                let before = match g {
                    Increment::Local { f } => f_at(&mut w, &env, f),
                    _ => 0.0,
                };
                let m = w.step(&mut rng);
                sum += match g {
                    Increment::Zero => 0.0,
                    Increment::Displacement { axis } => {
                        let mv = Move(m);
                        if mv.axis() == *axis {
                            mv.sign() as f64
                        } else {
                            0.0
                        }
                    }
                    Increment::Local { .. } => before,
                };
                best = best.max((lambda * sum).abs());
                s += 1;
            }
            out.push(best);
        }
        out
    });
    let mut rows = Vec::new();
    for (k, &n) in ns.iter().enumerate() {
        let acc = MeanVar::from_slice(&maxima.iter().map(|m| m[k].powf(1.5)).collect::<Vec<_>>());
        let norm = acc.mean().powf(2.0 / 3.0);
        let se = if acc.mean() > 0.0 {
            acc.stderr() * (2.0 / 3.0) * acc.mean().powf(-1.0 / 3.0)
        } else {
            0.0
        };
        rows.push((n, norm, se));
    }
    if rows.iter().all(|r| r.1 == 0.0) {
        return Ok(MaximaProbe {
            rows,
            envelope: None,
            pass: true,
        });
    }
    let fit_rows = &rows[..3];
    let x: Vec<f64> = fit_rows.iter().map(|r| (r.0 as f64).sqrt()).collect();
    let y: Vec<f64> = fit_rows.iter().map(|r| r.1.ln()).collect();
    let se: Vec<f64> = fit_rows.iter().map(|r| (r.2 / r.1).max(1e-12)).collect();
    let fit = weighted_line_fit(&x, &y, &se);
    let pass = rows[3..].iter().all(|&(n, v, s)| {
        let envelope = (fit.intercept + fit.slope * (n as f64).sqrt()).exp();
        v - 4.0 * s <= envelope
    });
    Ok(MaximaProbe {
        rows,
        envelope: Some((fit.intercept, fit.slope)),
        pass,
    })
}
