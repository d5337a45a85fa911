//! Acceptance criteria, one pass/fail line each. `ACCEPTANCE_ONLY=2,5`
//! restricts the run to the listed criteria.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use conductance_lab::config::parse_config;
use conductance_lab::estimators::*;
use conductance_lab::exact::{enumerate_paths_expectation, hitting_distribution, FiniteNetwork};
use conductance_lab::harness::{execute, Format, Suite};
use conductance_lab::lattice::{Coords, Environment};
use conductance_lab::regen::{
    calibrate_l0, coin_trick_sample, inter_regen_summary, CoinStream, CylinderEnv, SlabChain, SlabProblem,
};
use conductance_lab::rng::{derive_seed, StreamId};
use conductance_lab::stats::{combined_se, exp_moment, pooled_autocorrelation};
use conductance_lab::walk::{decompose_path, girsanov_weight};
use conductance_lab::error::LabError;
use conductance_lab::{BiasSpec, ConductanceField, Law, LocalFunction, Site, Walker};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn two_point(d: usize, seed: u64) -> ConductanceField {
    ConductanceField::new(d, 2.0, Law::TwoPoint { p: 0.5 }, seed).unwrap()
}

fn homogeneous_speed_closed_form() -> Outcome {
    let field = ConductanceField::new(2, 2.0, Law::Constant { value: 1.0 }, 1).unwrap();
    let bias = BiasSpec::along_e1(2, 0.2, 2).unwrap();
    let spec = RunSpec::new(field, bias, 10_000, 100_000, 11).unwrap();
    let est = estimate_speed(&spec, SpeedRoute::Lln).unwrap();
    let (v, se) = est.component(0);
    let exact = 0.1f64.tanh();
    outcome(
        (v - exact).abs() <= 4.0 * se,
        format!("v.e1 = {v:.6} +- {se:.1e}, tanh(0.1) = {exact:.6}"),
    )
}

fn einstein_relation() -> Outcome {
    let field = two_point(2, 2);
    let speed = RunSpec::new(field, BiasSpec::along_e1(2, 0.1, 2).unwrap(), 1, 1000, 21).unwrap();
    let sigma = speed.with_horizon(4000).with_replicas(150_000);
    let rep = einstein_report(&speed, &sigma, &[0.05, 0.1, 0.2], 2000.0).unwrap();
    let gaps: Vec<String> = rep
        .rows
        .iter()
        .map(|r| format!("{}:{:.4}+-{:.4}", r.lambda, r.gap, r.gap_se))
        .collect();
    outcome(
        rep.slope_consistent && rep.gap_monotone,
        format!(
            "slope {:.4} +- {:.4}, Sigma11 {:.4} +- {:.4}, gaps [{}]",
            rep.slope,
            rep.slope_se,
            rep.sigma_ll.0,
            rep.sigma_ll.1,
            gaps.join(" ")
        ),
    )
}

fn steady_state_routes() -> Outcome {
    let f = LocalFunction::first_bond();
    let base = RunSpec::new(two_point(2, 3), BiasSpec::along_e1(2, 0.2, 2).unwrap(), 20_000, 1000, 31).unwrap();
    let (_, exact, diff) = torus_route_comparison(&base, &f, 3).unwrap();
    let torus_ok = diff.value().abs() <= 4.0 * diff.se();
    let timeavg = estimate_steady_state(&base.with_horizon(5_000).with_replicas(4000), &f, SteadyRoute::Timeavg).unwrap();
    let regen = estimate_steady_state(&base.with_horizon(50_000).with_replicas(400), &f, SteadyRoute::Regen).unwrap();
    let se = combined_se(timeavg.se(), regen.se());
    let lattice_ok = (timeavg.value() - regen.value()).abs() <= 4.0 * se;
    outcome(
        torus_ok && lattice_ok,
        format!(
            "torus exact {:.5}, timeavg - exact {:.2e} +- {:.1e}; lattice timeavg {:.5} +- {:.1e}, regen {:.5} +- {:.1e}",
            exact.value(),
            diff.value(),
            diff.se(),
            timeavg.value(),
            timeavg.se(),
            regen.value(),
            regen.se()
        ),
    )
}

fn expansion_report() -> Outcome {
    let field = two_point(3, 4);
    let f = LocalFunction::first_bond();
    let f = f.clone().centered(f.q0_mean(&field));
    let steady = RunSpec::new(field, BiasSpec::along_e1(3, 0.1, 2).unwrap(), 40_000, 2500, 41).unwrap();
    let lambda_spec = steady.with_replicas(200_000);
    let plan = ExpansionPlan {
        lambdas: vec![0.05, 0.1],
        horizon_scale: 100.0,
        clt_lambdas: vec![0.05, 0.1, 0.2],
        girsanov_lambda: 0.2,
        girsanov_ts: vec![1.0],
    };
    let rep = steady_state_expansion_report(&steady, &lambda_spec, &f, &plan).unwrap();
    let g = &rep.girsanov[0];
    let g_ok = g.difference.value().abs() <= 4.0 * g.difference.se();
    let rows: Vec<String> = rep
        .rows
        .iter()
        .map(|r| format!("{}:{:.4}+-{:.4}", r.lambda, r.ratio, r.ratio_se))
        .collect();
    outcome(
        rep.consistent && g_ok,
        format!(
            "ratios [{}], Lambda f {:.4} +- {:.4}, Girsanov {:.4} vs clt_cov {:.4}, paired difference {:.4} +- {:.4}",
            rows.join(" "),
            rep.lambda_f.value(),
            rep.lambda_f.se(),
            g.girsanov.value(),
            g.clt_cov.value(),
            g.difference.value(),
            g.difference.se()
        ),
    )
}

fn girsanov_exactness() -> Outcome {
    let laws = [
        Law::TwoPoint { p: 0.3 },
        Law::Uniform,
        Law::LogUniform,
        Law::TwoPoint { p: 0.5 },
    ];
    let mut worst_g = 0.0f64;
    let mut worst_m = 0.0f64;
    for s in 0..50u64 {
        let d = 2 + (s % 2) as usize;
        let kappa = 1.5 + (s % 7) as f64 * 0.4;
        let field = ConductanceField::new(d, kappa, laws[(s % 4) as usize], 1000 + s).unwrap();
        let lambda = 0.05 + 0.45 * ((s * 37) % 50) as f64 / 50.0;
        let mut ell = vec![0.0; d];
        if s % 3 == 0 {
            ell[0] = 0.8;
            ell[1] = 0.6;
        } else {
            ell[0] = 1.0;
        }
        let tilted = BiasSpec::new(lambda, &ell, 2).unwrap();
        let flat = tilted.with_lambda(0.0).unwrap();
        let start = Site::origin(d).unwrap();
        for n in 1..=6 {
            let g = enumerate_paths_expectation(&field, &flat, &start, n, &mut |p| girsanov_weight(&field, &tilted, p))
                .unwrap();
            let m = enumerate_paths_expectation(&field, &flat, &start, n, &mut |p| {
                decompose_path(&field, &flat, p).unwrap().martingale[n]
            })
            .unwrap();
            worst_g = worst_g.max((g - 1.0).abs());
            worst_m = worst_m.max(m.abs());
        }
    }
    outcome(
        worst_g <= 1e-10 && worst_m <= 1e-10,
        format!("max |E[G] - 1| = {worst_g:.1e}, max |E[M_n]| = {worst_m:.1e}"),
    )
}

/// The cylinder of the slab problem as a plain network, built site by site.
fn cylinder_network(cyl: &CylinderEnv, bias: &BiasSpec, lo: i64, hi: i64) -> FiniteNetwork {
    let d = cyl.dim();
    let nt = cyl.transverse_count();
    let mut positions: Vec<Coords> = Vec::new();
    for x0 in lo..=hi {
        for t in 0..nt {
            let mut c = cyl.transverse_coords(t);
            c[0] = x0;
            positions.push(c);
        }
    }
    let index = |x0: i64, t: usize| ((x0 - lo) as usize) * nt + t;
    let mut edges = Vec::new();
    for (i, x) in positions.iter().enumerate() {
        for axis in 0..d {
            let mut y = *x;
            y[axis] += 1;
            if y[0] > hi {
                continue;
            }
            let c = cyl.conductance_from(x, axis);
            if c <= 0.0 {
                continue;
            }
            let s: f64 = (0..d).map(|k| (x[k] + y[k]) as f64 * bias.ell()[k]).sum();
            edges.push((i, index(y[0], cyl.transverse_index(&y)), c * (bias.lambda * s).exp()));
        }
    }
    let absorbing = positions.iter().map(|p| p[0] == hi).collect();
    FiniteNetwork::from_edges(d, positions, &edges, absorbing).unwrap()
}

fn exit_law_oracle() -> Outcome {
    let field = ConductanceField::new(2, 2.0, Law::Uniform, 61).unwrap();
    let bias = BiasSpec::along_e1(2, 0.25, 2).unwrap();
    let backstop = 2;
    let slab = SlabProblem::new(field, bias, 4, backstop).unwrap();
    let l1 = slab.spacing();
    let cyl = *slab.environment();
    let net = cylinder_network(&cyl, &bias, -backstop * l1, l1);
    let origin = Site::origin(2).unwrap();
    let start = net.index_of(origin.coords()).unwrap();
    let law = hitting_distribution(&net, start).unwrap();
    let nt = cyl.transverse_count();
    let exact: Vec<f64> = (0..nt)
        .map(|t| {
            let mut c = cyl.transverse_coords(t);
            c[0] = l1;
            law.prob_of(net.index_of(&c[..2]).unwrap())
        })
        .collect();
    let walks = 100_000u64;
    let hits: Vec<usize> = (0..walks)
        .map(|r| {
            let mut rng = StreamId::new(62, "exit-law", r).rng();
            let mut w = Walker::new(&cyl, &bias, &origin);
            while w.position()[0] < l1 {
                w.step(&mut rng);
            }
            cyl.transverse_index(w.position())
        })
        .collect();
    let mut freq_ok = true;
    let mut worst_z = 0.0f64;
    for (t, p) in exact.iter().enumerate() {
        let k = hits.iter().filter(|&&h| h == t).count() as f64;
        let q = k / walks as f64;
        let se = (p * (1.0 - p) / walks as f64).sqrt();
        let z = (q - p).abs() / se.max(1e-300);
        worst_z = worst_z.max(z);
        freq_ok &= (q - p).abs() <= 4.0 * se;
    }
    let x0 = cyl.transverse_index(origin.raw());
    let mut mixture_err = 0.0f64;
    let mut nu_err = 0.0f64;
    for n in 0..3 {
        let plain = slab.mu_decomposition(n, None).unwrap();
        let beta = 0.9 * plain.beta_max;
        let dec = slab.mu_decomposition(n, Some(beta)).unwrap();
        let mu0 = dec.mu0.as_ref().unwrap();
        for x in 0..nt {
            for w in 0..nt {
                let mix = beta * dec.mu1[x][w] + (1.0 - beta) * mu0[x][w];
                mixture_err = mixture_err.max((mix - dec.nu[x][w]).abs());
            }
        }
        if n == 0 {
            for (w, p) in exact.iter().enumerate() {
                nu_err = nu_err.max((dec.nu[x0][w] - p).abs());
            }
        }
    }
    outcome(
        freq_ok && mixture_err <= 1e-12 && nu_err <= 1e-10,
        format!("worst |z| = {worst_z:.2}, mixture error {mixture_err:.1e}, slab vs network {nu_err:.1e}"),
    )
}

fn a_priori_probes() -> Outcome {
    let field = two_point(2, 7);
    let bias = BiasSpec::along_e1(2, 0.1, 1).unwrap();
    let cal = calibrate_l0(&field, &bias, 20, 1000, 71).unwrap();
    let spec = RunSpec::new(field, bias.with_l0(cal.l0).unwrap(), 10_000, 20_000, 72).unwrap();
    let a = probe_left_right(&spec).unwrap();
    let b = probe_backtrack(&spec.with_replicas(10_000), 6).unwrap();
    let d = probe_max_moments(&spec.with_replicas(5000), &[0.5, 1.0, 2.0, 4.0], &[1, 2, 4]).unwrap();
    let back: Vec<String> = b.rows.iter().map(|r| format!("{}:{:.4}", r.0, r.1)).collect();
    outcome(
        a.pass && b.pass && d.pass,
        format!(
            "L0 = {}, P(T1 < T-1) = {:.4} +- {:.4}, backtrack [{}], max moments flat: {}",
            cal.l0,
            a.estimate.value(),
            a.estimate.se(),
            back.join(" "),
            d.pass
        ),
    )
}

fn regeneration_structure() -> Outcome {
    let f = LocalFunction::first_bond();
    let c = 0.05;
    let mut lag2_ok = true;
    let mut parts = Vec::new();
    let mut moments = Vec::new();
    for (i, &lambda) in [0.1, 0.15, 0.2].iter().enumerate() {
        let bias = BiasSpec::along_e1(2, lambda, 2).unwrap();
        let replicas = 600u64;
        let runs: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..replicas)
            .map(|r| {
                let field = two_point(2, derive_seed(81 + i as u64, "regen-env", r));
                let slab = SlabProblem::new(field, bias, 4, 1).unwrap();
                let chain = SlabChain::build(slab, 16).unwrap();
                let coins = CoinStream::new(0.9 * chain.beta_max(), derive_seed(82, "coins", r)).unwrap();
                let mut rng = StreamId::new(83 + i as u64, "regen-walk", r).rng();
                let (path, rec) = match coin_trick_sample(&chain, &coins, &mut rng, 2) {
                    Ok(x) => x,
                    Err(LabError::NoRegeneration) => return None,
                    Err(e) => panic!("{e}"),
                };
                let s = match inter_regen_summary(&rec, &path, chain.problem().environment(), Some(&f)) {
                    Ok(s) => s,
                    Err(LabError::TooFewBlocks { .. }) => return None,
                    Err(e) => panic!("{e}"),
                };
                Some((s.dx, s.dtau))
            })
            .collect();
        let seqs: Vec<Vec<f64>> = runs.iter().flatten().map(|r| r.0.clone()).collect();
        let dx: Vec<f64> = seqs.iter().flatten().map(|x| lambda * x).collect();
        let dt: Vec<f64> = runs
            .iter()
            .flatten()
            .flat_map(|r| r.1.iter().map(|t| lambda * lambda * t))
            .collect();
        let (rho, se) = pooled_autocorrelation(&seqs, 2);
        lag2_ok &= rho.abs() <= 4.0 * se;
        let mx = exp_moment(&dx, c);
        let mt = exp_moment(&dt, c);
        moments.push((mx, mt));
        parts.push(format!(
            "lambda {lambda}: {} blocks, rho2 {rho:.3} +- {se:.3}, E e^(c l dx) {:.3} +- {:.3}, E e^(c l^2 dt) {:.3} +- {:.3}",
            dx.len(),
            mx.0,
            mx.1,
            mt.0,
            mt.1
        ));
    }
    let finite = moments
        .iter()
        .all(|(x, t)| x.0.is_finite() && t.0.is_finite() && x.1 < 0.25 * x.0 && t.1 < 0.25 * t.0);
    let spread = |sel: &dyn Fn(&((f64, f64), (f64, f64))) -> f64| {
        let v: Vec<f64> = moments.iter().map(sel).collect();
        v.iter().cloned().fold(f64::MIN, f64::max) / v.iter().cloned().fold(f64::MAX, f64::min)
    };
    let stable = spread(&|m| m.0 .0) <= 2.0 && spread(&|m| m.1 .0) <= 2.0;
    outcome(lag2_ok && finite && stable, parts.join("; "))
}

fn variance_decay() -> Outcome {
    let field = two_point(3, 9);
    let spec = RunSpec::new(field, BiasSpec::along_e1(3, 0.0, 2).unwrap(), 128, 100_000, 91).unwrap();
    let p = probe_variance_decay(&spec, &LocalFunction::first_bond(), &[8, 16, 32, 64, 128], 64).unwrap();
    let rows: Vec<String> = p.rows.iter().map(|r| format!("{}:{:.2e}+-{:.1e}", r.0, r.1, r.2)).collect();
    outcome(
        p.slope <= -1.3,
        format!("slope {:.3} +- {:.3} (threshold -1.3), [{}]", p.slope, p.slope_se, rows.join(" ")),
    )
}

fn determinism() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, suite) in [("smoke.toml", Suite::All), ("probes_d2.toml", Suite::Probes)] {
        let spec = parse_config(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        execute(&spec, suite, a.path(), Format::Csv).unwrap();
        execute(&spec, suite, b.path(), Format::Csv).unwrap();
        let ra = std::fs::read(a.path().join("results.csv")).unwrap();
        let rb = std::fs::read(b.path().join("results.csv")).unwrap();
        let same = ra == rb && !ra.is_empty();
        pass &= same;
        parts.push(format!("{name}: {} bytes, identical {same}", ra.len()));
    }
    outcome(pass, parts.join("; "))
}

type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        (1, "homogeneous closed form", Duration::from_secs(120), homogeneous_speed_closed_form),
        (2, "Einstein relation", Duration::from_secs(900), einstein_relation),
        (3, "steady-state routes", Duration::from_secs(300), steady_state_routes),
        (4, "expansion report", Duration::from_secs(1800), expansion_report),
        (5, "Girsanov exactness", Duration::from_secs(10), girsanov_exactness),
        (6, "exit-law oracle", Duration::from_secs(60), exit_law_oracle),
        (7, "a-priori probes", Duration::from_secs(600), a_priori_probes),
        (8, "regeneration structure", Duration::from_secs(600), regeneration_structure),
        (9, "variance decay", Duration::from_secs(1200), variance_decay),
        (10, "determinism", Duration::from_secs(600), determinism),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let out = run();
        let elapsed = t0.elapsed();
        let in_time = elapsed <= limit;
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id:2} {name}: {} ({:.1} s of {} s) {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs(),
            out.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
