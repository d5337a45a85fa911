use conductance_lab::estimators::*;
use conductance_lab::exact::{hitting_distribution, FiniteNetwork};
use conductance_lab::regen::{coin_trick_path, CoinStream, SlabChain, SlabProblem};
use conductance_lab::rng::{derive_seed, StreamId};
use conductance_lab::{BiasSpec, ConductanceField, Law, LocalFunction, Site, Walker};

fn assert_frequencies(counts: &[usize], probs: &[f64], total: usize) {
    for (k, p) in counts.iter().zip(probs) {
        let q = *k as f64 / total as f64;
        let se = (p * (1.0 - p) / total as f64).sqrt().max(1e-12);
        assert!((q - p).abs() <= 4.0 * se, "freq {q} vs exact {p} (se {se})");
    }
}

#[test]
fn homogeneous_speed_in_three_dimensions() {
    let field = ConductanceField::new(3, 2.0, Law::Constant { value: 1.0 }, 5).unwrap();
    let bias = BiasSpec::along_e1(3, 0.3, 2).unwrap();
    let spec = RunSpec::new(field, bias, 2000, 2000, 6).unwrap();
    let est = estimate_speed(&spec, SpeedRoute::Lln).unwrap();
    let exact = homogeneous_speed(&bias);
    for (k, v) in exact.iter().enumerate() {
        let (m, se) = est.component(k);
        assert!((m - v).abs() <= 4.0 * se.max(1e-12), "axis {k}: {m} +- {se} vs {v}");
    }
}

#[test]
fn box_exit_law_matches_monte_carlo() {
    let field = ConductanceField::new(2, 3.0, Law::LogUniform, 8).unwrap();
    let bias = BiasSpec::along_e1(2, 0.4, 2).unwrap();
    let (lo, hi) = ([-3i64, -3], [3i64, 3]);
    let mut net = FiniteNetwork::lattice_box(&field, &bias, &lo, &hi).unwrap();
    net.set_absorbing(|x| (0..2).any(|k| x[k] == lo[k] || x[k] == hi[k]));
    let start = net.index_of(&[0, 0]).unwrap();
    let law = hitting_distribution(&net, start).unwrap();
    let boundary = net.absorbing_sites();
    let probs: Vec<f64> = boundary.iter().map(|&s| law.prob_of(s)).collect();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    let walks = 40_000;
    let mut counts = vec![0usize; boundary.len()];
    let origin = Site::origin(2).unwrap();
    for r in 0..walks {
        let mut rng = StreamId::new(9, "box", r as u64).rng();
        let mut w = Walker::new(&field, &bias, &origin);
        while (0..2).all(|k| w.position()[k] > lo[k] && w.position()[k] < hi[k]) {
            w.step(&mut rng);
        }
        let idx = net.index_of(&w.position()[..2]).unwrap();
        counts[boundary.iter().position(|&s| s == idx).unwrap()] += 1;
    }
    assert_frequencies(&counts, &probs, walks);
}

#[test]
fn torus_time_average_matches_stationary_solution() {
    let field = ConductanceField::new(3, 2.0, Law::TwoPoint { p: 0.5 }, 10).unwrap();
    let spec = RunSpec::new(field, BiasSpec::along_e1(3, 0.3, 2).unwrap(), 4000, 200, 12).unwrap();
    let (_, exact, diff) = torus_route_comparison(&spec, &LocalFunction::first_bond(), 2).unwrap();
    assert!(exact.value() > 0.0);
    assert!(diff.value().abs() <= 4.0 * diff.se(), "{} +- {}", diff.value(), diff.se());
}

#[test]
fn coin_trick_preserves_the_exit_laws() {
    let field = ConductanceField::new(2, 2.0, Law::Uniform, 13).unwrap();
    let bias = BiasSpec::along_e1(2, 0.25, 1).unwrap();
    let slab = SlabProblem::new(field, bias, 3, 1).unwrap();
    let l1 = slab.spacing();
    let chain = SlabChain::build(slab, 3).unwrap();
    let cyl = *chain.problem().environment();
    let nt = cyl.transverse_count();
    let x0 = cyl.transverse_index(Site::origin(2).unwrap().raw());
    let nu0 = &chain.decomposition(0).nu;
    let nu1 = &chain.decomposition(1).nu;
    let second: Vec<f64> = (0..nt).map(|w| (0..nt).map(|v| nu0[x0][v] * nu1[v][w]).sum()).collect();
    let samples = 20_000;
    let mut first_counts = vec![0usize; nt];
    let mut second_counts = vec![0usize; nt];
    for r in 0..samples {
        let coins = CoinStream::new(0.8 * chain.beta_max(), derive_seed(14, "coins", r as u64)).unwrap();
        let mut rng = StreamId::new(15, "coin-law", r as u64).rng();
        let path = coin_trick_path(&chain, &coins, &mut rng).unwrap();
        let hit = |level: i64| {
            let p = path.positions().find(|p| p.coords()[0] == level * l1).unwrap();
            cyl.transverse_index(p.raw())
        };
        first_counts[hit(1)] += 1;
        second_counts[hit(2)] += 1;
    }
    assert_frequencies(&first_counts, &nu0[x0], samples);
    assert_frequencies(&second_counts, &second, samples);
}

fn small_chain() -> SlabChain {
    let field = ConductanceField::new(2, 2.0, Law::TwoPoint { p: 0.5 }, 21).unwrap();
    let bias = BiasSpec::along_e1(2, 0.25, 1).unwrap();
    SlabChain::build(SlabProblem::new(field, bias, 3, 1).unwrap(), 3).unwrap()
}

#[test]
fn coin_trick_paths_have_the_plain_walk_marginals() {
    let chain = small_chain();
    let cyl = *chain.problem().environment();
    let bias = *chain.problem().bias();
    let origin = Site::origin(2).unwrap();
    let samples = 100_000;
    let code = |s: &[u8]| s[..3].iter().fold(0usize, |acc, &m| acc * 4 + m as usize);
    let mut coin_counts = vec![0usize; 64];
    let mut plain_counts = vec![0usize; 64];
    for r in 0..samples {
        let coins = CoinStream::new(0.9 * chain.beta_max(), derive_seed(22, "coins", r as u64)).unwrap();
        let mut rng = StreamId::new(23, "coin-marginal", r as u64).rng();
        let path = coin_trick_path(&chain, &coins, &mut rng).unwrap();
        coin_counts[code(&path.steps)] += 1;
        let mut rng = StreamId::new(24, "plain-marginal", r as u64).rng();
        let mut w = Walker::new(&cyl, &bias, &origin);
        let steps: Vec<u8> = (0..3).map(|_| w.step(&mut rng) as u8).collect();
        plain_counts[code(&steps)] += 1;
    }
    for (a, b) in coin_counts.iter().zip(&plain_counts) {
        let (pa, pb) = (*a as f64 / samples as f64, *b as f64 / samples as f64);
        let p = 0.5 * (pa + pb);
        let se = (2.0 * p * (1.0 - p) / samples as f64).sqrt().max(1e-12);
        assert!((pa - pb).abs() <= 4.0 * se, "{pa} vs {pb}");
    }
}

#[test]
fn no_backtrack_probability_matches_mu1_started_excursions() {
    let chain = small_chain();
    let slab = chain.problem();
    let cyl = *slab.environment();
    let bias = *slab.bias();
    let l1 = slab.spacing();
    let x0 = cyl.transverse_index(Site::origin(2).unwrap().raw());
    let mu1 = &chain.decomposition(0).mu1[x0];
    let exact = slab.no_backtrack_probability(0, mu1, 2).unwrap();
    let walks = 40_000;
    let mut ok = 0usize;
    for r in 0..walks {
        let mut rng = StreamId::new(25, "excursion", r as u64).rng();
        let u = conductance_lab::rng::uniform(&mut rng);
        let mut acc = 0.0;
        let w = mu1.iter().position(|p| {
            acc += p;
            u < acc
        });
        let mut start = cyl.transverse_coords(w.unwrap_or(mu1.len() - 1));
        start[0] = l1;
        let mut walker = Walker::new(&cyl, &bias, &Site::new(&start[..2]).unwrap());
        loop {
            let x = walker.position()[0];
            if x >= 3 * l1 {
                ok += 1;
                break;
            }
            if x <= l1 - l1 / 4 {
                break;
            }
            walker.step(&mut rng);
        }
    }
    let q = ok as f64 / walks as f64;
    let se = (exact * (1.0 - exact) / walks as f64).sqrt();
    assert!(exact > 0.0 && exact < 1.0);
    assert!((q - exact).abs() <= 4.0 * se, "{q} vs {exact} (se {se})");
}
