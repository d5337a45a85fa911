use proptest::prelude::*;

use conductance_lab::config::parse_config;
use conductance_lab::exact::enumerate_paths_expectation;
use conductance_lab::lattice::{Bond, Environment};
use conductance_lab::rng::StreamId;
use conductance_lab::walk::{decompose_path, girsanov_weight, run_walk, step_distribution, WalkPath};
use conductance_lab::{BiasSpec, ConductanceField, Law, Site};

fn law_strategy() -> impl Strategy<Value = Law> {
    prop_oneof![
        (0.05f64..0.95).prop_map(|p| Law::TwoPoint { p }),
        Just(Law::Uniform),
        Just(Law::LogUniform),
    ]
}

fn setup() -> impl Strategy<Value = (ConductanceField, BiasSpec, Site)> {
    (2usize..=3, 1.1f64..5.0, law_strategy(), any::<u64>(), 0.0f64..=0.5, prop::collection::vec(-20i64..20, 3))
        .prop_map(|(d, kappa, law, seed, lambda, c)| {
            let field = ConductanceField::new(d, kappa, law, seed).unwrap();
            let bias = BiasSpec::along_e1(d, lambda, 2).unwrap();
            (field, bias, Site::new(&c[..d]).unwrap())
        })
}

fn tilted_total(field: &ConductanceField, bias: &BiasSpec, x: &Site) -> f64 {
    (0..2 * field.dim())
        .map(|m| field.tilted_conductance(&Bond::new(*x, x.step(m)).unwrap(), bias))
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_a_probability_vector((field, bias, x) in setup()) {
        let p = step_distribution(&field, &bias, &x);
        prop_assert_eq!(p.len(), 2 * field.dim());
        prop_assert!(p.iter().all(|&q| q > 0.0 && q < 1.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_is_reversible_for_tilted_conductances((field, bias, x) in setup()) {
        let px = step_distribution(&field, &bias, &x);
        let pix = tilted_total(&field, &bias, &x);
        for m in 0..2 * field.dim() {
            let y = x.step(m);
            let py = step_distribution(&field, &bias, &y);
            let back = m ^ 1;
            prop_assert_eq!(y.step(back), x);
            let lhs = pix * px[m];
            let rhs = tilted_total(&field, &bias, &y) * py[back];
            prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()));
        }
    }

    #[test]
    fn conductances_and_q0_density_respect_ellipticity((field, _bias, x) in setup()) {
        let k = field.kappa();
        for m in 0..2 * field.dim() {
            let w = field.conductance_at(&Bond::new(x, x.step(m)).unwrap());
            prop_assert!(w >= 1.0 / k - 1e-12 && w <= k + 1e-12);
        }
        let q = field.q0_density(&x);
        prop_assert!(q >= 1.0 / (k * k) - 1e-12 && q <= k * k + 1e-12);
    }

    #[test]
    fn girsanov_weight_has_unit_mean((field, bias, x) in setup(), n in 1usize..=4) {
        let flat = bias.with_lambda(0.0).unwrap();
        let g = enumerate_paths_expectation(&field, &flat, &x, n, &mut |p| girsanov_weight(&field, &bias, p)).unwrap();
        prop_assert!((g - 1.0).abs() < 1e-10);
        let m = enumerate_paths_expectation(&field, &flat, &x, n, &mut |p| {
            decompose_path(&field, &flat, p).unwrap().martingale[n]
        })
        .unwrap();
        prop_assert!(m.abs() < 1e-10);
    }

    #[test]
    fn walks_are_reproducible((field, bias, _x) in setup(), master in any::<u64>(), r in 0u64..1000) {
        let o = Site::origin(field.dim()).unwrap();
        let s = StreamId::new(master, "prop", r);
        let a = run_walk(&field, &bias, &o, 200, &s);
        let b = run_walk(&field, &bias, &o, 200, &s);
        prop_assert_eq!(&a, &b);
        let (back, seed) = WalkPath::from_bytes(&a.to_bytes(master)).unwrap();
        prop_assert_eq!(seed, master);
        prop_assert_eq!(back.end(), a.end());
    }

    #[test]
    fn config_round_trips_through_toml(seed in 0..=i64::MAX as u64, lambda in 0.01f64..0.5, d in 2usize..=4) {
        let text = format!(
            "dimension = {d}\nkappa = 2.0\nlaw = \"uniform\"\nseed = {seed}\nlambda = [{lambda}]\nestimators = [\"speed\", \"probes\"]\n"
        );
        let spec = parse_config(&text).unwrap();
        let back = parse_config(&spec.to_toml()).unwrap();
        prop_assert_eq!(back.config_hash(), spec.config_hash());
        prop_assert_eq!(&back, &spec);
    }
}
