use std::path::Path;

use proptest::prelude::*;
use strucgrad::cli::{Architecture, Checkpoint};
use strucgrad::data::{parse_mlc, split, write_mlc, MlcDataset, MlcExample};
use strucgrad::losses::{cd_from_terms, example_f1, micro_f1, TaskCost};
use strucgrad::models::{MlcArch, MlcFamily, StructuredFamily};
use strucgrad::tensor::{relative_error, Matrix};
use strucgrad::trainer::{read_metrics_csv, write_metrics_csv, MetricsRecord};
use strucgrad::{neumann_ihvp, IhvpConfig};

fn dataset() -> impl Strategy<Value = MlcDataset> {
    (1usize..6, 1usize..5).prop_flat_map(|(d, l)| {
        let example = (
            proptest::collection::vec(proptest::option::of(-1e3f64..1e3), d),
            proptest::collection::vec(any::<bool>(), l),
        )
            .prop_map(|(feats, labels)| MlcExample {
                features: feats.into_iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))).collect(),
                labels,
            });
        proptest::collection::vec(example, 0..8).prop_map(move |examples| MlcDataset { n_features: d, n_labels: l, examples })
    })
}

proptest! {
    #[test]
    fn mlc_files_round_trip(data in dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt");
        write_mlc(&data, &path).unwrap();
        let back = parse_mlc(&std::fs::read_to_string(&path).unwrap(), Path::new("d.txt")).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn split_partitions_the_input(n in 0usize..200, a in 0.0f64..1.0, b in 0.0f64..1.0, seed in any::<u64>()) {
        let (f0, f1) = (a, (1.0 - a) * b);
        let items: Vec<usize> = (0..n).collect();
        let s = split(&items, [f0, f1, 1.0 - f0 - f1], seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, items);
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in any::<u64>(), bits in proptest::collection::vec(any::<u64>(), 4)) {
        let arch = MlcArch { n_features: 3, n_labels: 2, infer_hidden: vec![2], feature_hidden: vec![], feature_dim: 2, global_hidden: 2 };
        let fam = MlcFamily::new(arch.clone()).unwrap();
        let (mut theta, phi) = fam.init_params(seed);
        for (v, b) in theta.as_mut_slice().iter_mut().zip(&bits) {
            *v = f64::from_bits(*b);
        }
        let ck = Checkpoint::new(Architecture::Mlc { arch }, theta, phi, "h", "mbce");
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        let same = back.theta.as_slice().iter().zip(ck.theta.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
        prop_assert_eq!(back.phi, ck.phi);
    }

    #[test]
    fn neumann_series_is_linear(diag in proptest::collection::vec(0.1f64..3.0, 1..6), a in -2.0f64..2.0, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = diag.len();
        let g1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g2: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = Matrix::diag(&diag);
        let cfg = IhvpConfig { k: 7, alpha: 0.3, delta: 0.01, ..Default::default() };
        let solve = |g: &[f64]| neumann_ihvp(&mut |v: &[f64]| h.matvec(v), g, &cfg).unwrap();
        let combo: Vec<f64> = g1.iter().zip(&g2).map(|(x, y)| a * x + y).collect();
        let (w1, w2, wc) = (solve(&g1), solve(&g2), solve(&combo));
        let expect: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + y).collect();
        prop_assert!(relative_error(&wc, &expect) < 1e-12);
    }

    #[test]
    fn metrics_floats_survive_the_csv(vals in proptest::collection::vec(-1e300f64..1e300, 7), iter in 1usize..10_000) {
        let rec = MetricsRecord {
            outer_iter: iter,
            theta_updates: 3 * iter,
            phi_updates: iter,
            aux_loss: vals[0],
            prim_loss: vals[1],
            hypergrad_norm: vals[2].abs(),
            explicit_norm: vals[3].abs(),
            implicit_norm: vals[4].abs(),
            ihvp_residual: vals[5].abs(),
            aux_grad_norm: vals[6].abs(),
            valid: None,
        };
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, "abc", std::slice::from_ref(&rec)).unwrap();
        let (hash, rows) = read_metrics_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(hash, "abc");
        prop_assert_eq!(rows[0][0].parse::<usize>().unwrap(), iter);
        prop_assert_eq!(rows[0][3].parse::<f64>().unwrap(), vals[0]);
        prop_assert_eq!(rows[0][4].parse::<f64>().unwrap(), vals[1]);
    }

    #[test]
    fn f1_cost_is_a_bounded_dissimilarity(pairs in proptest::collection::vec(any::<(bool, bool)>(), 1..10)) {
        let pred: Vec<f64> = pairs.iter().map(|p| f64::from(u8::from(p.0))).collect();
        let gold: Vec<f64> = pairs.iter().map(|p| f64::from(u8::from(p.1))).collect();
        let c = TaskCost::F1.discrete(&pred, &gold).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert_eq!(TaskCost::F1.discrete(&gold, &gold).unwrap(), 0.0);
        let (p, g): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
        prop_assert_eq!(example_f1(std::slice::from_ref(&g), std::slice::from_ref(&g)).unwrap(), 1.0);
        prop_assert!((0.0..=1.0).contains(&micro_f1(&[p], &[g]).unwrap()));
    }

    #[test]
    fn contrastive_loss_upper_bounds_every_margin(eg in -5.0f64..5.0, terms in proptest::collection::vec((-5.0f64..5.0, 0.0f64..1.0), 1..6)) {
        let cd = cd_from_terms(eg, &terms).unwrap();
        prop_assert!(cd >= 0.0);
        for (e, s) in &terms {
            prop_assert!(cd >= s + eg - e - 1e-12);
        }
    }
}
