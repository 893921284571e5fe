//! Implicit, alternating and likelihood-only training on the same
//! planted-coupling splits, over several seeds.
//!
//! Usage: `cargo run --release --example compare_regimes -- [n_seeds]`

use strucgrad::analysis::analyze_energy_hessian;
use strucgrad::data::{gen_synth, split, SynthSpec};
use strucgrad::losses::PrimaryLoss;
use strucgrad::models::{evaluate, MlcArch, MlcFamily};
use strucgrad::trainer::{train, NoopObserver, Regime, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(5);
    let regimes = [Regime::Implicit, Regime::Alternating, Regime::Mbce];
    let mut totals = [0.0; 3];
    println!("seed  {:>9} {:>12} {:>9}  corr(-H, cooc)", "implicit", "alternating", "mbce");
    for seed in 0..seeds {
        let data = gen_synth(&SynthSpec::planted(8, 16, 2000, seed))?;
        let parts = split(&data.examples, [0.8, 0.1, 0.1], seed)?;
        let family = MlcFamily::new(MlcArch {
            n_features: 16,
            n_labels: 8,
            infer_hidden: vec![],
            feature_hidden: vec![16],
            feature_dim: 16,
            global_hidden: 16,
        })?;
        let cfg = TrainConfig {
            t_inner: 5,
            t_outer: 600,
            eta_inner: 0.5,
            eta_outer: 1.0,
            lambda: 5.0,
            primary: PrimaryLoss::Cd { negatives: 20, temperature: 1.0 },
            batch_size: 32,
            eval_every: 10,
            seed,
            ..TrainConfig::default()
        };
        let mut f1 = [0.0; 3];
        let mut corr = None;
        for (i, regime) in regimes.iter().enumerate() {
            let out = train(&family, &parts.train, &parts.valid, &cfg, *regime, &mut NoopObserver)?;
            f1[i] = evaluate(&family, &out.theta, &parts.test)?.selection().unwrap_or(f64::NAN);
            totals[i] += f1[i];
            if *regime == Regime::Implicit {
                corr = analyze_energy_hessian(&family, &out.phi, &data)?.correlation;
            }
        }
        let corr = corr.map_or("n/a".to_string(), |c| format!("{c:.3}"));
        println!("{seed:>4}  {:>9.4} {:>12.4} {:>9.4}  {corr}", f1[0], f1[1], f1[2]);
    }
    let n = seeds as f64;
    println!("mean  {:>9.4} {:>12.4} {:>9.4}", totals[0] / n, totals[1] / n, totals[2] / n);
    Ok(())
}
