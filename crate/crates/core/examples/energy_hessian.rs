//! What the learned energy says about label dependence: the mean label
//! Hessian of its global term beside the label co-occurrence counts.

use strucgrad::analysis::analyze_energy_hessian;
use strucgrad::data::{gen_synth, split, SynthSpec};
use strucgrad::losses::PrimaryLoss;
use strucgrad::models::{MlcArch, MlcFamily};
use strucgrad::tensor::Matrix;
use strucgrad::trainer::{train_implicit, TrainConfig};

fn print(name: &str, m: &Matrix, scale: f64) {
    println!("{name}:");
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{:>7.2}", v * scale)).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec::planted(8, 16, 2000, 0);
    let data = gen_synth(&spec)?;
    let parts = split(&data.examples, [0.8, 0.1, 0.1], 0)?;
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
        ..TrainConfig::default()
    };
    let out = train_implicit(&family, &parts.train, &parts.valid, &cfg)?;
    let a = analyze_energy_hessian(&family, &out.phi, &data)?;
    print("planted coupling J", &spec.coupling, 1.0);
    print("negated mean energy Hessian (x100)", &a.hessian, -100.0);
    print("label co-occurrence / 100", &a.cooccurrence, 0.01);
    println!("off-diagonal correlation: {:?}", a.correlation);
    println!("analytic vs divided-difference Hessian, max gap: {:.1e}", a.fd_max_abs_error);
    Ok(())
}
