//! A bi-level problem with a closed-form answer: `θ*(φ) = Mφ`, outer loss `½‖θ‖²`.
//! Compares the implicit hypergradient with the exact one and with the
//! explicit-only gradient, then trains φ with both regimes.

use strucgrad::quadratic::QuadraticBilevel;
use strucgrad::tensor::{Matrix, ParamVector};
use strucgrad::trainer::{train_alternating, train_implicit, TrainConfig};
use strucgrad::{biased_grad_phi, implicit_grad_phi, IhvpConfig};

fn main() -> strucgrad::Result<()> {
    let q = QuadraticBilevel::new(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]])?);
    let phi = ParamVector::unstructured(vec![1.0, 1.0]);
    let theta = ParamVector::unstructured(q.inner_optimum(phi.as_slice())?);
    let cfg = IhvpConfig { k: 50, alpha: 0.5, delta: 0.0, ..Default::default() };

    let report = implicit_grad_phi(&q.prim(), &q.aux(), &theta, &phi, &cfg)?;
    println!("θ*(φ)              = {:?}", theta.as_slice());
    println!("exact hypergradient = {:?}", q.exact_hypergradient(phi.as_slice())?);
    println!("implicit            = {:?} (iHVP residual {:.1e})", report.total, report.ihvp_residual);
    println!("explicit only       = {:?}", biased_grad_phi(&q.prim(), &theta, &phi)?);

    let train_cfg = TrainConfig {
        t_inner: 1,
        t_outer: 30,
        eta_inner: 1.0,
        eta_outer: 0.03,
        ihvp: cfg,
        eval_every: 0,
        patience: None,
        ..TrainConfig::default()
    };
    let implicit = train_implicit(&q, &[()], &[], &train_cfg).map_err(|a| a.error)?;
    let alternating = train_alternating(&q, &[()], &[], &train_cfg).map_err(|a| a.error)?;
    for (name, run) in [("implicit", &implicit), ("alternating", &alternating)] {
        let first = run.metrics.first().unwrap().prim_loss;
        let last = run.metrics.last().unwrap().prim_loss;
        println!("{name:<12} outer loss {first:.3} -> {last:.3e}, final φ {:?}", run.phi.as_slice());
    }
    Ok(())
}
