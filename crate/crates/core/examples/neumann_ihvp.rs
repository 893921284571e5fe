//! Truncated von Neumann inverse-Hessian products: error against a direct
//! solve as the number of terms grows, and what happens when α is too large.

use strucgrad::tensor::{relative_error, Matrix};
use strucgrad::{neumann_ihvp, IhvpConfig};

fn main() -> strucgrad::Result<()> {
    // H = diag(2, 4), so H⁻¹g = (0.5, 0.25) for g = (1, 1).
    let h = Matrix::diag(&[2.0, 4.0]);
    let g = [1.0, 1.0];
    println!("{:>4}  {:>12}", "K", "rel. error");
    for k in [0, 1, 2, 5, 10, 20, 50] {
        let cfg = IhvpConfig { k, alpha: 0.2, delta: 0.0, ..Default::default() };
        let w = neumann_ihvp(&mut |v: &[f64]| h.matvec(v), &g, &cfg)?;
        println!("{k:>4}  {:>12.3e}", relative_error(&w, &[0.5, 0.25]));
    }
    // α·λ_max = 0.6·4 > 2: the terms grow by 1.4× each, and the series is
    // reported as divergent once they overflow.
    let cfg = IhvpConfig { k: 3000, alpha: 0.6, delta: 0.0, ..Default::default() };
    match neumann_ihvp(&mut |v: &[f64]| h.matvec(v), &g, &cfg) {
        Ok(w) => println!("α = 0.6 gave {w:?}"),
        Err(e) => println!("α = 0.6: {e}"),
    }
    Ok(())
}
