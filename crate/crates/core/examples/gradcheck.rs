//! Runs the derivative self-check suite that backs `strucgrad gradcheck`.

fn main() -> strucgrad::Result<()> {
    let results = strucgrad::cli::gradcheck::run_default(None)?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    std::process::exit(i32::from(failed > 0));
}
