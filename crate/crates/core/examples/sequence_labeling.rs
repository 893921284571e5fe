//! Sequence labeling with a chain energy (per-token scores plus tag
//! transitions) on a small in-memory column-format corpus.

use std::path::Path;

use strucgrad::data::parse_conll;
use strucgrad::losses::PrimaryLoss;
use strucgrad::models::{SeqArch, SeqFamily, StructuredFamily};
use strucgrad::trainer::{train, NoopObserver, Regime, TrainConfig};

const CORPUS: &str = "\
the DT
dog NN
runs VBZ

a DT
cat NN
sleeps VBZ

the DT
cat NN
runs VBZ

a DT
dog NN
sleeps VBZ
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = parse_conll(CORPUS, Path::new("corpus"), None)?;
    let family = SeqFamily::new(SeqArch {
        vocab_size: data.vocab.len(),
        n_tags: data.tags.len(),
        embed_dim: 4,
        infer_hidden: vec![8],
        feature_hidden: vec![],
        feature_dim: 4,
    })?;
    let cfg = TrainConfig {
        t_inner: 5,
        t_outer: 60,
        eta_inner: 0.5,
        eta_outer: 0.1,
        lambda: 0.5,
        primary: PrimaryLoss::Ssvm { lambda_rank: 0.0 },
        batch_size: 2,
        eval_every: 10,
        patience: None,
        ..TrainConfig::default()
    };
    let out = train(&family, &data.examples, &data.examples, &cfg, Regime::Implicit, &mut NoopObserver)?;
    println!("best validation score: {:?}", out.best_valid);
    for x in &data.examples {
        let (yhat, _) = family.infer(&out.theta, x)?;
        let tags: Vec<&str> = family
            .decode(&yhat)
            .chunks(data.tags.len())
            .map(|row| data.tags[row.iter().position(|&v| v == 1.0).unwrap_or(0)].as_str())
            .collect();
        let words: Vec<&str> = x.tokens.iter().map(|&t| data.vocab[t].as_str()).collect();
        println!("{:<24} -> {}", words.join(" "), tags.join(" "));
    }
    let w = out.phi.segment("energy.W")?;
    println!("learned transition scores (row = previous tag):");
    for (i, row) in w.chunks(data.tags.len()).enumerate() {
        println!("  {:<4} {:?}", data.tags[i], row.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    }
    Ok(())
}
