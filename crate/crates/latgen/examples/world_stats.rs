//! Prints generation statistics for the toy world.
//!
//! Usage: `world_stats [seed] [leak] [kappa] [sentences]`

use std::time::Instant;

use ltlm_latgen::world::{ToyWorld, WorldConfig};
use ltlm_latgen::{generate_corpus, GenerationConfig, GenerationModels};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let seed = arg(0, 0.0) as u64;
    let world = ToyWorld::build(WorldConfig {
        seed,
        leak: arg(1, 0.4),
        kappa: arg(2, 4.0),
        train_sentences: 0,
        eval_sentences: arg(3, 200.0) as usize,
        ..Default::default()
    })
    .expect("world");
    let mut w = world.clone();
    w.train_texts = ToyWorld::build(WorldConfig { seed, ..Default::default() }).expect("world").train_texts;
    let lm = w.train_lm(3).expect("lm");
    let models = GenerationModels {
        lexicon: &w.lexicon,
        lm: &lm,
        durations: &w.durations,
        fam: &w.fam,
        table: Some(&w.table),
    };
    let cfg = GenerationConfig {
        kappa: Some(w.config.kappa),
        seed,
        ..Default::default()
    };
    let start = Instant::now();
    let corpus = generate_corpus(&w.eval_texts, &models, &cfg);
    println!("{:#?}", corpus.stats);
    println!("elapsed {:.2}s", start.elapsed().as_secs_f64());
}
