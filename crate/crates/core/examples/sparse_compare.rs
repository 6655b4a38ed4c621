//! Shared-asset training vs. the flat baseline on the synthetic building.
//! Usage: sparse_compare [n_train_views] [iterations] [n_init]

use std::time::Instant;

use procsplat::synthetic;
use procsplat::train::{self, TrainConfig};

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let n_train = args.first().copied().unwrap_or(8);
    let iterations = args.get(1).copied().unwrap_or(2000);
    let n_init = args.get(2).copied().unwrap_or(500);
    let data = synthetic::dataset(n_train, 4, 128);
    let config = TrainConfig { iterations, n_init, eval_every: 0, ..Default::default() };
    let (code, manifest) = (synthetic::code(), synthetic::manifest());

    let start = Instant::now();
    let shared = train::train(&data, &code, &manifest, &config).expect("training");
    println!(
        "shared   psnr {:.2} (init {:.2})  params {}  {:.0}s",
        shared.final_eval.unwrap().0,
        shared.initial_eval.unwrap().0,
        shared.checkpoint.param_count(),
        start.elapsed().as_secs_f64()
    );

    let list = procsplat::grammar::expand(&code, &manifest, train::code_dims(&code, &manifest).unwrap()).unwrap();
    let (bases, variances) = train::initial_assets(&list, &manifest, &config).unwrap();
    let init = procsplat::assembly::assemble(&list, &bases, &variances).unwrap();
    let start = Instant::now();
    let flat = train::fit_baseline(&data, &init, &config).expect("baseline");
    println!(
        "baseline psnr {:.2} (init {:.2})  params {}  {:.0}s",
        flat.final_eval.unwrap().0,
        flat.initial_eval.unwrap().0,
        flat.checkpoint.param_count(),
        start.elapsed().as_secs_f64()
    );
}
