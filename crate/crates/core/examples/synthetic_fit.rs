//! Fits the synthetic building and prints held-out PSNR.
//! Usage: synthetic_fit [iterations] [n_init] [n_train_views]

use std::time::Instant;

use procsplat::synthetic;
use procsplat::train::{self, TrainConfig};

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let iterations = args.first().copied().unwrap_or(2000);
    let n_init = args.get(1).copied().unwrap_or(1000);
    let n_train = args.get(2).copied().unwrap_or(24);
    let data = synthetic::dataset(n_train, 4, 128);
    let config = TrainConfig { iterations, n_init, eval_every: 250, ..Default::default() };
    let start = Instant::now();
    let fitted = train::train_observed(&data, &synthetic::code(), &synthetic::manifest(), &config, &mut |r| {
        if let Some(p) = r.psnr {
            println!("iter {:5}  loss {:.4}  psnr {:.2}  n {}  t {:.0}s", r.iter, r.loss, p, r.n_gaussians, start.elapsed().as_secs_f64());
        }
    })
    .expect("training");
    if let Ok(dir) = std::env::var("PREVIEW_DIR") {
        let test = data.test_views()[0];
        let out = procsplat::render::render(&fitted.scene, &test.camera, &Default::default()).expect("render");
        out.to_rgb8().save(format!("{dir}/fit.png")).expect("write");
        let bytes = test.image.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        image::RgbImage::from_raw(test.camera.width, test.camera.height, bytes).unwrap().save(format!("{dir}/target.png")).expect("write");
    }
    println!("initial {:?} final {:?} params {}", fitted.initial_eval, fitted.final_eval, fitted.checkpoint.param_count());
}
