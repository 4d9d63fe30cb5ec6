use dvae_core::data::{gen_picture, translate_dataset, PictureSpec};
use dvae_core::manifold::Manifold;
use dvae_core::model::{train, DvaeModel, ModelConfig, TrainConfig};
use dvae_core::topo::{encode_latent_grid, torus_degree};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let width: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(128);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(40);
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0);
    let t_max: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(4e-3);
    let batch: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(128);
    let pic = gen_picture(&PictureSpec::simple());
    let ds = translate_dataset(&pic, 64, "mode = simple".into()).unwrap();
    let mut cfg = ModelConfig::new(64 * 64, seed);
    cfg.width = width;
    cfg.t_max = t_max;
    let mut model = DvaeModel::build(Manifold::flat_torus2(), &cfg).unwrap();
    let tc = TrainConfig::new(epochs, batch, seed);
    let start = Instant::now();
    let run = train(&mut model, ds.pixels.view(), &tc, &mut |_, _, _| {}).unwrap();
    let last = run.history.last().unwrap().stats;
    let grid = encode_latent_grid(&model, &ds).unwrap();
    let w = torus_degree(&grid);
    println!(
        "width={width} epochs={epochs} seed={seed} t_max={t_max} batch={batch}: mse={:.5} degree={} resolved={} entries={:?} elapsed={:.0}s",
        last.mse, w.degree, w.resolved, w.entries, start.elapsed().as_secs_f64()
    );
}
