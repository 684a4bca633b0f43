use galaxy_outliers::cae::{build_cae, train_cae, CaeModel, CaeSpec, TrainConfig};
use galaxy_outliers::data::catalog::Category;
use galaxy_outliers::data::synth::synth_galaxy;
use galaxy_outliers::tensor::ImageTensor;
use std::time::Instant;

fn main() {
    let n = 128;
    let imgs: Vec<ImageTensor<f32>> = (0..n)
        .map(|i| synth_galaxy(Category::CompletelyRoundSmooth, i as u64))
        .collect();
    let data = ImageTensor::concat(&imgs).unwrap();
    for attention in [false, true] {
        let spec = CaeSpec { use_attention: attention, ..CaeSpec::default() };
        let mut model: CaeModel<f32> = build_cae(&spec, 1).unwrap();
        let cfg = TrainConfig { epochs: 1, batch_size: 128, seed: 2, ..TrainConfig::default() };
        let t = Instant::now();
        train_cae(&mut model, &data, &cfg).unwrap();
        let dt = t.elapsed().as_secs_f64();
        println!(
            "attention={attention}: {n} images fwd+bwd+step in {dt:.2}s -> {:.1} img/s",
            n as f64 / dt
        );
        let t = Instant::now();
        let _ = model.encode(&data).unwrap();
        println!("  encode 128: {:.3}s", t.elapsed().as_secs_f64());
    }
}
