use radnas_core::detector::{train_fixed, TrainHyper};
use radnas_core::rdmap::{synth_generate, Dataset, Split, SynthConfig};
use radnas_core::{Model, ModelConfig, Realization};

fn main() {
    let config = ModelConfig {
        num_classes: 2,
        backbone_widths: [8, 16, 32, 64, 128],
        stem_width: 16,
        neckhead_widths: [32, 64, 128],
        ..ModelConfig::default()
    };
    let synth = SynthConfig {
        height: 64,
        width: 64,
        train: 16,
        val: 4,
        test: 4,
        num_classes: 2,
        min_objects: 1,
        max_objects: 3,
        snr_db: (10.0, 25.0),
        noise_sigma: 1.0,
    };
    let root = std::env::temp_dir().join("overfit_probe_data");
    let _ = std::fs::remove_dir_all(&root);
    synth_generate(&synth, 42, &root).unwrap();
    let samples: Vec<_> = Dataset::open(&root.join("train/manifest.jsonl"), Split::Train, Some((64, 64)))
        .unwrap()
        .iter()
        .collect::<Result<Vec<_>, _>>()
        .unwrap();

    for lr in [0.02, 0.05, 0.1, 0.2] {
        let caps = Realization::full_width(&config);
        let mut model = Model::<f32>::fixed(&config, &caps, 5).unwrap();
        let hyper = TrainHyper {
            epochs: 200,
            batch_size: 8,
            lr,
            momentum: 0.9,
            seed: 5,
            augment_flip: false,
        };
        let log = train_fixed(&mut model, &samples[..8], &hyper).unwrap();
        let initial = log[0].loss;
        let floor = log.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
        let at100 = log[..100].iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
        println!(
            "lr {lr}: initial {initial:.4}, min@100 {at100:.4}, min@200 {floor:.4}, ratio {:.3}",
            floor / initial
        );
    }
}
