use lgmr_core::config::ModelConfig;
use lgmr_core::metrics::{evaluate, DEFAULT_THRESHOLDS};
use lgmr_core::model::LgmrModel;
use lgmr_core::synthetic::{
    estimate_random_baseline_miou, generate_suite, nearest_signature_miou, SyntheticSpec,
};
use lgmr_core::trainer::{train_from, Adam, TrainConfig};
use rand::SeedableRng;

fn eval_model(model: &LgmrModel, samples: &[lgmr_core::SynopsisSample]) -> f64 {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for s in samples {
        preds.extend(model.predict_seconds(s).unwrap());
        gts.extend(s.ground_truth.iter().cloned());
    }
    evaluate(&preds, &gts, &DEFAULT_THRESHOLDS).unwrap().miou
}

/// Mean attention mass inside the ground-truth mask (last decoder layer).
fn eval_attention_mass(model: &LgmrModel, samples: &[lgmr_core::SynopsisSample]) -> f64 {
    use lgmr_core::sample::AttentionMaskMatrix;
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        let out = model.infer(s).unwrap();
        let map = out.attention_maps.last().unwrap();
        let mask = AttentionMaskMatrix::from_ground_truth(
            &s.ground_truth,
            s.video.duration,
            s.video.num_timesteps(),
        )
        .unwrap();
        for i in 0..mask.n {
            let inside: f64 = map
                .row(i)
                .iter()
                .zip(mask.row(i))
                .filter(|(_, &m)| m == 1)
                .map(|(w, _)| w)
                .sum();
            total += inside;
            count += 1;
        }
    }
    total / count as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(200);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(60);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let lambda2: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.2);
    let batch: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(16);
    let clip: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.0);
    let heads: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(4);
    let ffn: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(256);

    let spec = SyntheticSpec::new(2024, 120, 4, 64, 32);
    let train_set = generate_suite(&spec, n_train).unwrap();
    let eval_spec = SyntheticSpec { seed: 9090, ..spec.clone() };
    let eval_set = generate_suite(&eval_spec, 50).unwrap();

    let matcher: f64 =
        eval_set.iter().map(nearest_signature_miou).sum::<f64>() / eval_set.len() as f64;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let rand_miou = estimate_random_baseline_miou(&eval_set, 20, &mut rng).unwrap();
    println!("matcher oracle mIoU {matcher:.3}, random baseline {rand_miou:.3}");
    println!("config: n_train={n_train} epochs={epochs} lr={lr} lambda2={lambda2} batch={batch} clip={clip} heads={heads} ffn={ffn}");

    let cfg = ModelConfig {
        hidden_dim: 64,
        heads,
        ffn_dim: ffn,
        window_len: 25,
        subparagraph_count: 10,
        encoder_layers: 1,
        decoder_layers: 2,
        lambda1: 1.0,
        lambda2,
        t_max: 20,
        learning_rate: lr,
        batch_size: batch,
        epochs: epochs.max(1),
        ..ModelConfig::default()
    };
    let dir = std::env::temp_dir().join(format!("lgmr_probe_{lr}_{lambda2}_{batch}_{clip}"));
    let _ = std::fs::remove_dir_all(&dir);
    let mut model = LgmrModel::new(cfg.clone(), 64, 32, 7).unwrap();
    let mut adam = Adam::new(&model.params);

    let t0 = std::time::Instant::now();
    let chunk = 10usize;
    let mut done = 0usize;
    let mut step = 0u64;
    while done < epochs {
        let until = (done + chunk).min(epochs);
        let tc = TrainConfig {
            model: ModelConfig { epochs: until, ..cfg.clone() },
            seed: 7,
            checkpoint_dir: dir.clone(),
            eval_every: 10_000,
            grad_clip: (clip > 0.0).then_some(clip),
        };
        let report = train_from(&mut model, &train_set, &tc, &mut adam, done, step).unwrap();
        step = report.steps.last().map(|s| s.step).unwrap_or(step);
        done = until;
        let miou = eval_model(&model, &eval_set);
        let mass = eval_attention_mass(&model, &eval_set);
        let train_mass = eval_attention_mass(&model, &train_set[..50]);
        println!(
            "epoch {done:>3}: loss {:.4}, eval mIoU {miou:.4}, eval attn-mass {mass:.3}, train attn-mass {train_mass:.3}, elapsed {:?}",
            report.final_loss,
            t0.elapsed()
        );
    }
    println!(
        "final: train mIoU {:.4}, eval mIoU {:.4}, total {:?}",
        eval_model(&model, &train_set),
        eval_model(&model, &eval_set),
        t0.elapsed()
    );
}
