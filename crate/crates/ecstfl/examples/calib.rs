// Temporary calibration harness: pooled 5-fold UAR of softmax vs
// softmax+ecstfl across seeds, for picking dataset/training defaults.

use ecstfl::annotation::EmotionCategory;
use ecstfl::data::{kfold_split, preprocess, synth_generate, ClipSequence, DatasetSpec};
use ecstfl::eval::cv_aggregate;
use ecstfl::model::{predict, train, LossMode, TrainConfig};

fn pooled_uar(
    clips: &[ClipSequence],
    folds: &ecstfl::data::FoldAssignment,
    config: &TrainConfig,
) -> f64 {
    let by_id: std::collections::HashMap<&str, &ClipSequence> =
        clips.iter().map(|c| (c.clip_id.as_str(), c)).collect();
    let mut fold_predictions = Vec::new();
    for fold in 1..=folds.k() {
        let train_clips: Vec<ClipSequence> = folds
            .train_ids(fold)
            .iter()
            .map(|id| (*by_id.get(id.as_str()).unwrap()).clone())
            .collect();
        let (params, _) = train(&train_clips, config).unwrap();
        let test_ids = folds.test_ids(fold);
        let test_clips: Vec<&ClipSequence> = test_ids
            .iter()
            .map(|id| *by_id.get(id.as_str()).unwrap())
            .collect();
        let preds = predict(&params, &test_clips).unwrap();
        let rows: Vec<(String, EmotionCategory, EmotionCategory)> = test_ids
            .into_iter()
            .zip(test_clips.iter().map(|c| c.label.unwrap()))
            .zip(preds)
            .map(|((id, t), p)| (id, t, p))
            .collect();
        fold_predictions.push(rows);
    }
    let expected = folds.clip_ids();
    let (_, report) = cv_aggregate(&fold_predictions, &expected).unwrap();
    let recalls: Vec<String> = report
        .per_class_recall
        .iter()
        .map(|r| match r {
            Some(v) => format!("{:.0}", v * 100.0),
            None => "-".to_string(),
        })
        .collect();
    println!("    recalls {}", recalls.join(" "));
    report.uar_percent()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let get = |name: &str, default: f64| -> f64 {
        args.iter()
            .position(|a| a == name)
            .and_then(|i| args.get(i + 1))
            .map(|v| v.parse().unwrap())
            .unwrap_or(default)
    };
    let sep = get("--sep", 3.0);
    let noise = get("--noise", 2.0);
    let epochs = get("--epochs", 30.0) as usize;
    let lr = get("--lr", 0.05);
    let hidden = get("--hidden", 16.0) as usize;
    let dim = get("--dim", 64.0) as usize;
    let lambda = get("--lambda", 10.0);
    let n_seeds = get("--seeds", 5.0) as u64;

    println!("sep={sep} noise={noise} epochs={epochs} lr={lr} hidden={hidden} dim={dim} lambda={lambda}");
    let start = std::time::Instant::now();
    let mut deltas = Vec::new();
    for seed in 0..n_seeds {
        let spec = DatasetSpec {
            cluster_separation: sep,
            noise_scale: noise,
            seed,
            ..DatasetSpec::default()
        };
        let raw = synth_generate(&spec).unwrap();
        let (clips, _) = preprocess(raw, 0.5).unwrap();
        let ids: Vec<String> = clips.iter().map(|c| c.clip_id.clone()).collect();
        let folds = kfold_split(&ids, 5, seed).unwrap();

        let base = TrainConfig {
            epochs,
            learning_rate: lr,
            frame_hidden: hidden,
            feature_dim: dim,
            lambda,
            seed,
            ..TrainConfig::default()
        };
        let softmax = pooled_uar(
            &clips,
            &folds,
            &TrainConfig {
                loss_mode: LossMode::Softmax,
                ..base.clone()
            },
        );
        let ecstfl = pooled_uar(
            &clips,
            &folds,
            &TrainConfig {
                loss_mode: LossMode::SoftmaxEcstfl,
                ..base.clone()
            },
        );
        println!(
            "seed {seed}: softmax {softmax:.2}  ecstfl {ecstfl:.2}  delta {:+.2}",
            ecstfl - softmax
        );
        deltas.push(ecstfl - softmax);
    }
    let mean: f64 = deltas.iter().sum::<f64>() / deltas.len() as f64;
    let min = deltas.iter().cloned().fold(f64::INFINITY, f64::min);
    println!(
        "mean delta {mean:+.2}, min delta {min:+.2}, elapsed {:.1}s",
        start.elapsed().as_secs_f64()
    );
}
