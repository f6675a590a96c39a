use dractrl::codec::{LatentCodec, LatentVideo};
use dractrl::dit::{Dit, ModelConfig, Vocab};
use dractrl::flow::{TrainExample, TrainSettings, Trainable, Trainer};
use dractrl::numerics::{AdamWConfig, Rng};
use dractrl::tasks::{TaskDataset, TaskKind, TaskSpec};
use dractrl::Error;

fn tiny() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        dim: 32,
        heads: 2,
        layers: 1,
        mlp_hidden: 48,
        lora_rank: 4,
        ..Default::default()
    }
}

fn example(cfg: &ModelConfig) -> TrainExample {
    let s = TaskDataset::new(TaskSpec::new(TaskKind::Colorize), 1, cfg.image_size, 1)
        .get(0)
        .unwrap();
    let codec = LatentCodec::new(cfg.channels, cfg.spatial_factor).unwrap();
    let schedule = dractrl::mixup::MixupSchedule::new(cfg.k, cfg.gamma).unwrap();
    let seq = dractrl::tasks::build_training_pair(&s, dractrl::mixup::TransitionKind::Fade, &schedule).unwrap();
    TrainExample {
        clean: codec.encode_transition(&seq, &schedule).unwrap(),
        prompt: Vocab::standard().tokenize(&s.prompt),
        condition_prompt: None,
    }
}

fn settings(trainable: Trainable, lr: f64) -> TrainSettings {
    TrainSettings {
        trainable,
        delta: 12,
        uniform_weights: false,
        adam: AdamWConfig {
            lr,
            ..Default::default()
        },
    }
}

fn snapshot(m: &Dit<f32>) -> Vec<u32> {
    m.params
        .iter()
        .flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn single_example_overfits() {
    let cfg = tiny();
    let ex = example(&cfg);
    let mut trainer = Trainer::new(Dit::new(cfg, 0).unwrap(), settings(Trainable::All, 3e-3));
    let mut rng = Rng::new(0, 1);
    let losses: Vec<f64> = (0..200)
        .map(|_| trainer.train_step(std::slice::from_ref(&ex), &mut rng).unwrap())
        .collect();
    let head = losses[..10].iter().sum::<f64>() / 10.0;
    let tail = losses[190..].iter().sum::<f64>() / 10.0;
    assert!(tail < 0.25 * head, "loss {head} -> {tail}");
}

#[test]
fn zero_learning_rate_leaves_weights_bit_identical() {
    let cfg = tiny();
    let ex = example(&cfg);
    let mut model = Dit::<f32>::new(cfg, 2).unwrap();
    model.randomize(&mut Rng::new(2, 0), 0.2);
    let before = snapshot(&model);
    let mut trainer = Trainer::new(model, settings(Trainable::All, 0.0));
    let mut rng = Rng::new(0, 2);
    for _ in 0..3 {
        trainer.train_step(std::slice::from_ref(&ex), &mut rng).unwrap();
    }
    assert_eq!(snapshot(&trainer.model), before);
}

#[test]
fn lora_training_only_moves_adapters() {
    let cfg = tiny();
    let ex = example(&cfg);
    // Zero-initialized gates would block every gradient into the blocks.
    let mut model = Dit::<f32>::new(cfg, 3).unwrap();
    model.randomize(&mut Rng::new(3, 0), 0.2);
    model.reset_lora(3).unwrap();
    let base: Vec<(String, Vec<f32>)> = model
        .params
        .iter()
        .filter(|(n, _)| !dractrl::dit::is_lora_param(n))
        .map(|(n, t)| (n.to_string(), t.data().to_vec()))
        .collect();
    let mut trainer = Trainer::new(model, settings(Trainable::Lora, 1e-2));
    let mut rng = Rng::new(0, 3);
    for _ in 0..3 {
        trainer.train_step(std::slice::from_ref(&ex), &mut rng).unwrap();
    }
    for (n, data) in base {
        assert_eq!(trainer.model.params.get(&n).unwrap().data(), &data[..], "{n}");
    }
    let b = trainer.model.params.get("lora.blocks.0.qkv.b").unwrap();
    assert!(b.data().iter().any(|&v| v != 0.0));
}

#[test]
fn non_finite_loss_aborts_without_update() {
    let cfg = tiny();
    let mut ex = example(&cfg);
    let mut frames = ex.clean.frames.clone();
    frames[1].data_mut()[0] = f32::NAN;
    ex.clean = LatentVideo::new(frames).unwrap();
    let mut trainer = Trainer::new(Dit::new(cfg, 4).unwrap(), settings(Trainable::All, 1e-2));
    let before = snapshot(&trainer.model);
    let err = trainer.train_step(&[ex], &mut Rng::new(0, 4)).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err:?}");
    assert_eq!(err.exit_code(), 3);
    assert_eq!(snapshot(&trainer.model), before);
}
