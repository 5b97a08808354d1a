// temporary speed probe - deleted before finalizing
use bcisim_core::datamodel::{make_split, normalize_dataset};
use bcisim_core::rnn::{batch_gradient, batch_loss, build_windows, train_rnn, LstmWeights, TrainConfig};
use bcisim_core::synthdata::{generate_dataset, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use std::time::Instant;

#[test]
#[ignore]
fn probe_parts() {
    let synth = SynthConfig {
        feature_count: 384,
        sessions: 2,
        blocks_per_session: 6,
        ticks_per_block: 450,
        noise_std: 2.5,
        seed: 1,
        ..SynthConfig::default()
    };
    let sessions = normalize_dataset(generate_dataset(&synth).unwrap()).unwrap();
    let split = make_split(&sessions, 1, 1).unwrap();
    let train = build_windows(&sessions, &split.train, 15).unwrap();
    eprintln!("windows: {}", train.len());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let weights = LstmWeights::init(384, 50, &mut rng);
    let ids: Vec<u32> = (0..512).collect();

    // forward only (batch_loss)
    let t0 = Instant::now();
    for _ in 0..4 {
        black_box(batch_loss(&weights, &train, &ids));
    }
    let fwd = t0.elapsed() / 4;
    // forward + backward (batch_gradient)
    let t1 = Instant::now();
    for _ in 0..4 {
        black_box(batch_gradient(&weights, &train, &ids));
    }
    let both = t1.elapsed() / 4;
    eprintln!("512-window batch: forward {fwd:?}, forward+backward {both:?}");
    eprintln!("per-epoch estimate at 27 batches: {:?}", both * 27);
}

#[test]
#[ignore]
fn probe_epoch_speed() {
    let synth = SynthConfig {
        feature_count: 384,
        sessions: 6,
        blocks_per_session: 6,
        ticks_per_block: 450,
        noise_std: 2.5,
        seed: 1,
        ..SynthConfig::default()
    };
    let sessions = normalize_dataset(generate_dataset(&synth).unwrap()).unwrap();
    let split = make_split(&sessions, 5, 5).unwrap();
    let train = build_windows(&sessions, &split.train, 15).unwrap();
    let valid = build_windows(&sessions, &split.validation, 15).unwrap();
    eprintln!("windows: {} train, {} valid", train.len(), valid.len());
    let tc = TrainConfig { hidden_units: 50, epochs: 2, seed: 1, ..TrainConfig::default() };
    let t0 = Instant::now();
    let out = train_rnn(&train, &valid, &tc).unwrap();
    eprintln!("2 epochs (hidden 50): {:.1?}  best epoch {}", t0.elapsed(), out.best_epoch);
}
