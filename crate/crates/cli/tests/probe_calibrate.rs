// temporary calibration probe - deleted before finalizing
use bcisim_core::datamodel::{make_split, normalize_dataset, SessionData};
use bcisim_core::decoder::{Decoder, RnnDecoder};
use bcisim_core::experiments::{
    apply_params, build_split_indexes, evaluate_decoder, fit_decoder, optimize_parameters,
    DecoderKind, PipelineConfig, SweepSpec,
};
use bcisim_core::rnn::{build_windows, train_rnn, TrainConfig};
use bcisim_core::stats::{median, rank_sum_test};
use bcisim_core::synthdata::{channel_tuning, generate_dataset, Nonlinearity, SynthConfig};
use std::time::Instant;

fn sparse_tuning(
    base: &SynthConfig,
    keep_every: usize,
) -> Vec<bcisim_core::synthdata::ChannelTuning> {
    let mut tuning = channel_tuning(base);
    for (i, ch) in tuning.iter_mut().enumerate() {
        if i % keep_every != 0 {
            ch.depth = 0.0;
        }
    }
    tuning
}

fn make_sessions(noise: f64, keep: usize, seed: u64, ticks: usize) -> Vec<SessionData> {
    let mut synth = SynthConfig {
        feature_count: 384,
        sessions: 6,
        blocks_per_session: 6,
        ticks_per_block: ticks,
        baseline: 2.0,
        modulation_depth: 2.0,
        noise_std: noise,
        nonlinearity: Nonlinearity::Saturation,
        drift_rate: 0.0,
        day_gap: 1,
        seed,
        tuning: None,
    };
    synth.tuning = Some(sparse_tuning(&synth, keep));
    normalize_dataset(generate_dataset(&synth).unwrap()).unwrap()
}

fn pipeline(master: u64) -> PipelineConfig {
    PipelineConfig {
        sweep: SweepSpec {
            gain_min: 0.3,
            gain_max: 20.0,
            gain_count: 12,
            opt_repeats: 2,
            eval_repeats: 30,
            ..SweepSpec::default()
        },
        opt_run_duration_s: Some(30.0),
        master_seed: master,
        ..PipelineConfig::default()
    }
}

#[test]
#[ignore]
fn probe_noise_ladder() {
    let ticks = 450usize;
    for noise in [2.5f64, 3.0] {
        let t0 = Instant::now();
        let sessions = make_sessions(noise, 4, 1100, ticks);
        let cfg = pipeline(3100);
        let (validation, test) = {
            let split = make_split(&sessions, 5, 0).unwrap();
            build_split_indexes(&sessions, &split, &cfg).unwrap()
        };

        // kalman at d = 2
        let split_k = make_split(&sessions, 5, 2).unwrap();
        let kalman = fit_decoder(DecoderKind::Kalman, &sessions, &split_k, &cfg, 78).unwrap();
        let kparams =
            optimize_parameters(&kalman, &validation, &cfg.tasks, &cfg.sweep, 3100).unwrap();
        let ktuned = apply_params(&kalman, &kparams).unwrap();
        let kevals = evaluate_decoder(&ktuned, &test, &cfg.tasks, 30, 3100).unwrap();
        eprintln!(
            "noise {noise}: kalman gain {:.2} alpha {:?} -> hs {:.3} ha {:.3} ({:.0?})",
            kparams.gain,
            kparams.alpha,
            kevals[0].median_bitrate,
            kevals[1].median_bitrate,
            t0.elapsed()
        );

        // rnn at d = 5 with best-epoch introspection
        let t1 = Instant::now();
        let split_r = make_split(&sessions, 5, 5).unwrap();
        let train = build_windows(&sessions, &split_r.train, 15).unwrap();
        let valid = build_windows(&sessions, &split_r.validation, 15).unwrap();
        let tc = TrainConfig { hidden_units: 50, epochs: 24, seed: 910, ..TrainConfig::default() };
        let trained = train_rnn(&train, &valid, &tc).unwrap();
        eprintln!(
            "noise {noise}: rnn best epoch {} of 24 (val mse {:.4}), train {:.0?}",
            trained.best_epoch, trained.best_val_mse, t1.elapsed()
        );
        let rnn = Decoder::Rnn(RnnDecoder::new(trained.weights, 1.0));
        let rparams =
            optimize_parameters(&rnn, &validation, &cfg.tasks, &cfg.sweep, 3100).unwrap();
        let rtuned = apply_params(&rnn, &rparams).unwrap();
        let revals = evaluate_decoder(&rtuned, &test, &cfg.tasks, 30, 3100).unwrap();
        let (_, p) = rank_sum_test(&revals[0].repeat_bitrates, &kevals[0].repeat_bitrates);
        eprintln!(
            "noise {noise}: rnn gain {:.2} -> hs {:.3} ha {:.3}; p {:.1e} ({:.0?})",
            rparams.gain,
            revals[0].median_bitrate,
            revals[1].median_bitrate,
            p,
            t0.elapsed()
        );
    }
}
