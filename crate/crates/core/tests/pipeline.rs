//! End-to-end pipeline checks: synth → extract → kmeans → pretrain →
//! finetune → decode/score, plus checkpoint-resume determinism.

mod common;

use common::{config_toml, corpus_with_features, kmeans_labels, write_config};
use speechlab_core::harness::{self, DecodeArgs, FinetuneArgs, PretrainArgs};
use speechlab_core::synth::SynthConfig;

fn small_corpus() -> SynthConfig {
    SynthConfig {
        n_utts: 12,
        seed: 7,
        vocab_size: 4,
        words_per_utt: (3, 5),
        word_duration_s: 0.2,
        ..Default::default()
    }
}

#[test]
fn extract_is_idempotent() {
    let fx = corpus_with_features(&small_corpus());
    let report = harness::cmd_extract(
        &fx.corpus.manifest,
        speechlab_core::features::FeatureKind::Fbank,
        &fx.fbank_dir,
        true,
    )
    .unwrap();
    assert_eq!(report.written, 0);
    assert_eq!(report.skipped, 12);
}

#[test]
fn pretrain_then_finetune_and_decode() {
    let fx = corpus_with_features(&small_corpus());
    let labels = kmeans_labels(&fx, 6, 3);
    let cfg_path = write_config(
        fx.dir.path(),
        "run.toml",
        &config_toml("fbank", 20, "pre", "ce", 6, &labels, ""),
    );
    let run_dir = fx.dir.path().join("pretrain_run");
    let summary = harness::cmd_pretrain(&PretrainArgs {
        config_path: cfg_path.clone(),
        manifest_path: fx.corpus.manifest.clone(),
        features_dir: Some(fx.fbank_dir.clone()),
        run_dir: run_dir.clone(),
        seed_override: None,
        steps_override: Some(25),
        labels_override: None,
        deterministic: false,
        resume_from: None,
    })
    .unwrap();
    assert_eq!(summary.final_step, 25);
    assert!(summary.last_loss.is_finite());
    assert!(summary.checkpoint_path.exists());
    assert!(summary.metrics_path.exists());
    assert!(run_dir.join("run.json").exists());

    let ft_dir = fx.dir.path().join("finetune_run");
    let ft = harness::cmd_finetune(&FinetuneArgs {
        config_path: cfg_path.clone(),
        checkpoint_path: summary.checkpoint_path.clone(),
        train_manifest: fx.corpus.manifest.clone(),
        train_transcripts: fx.corpus.transcripts.clone(),
        dev_manifest: fx.corpus.manifest.clone(),
        dev_transcripts: fx.corpus.transcripts.clone(),
        features_dir: Some(fx.fbank_dir.clone()),
        run_dir: ft_dir.clone(),
        seed_override: None,
        steps_override: Some(12),
        deterministic: false,
    })
    .unwrap();
    assert!(ft.last_loss.is_finite());
    assert!(ft.best_checkpoint.exists());
    assert!(ft.final_wer.is_finite());

    let hyp_path = fx.dir.path().join("hyps.tsv");
    let hyps = harness::cmd_decode(&DecodeArgs {
        config_path: cfg_path,
        checkpoint_path: ft.best_checkpoint.clone(),
        tokenizer_path: ft_dir.join("tokenizer.txt"),
        manifest_path: fx.corpus.manifest.clone(),
        features_dir: Some(fx.fbank_dir.clone()),
        beam: 2,
        out_path: hyp_path.clone(),
    })
    .unwrap();
    assert_eq!(hyps.len(), 12);
    let score = harness::cmd_score(&hyp_path, &fx.corpus.transcripts).unwrap();
    assert!(score.wer.is_finite());
    // Self-scoring sanity: references score 0 against themselves.
    let self_score = harness::cmd_score(&fx.corpus.transcripts, &fx.corpus.transcripts).unwrap();
    assert_eq!(self_score.wer, 0.0);
}

#[test]
fn waveform_frontend_trains_too() {
    let fx = corpus_with_features(&small_corpus());
    let labels = kmeans_labels(&fx, 6, 3);
    let cfg_path = write_config(
        fx.dir.path(),
        "wave.toml",
        &config_toml("waveform", 20, "post", "codebook", 6, &labels, ""),
    );
    let summary = harness::cmd_pretrain(&PretrainArgs {
        config_path: cfg_path,
        manifest_path: fx.corpus.manifest.clone(),
        features_dir: None,
        run_dir: fx.dir.path().join("wave_run"),
        seed_override: None,
        steps_override: Some(8),
        labels_override: None,
        deterministic: false,
        resume_from: None,
    })
    .unwrap();
    assert!(summary.last_loss.is_finite());
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let fx = corpus_with_features(&small_corpus());
    let labels = kmeans_labels(&fx, 6, 3);
    let cfg_path = write_config(
        fx.dir.path(),
        "resume.toml",
        &config_toml("fbank", 20, "pre", "ce", 6, &labels, ""),
    );
    let full_dir = fx.dir.path().join("full");
    let full = harness::cmd_pretrain(&PretrainArgs {
        config_path: cfg_path.clone(),
        manifest_path: fx.corpus.manifest.clone(),
        features_dir: Some(fx.fbank_dir.clone()),
        run_dir: full_dir.clone(),
        seed_override: None,
        steps_override: Some(16),
        labels_override: None,
        deterministic: true,
        resume_from: None,
    })
    .unwrap();

    let half_dir = fx.dir.path().join("half");
    let half = harness::cmd_pretrain(&PretrainArgs {
        config_path: cfg_path.clone(),
        manifest_path: fx.corpus.manifest.clone(),
        features_dir: Some(fx.fbank_dir.clone()),
        run_dir: half_dir.clone(),
        seed_override: None,
        steps_override: Some(8),
        labels_override: None,
        deterministic: true,
        resume_from: None,
    })
    .unwrap();
    harness::cmd_pretrain(&PretrainArgs {
        config_path: cfg_path,
        manifest_path: fx.corpus.manifest.clone(),
        features_dir: Some(fx.fbank_dir.clone()),
        run_dir: half_dir.clone(),
        seed_override: None,
        steps_override: Some(16),
        labels_override: None,
        deterministic: true,
        resume_from: Some(half.checkpoint_path.clone()),
    })
    .unwrap();

    let full_lines = std::fs::read_to_string(full.metrics_path).unwrap();
    let resumed_lines = std::fs::read_to_string(half_dir.join("metrics.jsonl")).unwrap();
    // The resumed log's steps 9..=16 must be bit-identical to the
    // uninterrupted run's.
    let full_tail: Vec<&str> = full_lines.lines().skip(8).collect();
    let resumed_tail: Vec<&str> = resumed_lines.lines().skip(8).collect();
    assert_eq!(full_tail, resumed_tail);
}

#[test]
fn kmeans_on_three_tone_corpus_is_pure() {
    // Three well-separated tone classes with longer segments: clustering on
    // CMVN'd MFCC should recover them almost perfectly.
    let fx = corpus_with_features(&SynthConfig {
        n_utts: 20,
        seed: 5,
        vocab_size: 3,
        words_per_utt: (3, 6),
        word_duration_s: 0.3,
        ..Default::default()
    });
    let codebook = fx.dir.path().join("cb3.bin");
    let labels = fx.dir.path().join("labels3.txt");
    harness::cmd_kmeans(&fx.corpus.manifest, &fx.mfcc_dir, 3, 40, 9, &codebook, &labels).unwrap();
    let predicted = speechlab_core::labels::load_label_file(&labels, 3).unwrap();
    let truth = speechlab_core::labels::load_label_file(&fx.corpus.tone_labels, 40).unwrap();
    let purity = harness::labeling_purity(&predicted, &truth, 3);
    assert!(purity > 0.9, "purity {purity}");
}

#[test]
fn latent_kmeans_second_iteration_runs() {
    let fx = corpus_with_features(&small_corpus());
    let labels = kmeans_labels(&fx, 6, 3);
    let cfg_path = write_config(
        fx.dir.path(),
        "latent.toml",
        &config_toml("fbank", 20, "pre", "ce", 6, &labels, ""),
    );
    let pre = harness::cmd_pretrain(&PretrainArgs {
        config_path: cfg_path.clone(),
        manifest_path: fx.corpus.manifest.clone(),
        features_dir: Some(fx.fbank_dir.clone()),
        run_dir: fx.dir.path().join("latent_pre"),
        seed_override: None,
        steps_override: Some(5),
        labels_override: None,
        deterministic: false,
        resume_from: None,
    })
    .unwrap();
    let codebook = fx.dir.path().join("cb_latent.bin");
    let latent_labels = fx.dir.path().join("labels_latent.txt");
    let report = harness::cmd_kmeans_latent(
        &cfg_path,
        &pre.checkpoint_path,
        &fx.corpus.manifest,
        Some(&fx.fbank_dir),
        1, // tap the first encoder layer
        8,
        15,
        4,
        &codebook,
        &latent_labels,
    )
    .unwrap();
    assert_eq!(report.clusters, 8);
    let file = speechlab_core::labels::load_label_file(&latent_labels, 8).unwrap();
    assert_eq!(file.frameshift_ms, 20);
    assert_eq!(file.utterances.len(), 12);
    // Latent labels at 20 ms feed a 40 ms run after one more decimation.
    let seq = file.sequence("synth_0000").unwrap();
    let down = speechlab_core::model::labels_at_frameshift(&seq, 40).unwrap();
    assert_eq!(down.frameshift_ms, 40);
}

#[test]
fn micro_batch_accumulation_matches_concatenated_batch() {
    // Accumulating two micro-batches then stepping must equal one step on
    // the union batch (frame-weighted mean), even when the micro-batches
    // process utterances in a different order.
    use speechlab_core::adam::{Adam, AdamConfig};
    use speechlab_core::config::RunConfig;
    use speechlab_core::nn::param::{self, Parameterized};
    use speechlab_core::profiler::Profiler;
    use speechlab_core::rng::Rng;

    let fx = corpus_with_features(&small_corpus());
    let labels = kmeans_labels(&fx, 6, 3);
    let cfg_path = write_config(
        fx.dir.path(),
        "accum.toml",
        &config_toml("fbank", 20, "pre", "ce", 6, &labels, ""),
    );
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let label_file = speechlab_core::labels::load_label_file(&labels, 6).unwrap();
    let manifest = speechlab_core::manifest::Manifest::load(&fx.corpus.manifest).unwrap();
    let dataset = speechlab_core::harness::build_pretrain_dataset(
        &cfg,
        &manifest,
        Some(&fx.fbank_dir),
        &label_file,
    )
    .unwrap();

    // Each path builds the identical seeded model; masking uses a cloned RNG
    // so both see the same plans per utterance index.
    let run = |order: &[usize]| -> (Vec<f64>, u64) {
        let mut init_rng = Rng::seed_from(17);
        let mut model = speechlab_core::harness::build_pretrain_model(&cfg, &mut init_rng).unwrap();
        let mut prof = Profiler::disabled();
        param::zero_grads(&mut model);
        let mut total = 0usize;
        for &i in order {
            let mut mask_rng = Rng::seed_from(900 + i as u64);
            let out = model
                .train_utterance(&dataset[i], &mut mask_rng, &mut prof)
                .unwrap();
            total += out.top.count;
        }
        let inv = 1.0 / total as f64;
        model.visit_params("", &mut |_, p| {
            for g in &mut p.grad {
                *g *= inv;
            }
        });
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut model, 1e-3, &|_| false).unwrap();
        let mut flat: Vec<f64> = Vec::new();
        model.visit_params("", &mut |_, p| flat.extend_from_slice(&p.value));
        let hash = param::fingerprint(&mut model, |_| true);
        (flat, hash)
    };
    // Concatenated batch {0,1,2,3} vs micro-batches {2,3} then {0,1}.
    let (a, _) = run(&[0, 1, 2, 3]);
    let (b, _) = run(&[2, 3, 0, 1]);
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(&b) {
        worst = worst.max((x - y).abs());
    }
    assert!(worst < 1e-10, "max param divergence {worst}");
}

#[test]
fn zero_mask_probability_is_refused_before_step_one() {
    let fx = corpus_with_features(&small_corpus());
    let labels = kmeans_labels(&fx, 6, 3);
    let toml = config_toml("fbank", 20, "pre", "ce", 6, &labels, "")
        .replace("placement = \"pre\"", "placement = \"pre\"\nspan_start_prob = 0.0");
    let cfg_path = write_config(fx.dir.path(), "zero_mask.toml", &toml);
    let err = harness::cmd_pretrain(&PretrainArgs {
        config_path: cfg_path,
        manifest_path: fx.corpus.manifest.clone(),
        features_dir: Some(fx.fbank_dir.clone()),
        run_dir: fx.dir.path().join("zero_mask_run"),
        seed_override: None,
        steps_override: Some(5),
        labels_override: None,
        deterministic: false,
        resume_from: None,
    })
    .unwrap_err();
    assert!(err.to_string().contains("empty mask"), "{err}");
}

#[test]
fn label_class_overflow_fails_validation_before_training() {
    let fx = corpus_with_features(&small_corpus());
    // 10-cluster labels against a 6-class loss: rejected up front.
    let labels10 = kmeans_labels(&fx, 10, 3);
    let cfg_path = write_config(
        fx.dir.path(),
        "mismatch.toml",
        &config_toml("fbank", 20, "pre", "ce", 6, &labels10, ""),
    );
    let err = harness::cmd_pretrain(&PretrainArgs {
        config_path: cfg_path,
        manifest_path: fx.corpus.manifest.clone(),
        features_dir: Some(fx.fbank_dir.clone()),
        run_dir: fx.dir.path().join("mismatch_run"),
        seed_override: None,
        steps_override: Some(3),
        labels_override: None,
        deterministic: false,
        resume_from: None,
    })
    .unwrap_err();
    assert_eq!(err.class(), speechlab_core::ErrorClass::Validation);
    assert!(err.to_string().contains("num_classes"), "{err}");
}
