//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers (run with `--nocapture` to see them).

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use taeclsa_core::clsa::{clsa_forward, ClsaConfig, ClsaModel};
use taeclsa_core::dataset::{
    generate_synthetic, smote_balance, split_80_10_10, ClassLabel, Dataset, EcgRecord, Split,
    NUM_CHANNELS,
};
use taeclsa_core::engine::ops::derive_rng;
use taeclsa_core::engine::{Mode, ParamSet, Tape, Tensor};
use taeclsa_core::gradcheck::run_suite;
use taeclsa_core::metrics::{compute_metrics, confusion};
use taeclsa_core::pipeline::{clsa_param_counts, train_pipeline, PipelineTrainConfig};
use taeclsa_core::preprocess::{make_pairs, tokenize, TokenSequence, VocabMode, Vocabulary};
use taeclsa_core::store::Container;
use taeclsa_core::tae::{tae_train_two_batch, TaeConfig, TaeModel, TaeTrainer};

use rand::Rng;

#[test]
fn criterion_01_gradient_fidelity() {
    let start = Instant::now();
    let reports = run_suite(0xACCE97, 1e-4, 10);
    let elapsed = start.elapsed().as_secs_f64();
    for r in &reports {
        assert!(
            r.passed(),
            "{}: max rel err {:.3e} at coord {} (analytic {:.6e} vs numeric {:.6e})",
            r.name,
            r.max_rel_err,
            r.worst_coord,
            r.worst_analytic,
            r.worst_numeric
        );
        assert!(r.points >= 10, "{}: only {} points", r.name, r.points);
    }
    assert!(elapsed < 60.0, "suite took {elapsed:.1}s");
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0f64, f64::max);
    println!("ACCEPTANCE 1 (gradient fidelity): PASS — {} ops, worst rel err {worst:.3e}, {elapsed:.1}s", reports.len());
}

#[test]
fn criterion_02_attention_invariants() {
    let ps = ParamSet::new();
    let mut rng = derive_rng(2, &[]);
    for trial in 0..1000 {
        let n = rng.gen_range(1..10);
        let d = rng.gen_range(1..8);
        let values: Vec<f64> = (0..n * d).map(|_| rng.gen::<f64>() * 20.0 - 10.0).collect();
        let mut tape = Tape::new(&ps);
        let x = tape.input(Tensor::new(vec![n, d], values).unwrap());
        let (_, attn) = tape.self_attention(x).unwrap();
        for row in attn.values().chunks(n) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "trial {trial}: row sum {sum}");
        }
    }

    // identical rows → uniform weights
    let mut tape = Tape::new(&ps);
    let row = [0.4, -1.7, 2.2, 0.9];
    let mut vals = Vec::new();
    for _ in 0..6 {
        vals.extend_from_slice(&row);
    }
    let x = tape.input(Tensor::new(vec![6, 4], vals).unwrap());
    let (_, attn) = tape.self_attention(x).unwrap();
    for &w in attn.values() {
        assert!((w - 1.0 / 6.0).abs() < 1e-12, "uniformity violated: {w}");
    }

    // X = I₂, worked by hand: S' = I/√2, A row [e^{1/√2}, 1] normalized
    let mut tape = Tape::new(&ps);
    let x = tape.input(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let (z, attn) = tape.self_attention(x).unwrap();
    let e = (1.0f64 / 2.0f64.sqrt()).exp();
    let hi = e / (e + 1.0);
    let lo = 1.0 / (e + 1.0);
    let expect = [hi, lo, lo, hi];
    for (a, b) in attn.values().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
    assert!((hi - 0.6698).abs() < 1e-4 && (lo - 0.3302).abs() < 1e-4);
    for (a, b) in tape.value(z).values().iter().zip(&expect) {
        assert!((a - b).abs() < 1e-4);
    }
    println!("ACCEPTANCE 2 (attention invariants): PASS — 1000 row-stochastic inputs, uniform A, I₂ example");
}

#[test]
fn criterion_03_windowing_oracle() {
    let mut rng = derive_rng(3, &[]);
    for trial in 0..100 {
        let t = rng.gen_range(1..300);
        let channels: Vec<Vec<f64>> = (0..NUM_CHANNELS)
            .map(|_| (0..t).map(|_| rng.gen::<f64>() * 8.0 - 4.0).collect())
            .collect();
        let rec = EcgRecord::new(format!("r{trial}"), channels, ClassLabel::Sttc).unwrap();
        let pairs = make_pairs(&rec, 9).unwrap();
        assert_eq!(pairs.len(), t, "trial {trial}: {} pairs for T={t}", pairs.len());
        assert_eq!(pairs[0].target, rec.instant(0), "trial {trial}: first target");
        for (i, pair) in pairs.iter().enumerate() {
            let expect = rec.instant(i);
            for (a, b) in pair.target.iter().zip(&expect) {
                assert_eq!(a.to_bits(), b.to_bits(), "trial {trial} t={i}");
            }
        }
    }
    println!("ACCEPTANCE 3 (windowing oracle): PASS — 100 random records reassemble bit-exactly");
}

/// Independent convex-combination witness: search same-class pairs (a,b)
/// for u ∈ [0,1] with s = a + u(b−a) within tol on every sample.
fn convex_witness(rec: &EcgRecord, pool: &[&EcgRecord], tol: f64) -> bool {
    let s = rec.flatten();
    let same: Vec<&&EcgRecord> = pool.iter().filter(|r| r.label == rec.label).collect();
    for a in &same {
        let av = a.flatten();
        'pair: for b in &same {
            if a.record_id == b.record_id {
                continue;
            }
            let bv = b.flatten();
            let (mut u, mut span) = (0.0, 0.0);
            for i in 0..s.len() {
                let d = bv[i] - av[i];
                if d.abs() > span {
                    span = d.abs();
                    u = (s[i] - av[i]) / d;
                }
            }
            if span == 0.0 || !(-1e-12..=1.0 + 1e-12).contains(&u) {
                continue;
            }
            for i in 0..s.len() {
                if (av[i] + u * (bv[i] - av[i]) - s[i]).abs() > tol {
                    continue 'pair;
                }
            }
            return true;
        }
    }
    false
}

#[test]
fn criterion_04_smote() {
    // imbalanced synthetic set: drop records unevenly per class
    let full = generate_synthetic(24, 32, 4).unwrap();
    let keep = [24usize, 15, 11, 8, 6];
    let records: Vec<EcgRecord> = full
        .records
        .iter()
        .filter(|r| {
            let idx: usize = r.record_id[r.record_id.len() - 4..].parse().unwrap();
            idx < keep[r.label.index()]
        })
        .cloned()
        .collect();
    let ds = split_80_10_10(Dataset::new(records), 4).unwrap();
    let balanced = smote_balance(&ds, 5, 4).unwrap();

    let counts = balanced.class_counts(Some(Split::Train));
    assert!(counts.iter().all(|&c| c == counts[0]), "unequal counts {counts:?}");

    let originals: Vec<&EcgRecord> = ds.records_in(Split::Train);
    let mut checked = 0;
    for rec in balanced.records.iter().filter(|r| r.record_id.contains("~s")) {
        assert!(convex_witness(rec, &originals, 1e-9), "no witness for {}", rec.record_id);
        checked += 1;
    }
    assert!(checked > 0);

    // the published counts, replicated symbolically by the counting logic
    let paper_counts = [9083usize, 2500, 2400, 1708, 1541];
    assert_eq!(taeclsa_core::dataset::balanced_total(&paper_counts), 45_415);
    assert_eq!(5 * 9083, 45_415);
    // and on a scaled instance, by actually balancing
    let scaled_counts = balanced.class_counts(Some(Split::Train));
    let majority = ds.class_counts(Some(Split::Train)).into_iter().max().unwrap();
    assert_eq!(scaled_counts.iter().sum::<usize>(), 5 * majority);
    println!("ACCEPTANCE 4 (SMOTE): PASS — equal counts, {checked} synthetics witnessed, 5×9083=45415");
}

#[test]
fn criterion_05_tae_desk_training() {
    // 50 records, T=128
    let ds = generate_synthetic(10, 128, 5).unwrap();
    let pairs: Vec<_> = ds.records.iter().flat_map(|r| make_pairs(r, 9).unwrap()).collect();
    let model = TaeModel::init(TaeConfig::default(), 5).unwrap();
    let out = tae_train_two_batch(&pairs, model, 50, 1e-3, 5).unwrap();
    assert_eq!(out.reports[0].batch_index, 1);
    assert_eq!(out.reports[1].batch_index, 2);
    let initial = out.reports[0].initial_val_mse;
    let final_val = *out.reports[1].val_mse.last().unwrap();
    assert!(
        final_val <= 0.2 * initial,
        "final val MSE {final_val:.4} vs 0.2×initial {:.4}",
        0.2 * initial
    );

    // resume-equivalence on the same pair corpus, parameter-bitwise
    let subset = &pairs[..2000];
    let mut straight = TaeTrainer::new(TaeModel::init(TaeConfig::default(), 5).unwrap(), 1e-3, 5, 1);
    straight.run_epochs(subset, 6).unwrap();
    let mut first = TaeTrainer::new(TaeModel::init(TaeConfig::default(), 5).unwrap(), 1e-3, 5, 1);
    first.run_epochs(subset, 3).unwrap();
    let saved = first.to_container().unwrap();
    let mut resumed = TaeTrainer::from_container(&Container::from_bytes(&saved.to_bytes()).unwrap()).unwrap();
    resumed.run_epochs(subset, 3).unwrap();
    for (name, p) in straight.model.params.iter() {
        let r = resumed.model.params.value(name).unwrap();
        for (a, b) in p.value.values().iter().zip(r.values()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{name} diverged after resume");
        }
    }
    println!(
        "ACCEPTANCE 5 (TAE desk training): PASS — val MSE {initial:.4} → {final_val:.4} (ratio {:.3}), bitwise resume",
        final_val / initial
    );
}

#[test]
fn criterion_06_clsa_desk_training() {
    let start = Instant::now();
    let ds = generate_synthetic(50, 128, 42).unwrap();
    let cfg = PipelineTrainConfig {
        clsa: ClsaConfig { conv_filters: 64, lstm_units: 32, ..ClsaConfig::default() },
        clsa_epochs: 30,
        clsa_lr: 1e-3,
        ..PipelineTrainConfig::default()
    };
    let trained = train_pipeline(&ds, &cfg, 42).unwrap();
    let test = trained.dataset.records_in(Split::Test);
    let (report, _) = trained.pipeline.evaluate(&test).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        report.accuracy >= 0.85,
        "test accuracy {:.3} below 0.85 (n={})",
        report.accuracy,
        test.len()
    );
    assert!(elapsed < 600.0, "training took {elapsed:.0}s");
    println!(
        "ACCEPTANCE 6 (CLSA desk training): PASS — test accuracy {:.3} on {} records in {elapsed:.0}s",
        report.accuracy,
        test.len()
    );
}

#[test]
fn criterion_07_model_size_accounting() {
    let vocab_len = 10_000;
    let narrow_cfg = ClsaConfig::default(); // 6-wide embedding
    let narrow = clsa_param_counts(&narrow_cfg, vocab_len);
    let wide_cfg = ClsaConfig { embed_dim: 12, ..ClsaConfig::default() };
    let wide = clsa_param_counts(&wide_cfg, vocab_len);
    assert!(narrow.total < wide.total, "{} !< {}", narrow.total, wide.total);

    // the closed-form accounting must match real models
    let mut rng = derive_rng(7, &[]);
    for cfg in [narrow_cfg.clone(), wide_cfg.clone()] {
        let v = 17;
        let emb = Tensor::new(
            vec![v, cfg.embed_dim],
            (0..v * cfg.embed_dim).map(|_| rng.gen::<f64>()).collect(),
        )
        .unwrap();
        let model = ClsaModel::init(emb, cfg.clone(), 1).unwrap();
        assert_eq!(model.total_params(), clsa_param_counts(&cfg, v).total);
    }

    let reduction = (1.0 - narrow.total as f64 / wide.total as f64) * 100.0;
    // reported alongside the published 34% / 31% claims, without asserting them
    println!(
        "ACCEPTANCE 7 (model size): PASS — {} vs {} params, computed reduction {reduction:.2}% (published claims: 34% / 31%)",
        narrow.total, wide.total
    );
}

#[test]
fn criterion_08_metrics_oracle() {
    let mut rng = derive_rng(8, &[]);
    let n = 10_000;
    let truth: Vec<ClassLabel> =
        (0..n).map(|_| ClassLabel::from_index(rng.gen_range(0..5)).unwrap()).collect();
    let pred: Vec<ClassLabel> =
        (0..n).map(|_| ClassLabel::from_index(rng.gen_range(0..5)).unwrap()).collect();
    let report = compute_metrics(&confusion(&pred, &truth).unwrap()).unwrap();

    // brute-force recount straight off the label lists
    let overall = pred.iter().zip(&truth).filter(|(p, t)| p == t).count() as f64 / n as f64;
    assert_eq!(report.accuracy, overall);
    for class in ClassLabel::ALL {
        let tp = pred.iter().zip(&truth).filter(|(p, t)| **p == class && **t == class).count();
        let fp = pred.iter().zip(&truth).filter(|(p, t)| **p == class && **t != class).count();
        let fn_ = pred.iter().zip(&truth).filter(|(p, t)| **p != class && **t == class).count();
        let m = &report.per_class[class.name()];
        assert_eq!(m.sensitivity, tp as f64 / (tp + fn_) as f64, "{class} sensitivity");
        assert_eq!(m.precision, tp as f64 / (tp + fp) as f64, "{class} precision");
        assert_eq!(m.f1, 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64, "{class} f1");
    }
    println!("ACCEPTANCE 8 (metrics oracle): PASS — 10000 pairs match the recount exactly");
}

#[test]
fn criterion_09_serialization() {
    // bitwise round trips: TAE, pipeline (CLSA + vocabulary)
    let tae = TaeModel::init(TaeConfig::default(), 9).unwrap();
    let c = tae.to_container().unwrap();
    let back = TaeModel::from_container(&Container::from_bytes(&c.to_bytes()).unwrap()).unwrap();
    for (name, p) in tae.params.iter() {
        let r = back.params.value(name).unwrap();
        for (a, b) in p.value.values().iter().zip(r.values()) {
            assert_eq!(a.to_bits(), b.to_bits(), "tae {name}");
        }
    }

    let ds = generate_synthetic(10, 32, 9).unwrap();
    let cfg = PipelineTrainConfig {
        tae_epochs: 3,
        clsa_epochs: 2,
        clsa: ClsaConfig { conv_filters: 6, lstm_units: 5, dense1: 8, dense2: 6, ..ClsaConfig::default() },
        ..PipelineTrainConfig::default()
    };
    let trained = train_pipeline(&ds, &cfg, 9).unwrap();
    let pc = trained.pipeline.to_container().unwrap();
    let bytes = pc.to_bytes();
    let restored = taeclsa_core::pipeline::Pipeline::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(restored.to_container().unwrap().to_bytes(), bytes);
    assert_eq!(restored.vocab.len(), trained.pipeline.vocab.len());
    for id in 0..restored.vocab.len() as u32 {
        let a = restored.vocab.lookup(id).unwrap();
        let b = trained.pipeline.vocab.lookup(id).unwrap();
        for (x, y) in a.iter().zip(b) {
            assert_eq!(x.to_bits(), y.to_bits(), "vocab id {id}");
        }
    }

    // corrupted byte detection names the entry
    let mut corrupt = bytes.clone();
    let n = corrupt.len();
    corrupt[n - 1] ^= 0x40;
    assert!(matches!(Container::from_bytes(&corrupt), Err(taeclsa_core::Error::Crc(_))));

    // save-at-k / resume-to-n equals straight-to-n (bitwise) — also part of
    // criterion 5; here through full container file round trip on disk
    let dir = tempfile::tempdir().unwrap();
    let pairs: Vec<_> = ds.records.iter().flat_map(|r| make_pairs(r, 9).unwrap()).collect();
    let mut straight = TaeTrainer::new(TaeModel::init(TaeConfig::default(), 9).unwrap(), 1e-3, 9, 1);
    straight.run_epochs(&pairs, 4).unwrap();
    let mut first = TaeTrainer::new(TaeModel::init(TaeConfig::default(), 9).unwrap(), 1e-3, 9, 1);
    first.run_epochs(&pairs, 2).unwrap();
    let ckpt_path = dir.path().join("mid.taec");
    first.to_container().unwrap().save(&ckpt_path).unwrap();
    let mut resumed = TaeTrainer::from_container(&Container::load(&ckpt_path).unwrap()).unwrap();
    resumed.run_epochs(&pairs, 2).unwrap();
    for (name, p) in straight.model.params.iter() {
        let r = resumed.model.params.value(name).unwrap();
        for (a, b) in p.value.values().iter().zip(r.values()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{name} diverged");
        }
    }
    println!("ACCEPTANCE 9 (serialization): PASS — bitwise round trips, CRC detection, resume equivalence");
}

fn run_cli(args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_taeclsa"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        status.status.success(),
        "taeclsa {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&status.stderr)
    );
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut artifacts: Vec<Vec<Vec<u8>>> = Vec::new();
    for run in 0..2 {
        let base = dir.path().join(format!("run{run}"));
        let data = base.join("data");
        let tae_out = base.join("tae");
        let clsa_out = base.join("clsa");
        let s = |p: &Path| p.to_str().unwrap().to_string();
        run_cli(&["synth", "--per-class", "10", "--samples", "64", "--seed", "11", "--out", &s(&data)]);
        run_cli(&["train-tae", "--data", &s(&data), "--epochs", "4", "--seed", "11", "--out", &s(&tae_out)]);
        run_cli(&[
            "train-clsa",
            "--data", &s(&data),
            "--tae", &s(&tae_out.join("tae.taec")),
            "--epochs", "2",
            "--conv-filters", "8",
            "--lstm-units", "6",
            "--seed", "11",
            "--out", &s(&clsa_out),
        ]);
        run_cli(&[
            "evaluate",
            "--model", &s(&clsa_out.join("pipeline.taec")),
            "--data", &s(&data),
            "--split", "test",
            "--json", &s(&base.join("report.json")),
        ]);
        artifacts.push(vec![
            read(&data.join("records.csv")),
            read(&data.join("syn-NORM-0000.ecg")),
            read(&tae_out.join("tae.taec")),
            read(&tae_out.join("tae_loss_batch1.csv")),
            read(&tae_out.join("tae_loss_batch2.csv")),
            read(&clsa_out.join("pipeline.taec")),
            read(&clsa_out.join("clsa_curves.csv")),
            read(&base.join("report.json")),
        ]);
    }
    let names = [
        "records.csv",
        "signal.ecg",
        "tae.taec",
        "tae_loss_batch1.csv",
        "tae_loss_batch2.csv",
        "pipeline.taec",
        "clsa_curves.csv",
        "report.json",
    ];
    for (i, name) in names.iter().enumerate() {
        assert_eq!(artifacts[0][i], artifacts[1][i], "{name} differs between reruns");
    }
    println!("ACCEPTANCE 10 (determinism): PASS — {} artifacts byte-identical across reruns", names.len());
}

// Open-vocabulary inference exercised end to end: predictions for entirely
// unseen records stay on the probability simplex (supports criteria 2/6).
#[test]
fn open_vocabulary_end_to_end() {
    let ds = generate_synthetic(10, 32, 14).unwrap();
    let cfg = PipelineTrainConfig {
        tae_epochs: 2,
        clsa_epochs: 1,
        clsa: ClsaConfig { conv_filters: 6, lstm_units: 5, dense1: 8, dense2: 6, ..ClsaConfig::default() },
        ..PipelineTrainConfig::default()
    };
    let trained = train_pipeline(&ds, &cfg, 14).unwrap();
    let unseen = generate_synthetic(1, 32, 777).unwrap();
    let recs: Vec<&EcgRecord> = unseen.records.iter().collect();
    let preds = trained.pipeline.predict_records(&recs).unwrap();
    for p in &preds {
        let sum: f64 = p.probabilities.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    // and a closed-vocabulary forward on training data for contrast
    let mut vocab: Vocabulary = trained.pipeline.vocab.clone();
    let train_rec = trained.dataset.records_in(Split::Train)[0];
    let seq: TokenSequence = tokenize(train_rec, &mut vocab, VocabMode::Closed).unwrap();
    let pred = clsa_forward(&seq, &trained.pipeline.clsa, Mode::Infer).unwrap();
    assert_eq!(pred.probabilities.len(), 5);
}
