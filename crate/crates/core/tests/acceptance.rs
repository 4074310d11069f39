//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS or FAIL line, then exits non-zero on any failure.

mod common;

use std::collections::HashMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{
    jittered_params, max_abs_diff, pad_clip, permute_within_views, random_adjacency, random_layer,
    random_stacks, small_model, small_quota,
};
use egospeed::cli::{report_json, EvalSummary, RunConfig, RunManifest, ARCHIVE_FILE, CHECKPOINT_FILE};
use egospeed::data::archive::ClipArchive;
use egospeed::data::logs::{read_file, write_records, DETECTIONS_FILE, SENSORS_FILE};
use egospeed::data::{
    class_histogram, derive_label, downsample_stride, oversample_indices, prepare_dataset,
    split_dataset, Action, CategoryQuota, Clip, ClipMeta, DerivedLabel, FrameDetections,
    PrepareConfig, Scenario, SensorSample, SplitConfig, SplitRatios,
};
use egospeed::eval::{evaluate, run_ablation, AblationResults, SweepSpec, RESULTS_HEADER};
use egospeed::graph::spectral::spectral_cheb_conv;
use egospeed::graph::{cheb_conv, encode_clip_spatial, Activation, GraphOperator};
use egospeed::model::{argmax, checkpoint, forward, softmax_rows, ModelConfig, ModelParams, Variant};
use egospeed::synth::{generate, OracleRecord};
use egospeed::train::gradcheck::{random_clip, run_default, GradcheckConfig};
use egospeed::train::{dataset_loss, init_params, train, train_with_validation, TrainConfig, TrainReport};
use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let cfg = GradcheckConfig::default();
    let mut coords = 0;
    let mut worst = 0.0f64;
    for v in Variant::ALL {
        let r = run_default(v, &cfg).map_err(err)?;
        ensure!(r.passed(), "{v}: {} of {} coordinates off", r.failures, r.coordinates);
        coords += r.coordinates;
        worst = worst.max(r.max_rel_error);
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("{coords} coordinates over 5 variants, max rel error {worst:.1e}, {secs:.1}s"))
}

fn spectral_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(1..=8);
        let order = rng.gen_range(0..=5);
        let (i, o) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let g = if rng.gen_bool(0.5) {
            GraphOperator::from_adjacency(random_adjacency(&mut rng, n)).map_err(err)?
        } else {
            GraphOperator::complete(rng.gen_range(0..=n), n).map_err(err)?
        };
        let p = random_layer(&mut rng, order, i, o);
        let x = Array2::from_shape_fn((n, i), |_| rng.gen_range(-1.0..1.0));
        let a = cheb_conv(x.view(), &g, &p, Activation::Identity).map_err(err)?;
        let b = spectral_cheb_conv(x.view(), &g, &p, Activation::Identity).map_err(err)?;
        worst = worst.max(max_abs_diff(&a, &b));
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(worst <= 1e-10, "max abs diff {worst:.2e}");
    ensure!(secs < 10.0, "took {secs:.1}s");
    Ok(format!("200 graphs, max abs diff {worst:.1e}, {secs:.2}s"))
}

fn invariance_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let quota = small_quota();
    let mut passes = [0usize; 4];
    for trial in 0..100u64 {
        let cfg = small_model(Variant::ALL[trial as usize % 5]);
        let params = jittered_params(&cfg, trial);

        let stacks = random_stacks(&mut rng);
        let clip = random_clip(5, &quota, Action::FullBraking, &mut rng);
        let shuffled = permute_within_views(&clip, &quota, &mut rng);
        let a = encode_clip_spatial(&clip, &stacks, &quota, Activation::Relu).map_err(err)?;
        let b = encode_clip_spatial(&shuffled, &stacks, &quota, Activation::Relu).map_err(err)?;
        let perm = max_abs_diff(&a.car, &b.car)
            .max(max_abs_diff(&a.pedestrian, &b.pedestrian))
            .max(max_abs_diff(&a.traffic, &b.traffic));
        passes[0] += (perm <= 1e-12) as usize;

        let bigger = CategoryQuota::new(quota.car + 4, quota.pedestrian + 2, quota.traffic + 3)
            .map_err(err)?;
        let mut wide = params.clone();
        wide.config.quota = bigger;
        let clip = random_clip(cfg.history, &quota, Action::SlightBraking, &mut rng);
        let la = forward(&clip, &params).map_err(err)?.logits;
        let lb = forward(&pad_clip(&clip, &quota, &bigger), &wide).map_err(err)?.logits;
        let pad = la.iter().zip(&lb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        passes[1] += (pad <= 1e-12) as usize;

        let pred = forward(&clip, &params).map_err(err)?;
        let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
        let raw = Array2::from_shape_fn((4, 4), |_| rng.gen_range(-1.0..1.0) * scale);
        let probs = softmax_rows(&raw);
        let on_simplex = |p: ndarray::ArrayView1<f64>| {
            p.iter().all(|&v| (0.0..=1.0).contains(&v)) && (p.sum() - 1.0).abs() <= 1e-12
        };
        let simplex = on_simplex(pred.probs.view()) && probs.rows().into_iter().all(on_simplex);
        passes[2] += simplex as usize;

        let shift = rng.gen_range(-1e3..1e3);
        let shifted: Array1<f64> = &pred.logits + shift;
        let q = softmax_rows(&shifted.clone().insert_axis(Axis(0)));
        let same = argmax(shifted.view()) == pred.action().index()
            && argmax(q.row(0)) == pred.action().index()
            && q.row(0).iter().zip(&pred.probs).all(|(x, y)| (x - y).abs() <= 1e-12);
        passes[3] += same as usize;
    }
    ensure!(
        passes == [100; 4],
        "passes out of 100: permutation {}, padding {}, simplex {}, shift {}",
        passes[0],
        passes[1],
        passes[2],
        passes[3]
    );
    Ok("permutation, padding, simplex and logit-shift each 100/100".into())
}

fn label_derivation() -> Outcome {
    use Action::*;
    let sample = |brake_kpa, accel_pct, scenario| SensorSample {
        session: "grid".into(),
        frame_index: 0,
        brake_kpa,
        accel_pct,
        steer_deg: 0.0,
        scenario,
        is_moving: Some(true),
    };
    let (hw, ub) = (Scenario::Highway, Scenario::Urban);
    let grid = [
        (958.0, 0.0, hw, FullBraking),
        (1200.0, 0.0, hw, FullBraking),
        (957.9, 0.0, hw, SlightBraking),
        (300.0, 0.0, hw, SlightBraking),
        (1461.0, 0.0, ub, FullBraking),
        (2000.0, 0.0, ub, FullBraking),
        (1460.9, 0.0, ub, SlightBraking),
        (1000.0, 0.0, ub, SlightBraking),
        (0.0, 22.0, hw, FullAcceleration),
        (0.0, 40.0, hw, FullAcceleration),
        (0.0, 21.9, hw, SlightAcceleration),
        (0.0, 5.0, hw, SlightAcceleration),
        (0.0, 19.0, ub, FullAcceleration),
        (0.0, 30.0, ub, FullAcceleration),
        (0.0, 18.9, ub, SlightAcceleration),
        (0.0, 10.0, ub, SlightAcceleration),
    ];
    for (b, a, sc, want) in grid {
        let got = derive_label(&sample(b, a, sc)).map_err(err)?;
        ensure!(got == DerivedLabel::Action(want), "({b} kPa, {a}%, {sc:?}) gave {got:?}, want {want:?}");
    }
    let hw_1000 = derive_label(&sample(1000.0, 0.0, hw)).map_err(err)?;
    let ub_1000 = derive_label(&sample(1000.0, 0.0, ub)).map_err(err)?;
    ensure!(hw_1000 == DerivedLabel::Action(FullBraking), "1000 kPa highway gave {hw_1000:?}");
    ensure!(ub_1000 == DerivedLabel::Action(SlightBraking), "1000 kPa urban gave {ub_1000:?}");
    let coast = derive_label(&sample(0.0, 0.0, hw)).map_err(err)?;
    ensure!(coast == DerivedLabel::Coast, "idle pedals gave {coast:?}");
    Ok("16-case grid exact; 1000 kPa is full braking on highway, slight in urban".into())
}

fn dataset_plumbing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let weights = [0.45, 0.3, 0.15, 0.1];
    let clips: Vec<Clip> = (0..58721u64)
        .map(|i| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let k = weights.iter().position(|w| {
                acc += w;
                u < acc
            });
            Clip {
                features: Array3::zeros((1, 1, 4)),
                mask: Array2::from_elem((1, 1), false),
                label: Action::ALL[k.unwrap_or(3)],
                meta: ClipMeta {
                    session: format!("s{}", i / 300),
                    anchor: i,
                    anchor_frame: i,
                    scenario: Scenario::Urban,
                },
            }
        })
        .collect();
    let splits = split_dataset(clips, SplitRatios::default(), 11).map_err(err)?;
    let counts = (splits.train.len(), splits.val.len(), splits.test.len());
    ensure!(counts == (41105, 5872, 11744), "split counts {counts:?}");
    let labels: Vec<Action> = splits.train.iter().map(|c| c.label).collect();
    let idx = oversample_indices(&labels, 3);
    let mut hist = [0usize; 4];
    for &i in &idx {
        hist[labels[i].index()] += 1;
    }
    ensure!(hist.iter().all(|&h| h == hist[0]), "oversampled histogram {hist:?}");
    ensure!(idx[..labels.len()].iter().enumerate().all(|(k, &i)| k == i), "originals not kept in place");
    Ok(format!(
        "58721 -> {}/{}/{}; train {:?} oversampled to {hist:?}",
        counts.0,
        counts.1,
        counts.2,
        class_histogram(&splits.train)
    ))
}

fn early_stopping() -> Outcome {
    let data = common::small_synth(6, 450, 6);
    let clip = egospeed::data::ClipParams {
        history: 3,
        future: 1,
        quota: small_quota(),
    };
    let splits = common::prepare_small(&data, clip, false);
    let init = init_params(&small_model(Variant::Full), 6).map_err(err)?;

    let mut seq = vec![1.0, 0.9];
    seq.extend(std::iter::repeat(0.9 - 5e-7).take(60));
    let mut snaps: Vec<ModelParams> = Vec::new();
    let cfg = TrainConfig {
        batch_size: 64,
        max_epochs: 100,
        ..Default::default()
    };
    let (best, report) = train_with_validation(&splits.train, init.clone(), &cfg, |e, p| {
        snaps.push(p.clone());
        Ok(seq[e - 1])
    })
    .map_err(err)?;
    ensure!(report.stop_epoch == 52, "stopped at epoch {}", report.stop_epoch);
    ensure!(report.best_epoch == 2, "best epoch {}", report.best_epoch);
    ensure!(best == snaps[1], "returned parameters are not the epoch-2 snapshot");

    let real = TrainConfig {
        batch_size: 16,
        patience: 3,
        max_epochs: 15,
        seed: 9,
        ..Default::default()
    };
    let (best, report) = train(&splits, init, &real).map_err(err)?;
    let again = dataset_loss(&splits.val, &best).map_err(err)?;
    let gap = (again - report.best_val_loss).abs();
    ensure!(gap <= 1e-12, "re-evaluated {again} vs recorded {}", report.best_val_loss);
    Ok(format!(
        "constructed sequence stops at 52 with best 2; real run best {} of {}, re-eval gap {gap:.0e}",
        report.best_epoch, report.stop_epoch
    ))
}

fn learnability() -> Outcome {
    let mut run = RunConfig::load(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml")))
        .map_err(err)?;
    run.synth.seed = run.stage_seed("synth");
    run.prepare.split.seed = run.stage_seed("split");
    run.train.seed = run.stage_seed("train");
    let data = generate(&run.synth).map_err(err)?;
    let prep = run.prepare.prepare_config(run.prepare.clip_params());
    let clips = prepare_dataset(&data.frames, &data.sensors, &prep).map_err(err)?;
    let hist = class_histogram(&clips);
    ensure!(clips.len() >= 2000, "only {} clips", clips.len());
    ensure!(hist.iter().all(|&h| h > 0), "class histogram {hist:?}");
    let splits = run.prepare.split.apply(clips).map_err(err)?;
    let mut acc = HashMap::new();
    let mut full_secs = 0.0;
    for variant in [Variant::Full, Variant::Base] {
        let started = Instant::now();
        let model = ModelConfig {
            variant,
            ..run.model.clone()
        };
        let init = init_params(&model, run.stage_seed("init")).map_err(err)?;
        let (params, report) = train(&splits, init, &run.train).map_err(err)?;
        let m = evaluate(&params, &splits.test).map_err(err)?;
        println!(
            "    {variant}: {:.2}% test accuracy, best epoch {} of {}, {:.0}s",
            m.accuracy,
            report.best_epoch,
            report.stop_epoch,
            started.elapsed().as_secs_f64()
        );
        if variant == Variant::Full {
            full_secs = started.elapsed().as_secs_f64();
            ensure!(report.stop_epoch <= 200, "ran {} epochs", report.stop_epoch);
        }
        acc.insert(variant, m.accuracy);
    }
    let (full, base) = (acc[&Variant::Full], acc[&Variant::Base]);
    ensure!(full >= 90.0, "full reached {full:.2}%");
    ensure!(full_secs <= 600.0, "full took {full_secs:.0}s");
    ensure!(full - base >= 10.0, "base {base:.2}% is within 10 points of full {full:.2}%");
    Ok(format!(
        "{} clips {hist:?}; full {full:.2}% in {full_secs:.0}s, base {base:.2}%",
        hist.iter().sum::<usize>()
    ))
}

/// Everything except wall-clock fields, bit for bit.
fn fingerprint(results: &AblationResults) -> Vec<String> {
    results
        .cells
        .iter()
        .map(|c| {
            let losses: Vec<(u64, u64)> = c
                .report
                .iter()
                .flat_map(|r| &r.epochs)
                .map(|e| (e.train_loss.to_bits(), e.val_loss.to_bits()))
                .collect();
            format!("{}|{:?}|{:?}|{:?}", c.key.label(), c.metrics, losses, c.error)
        })
        .collect()
}

fn ablation_harness() -> Outcome {
    let data = common::small_synth(10, 600, 8);
    let train_cfg = TrainConfig {
        batch_size: 32,
        patience: 2,
        max_epochs: 3,
        ..Default::default()
    };
    let model = ModelConfig::default();
    let mut summary = Vec::new();
    for (name, spec) in [("table1", SweepSpec::table1()), ("table2", SweepSpec::table2())] {
        let spec = SweepSpec {
            quotas: vec![CategoryQuota::new(6, 3, 3).map_err(err)?],
            ..spec
        };
        let run = || {
            run_ablation(&spec, &train_cfg, &model, 17, |clip| {
                let prep = PrepareConfig {
                    clip: *clip,
                    ..Default::default()
                };
                let clips = prepare_dataset(&data.frames, &data.sensors, &prep)?;
                SplitConfig {
                    by_session: true,
                    ..Default::default()
                }
                .apply(clips)
            })
        };
        let first = run().map_err(err)?;
        let second = run().map_err(err)?;
        ensure!(first.cells.len() == spec.cells().len(), "{name}: {} cells", first.cells.len());
        if let Some(c) = first.cells.iter().find(|c| c.error.is_some()) {
            return Err(format!("{name}: cell {} failed: {:?}", c.key.label(), c.error));
        }
        ensure!(fingerprint(&first) == fingerprint(&second), "{name}: reruns differ");
        let table = first.to_csv().map_err(err)?;
        let mut reader = csv::Reader::from_reader(table.as_bytes());
        let header: Vec<String> = reader.headers().map_err(err)?.iter().map(String::from).collect();
        ensure!(header == RESULTS_HEADER, "{name}: header {header:?}");
        let mut rows = 0;
        for rec in reader.records() {
            let rec = rec.map_err(err)?;
            ensure!(rec.len() == header.len(), "{name}: ragged row");
            let acc: f64 = rec[header.iter().position(|h| h == "accuracy").unwrap()]
                .parse()
                .map_err(err)?;
            ensure!((0.0..=100.0).contains(&acc), "{name}: accuracy {acc}");
            rows += 1;
        }
        ensure!(rows == spec.cells().len(), "{name}: {rows} rows");
        summary.push(format!("{name} {rows} cells"));
    }
    Ok(format!("{}, reruns bitwise identical", summary.join(", ")))
}

#[derive(Deserialize)]
struct Stamped<T> {
    schema: String,
    #[serde(flatten)]
    body: T,
}

fn reload_jsonl<T>(path: &Path) -> Result<(), String>
where
    T: serde::de::DeserializeOwned + serde::Serialize,
{
    let bytes = fs::read(path).map_err(err)?;
    let records: Vec<T> = read_file(path).map_err(err)?;
    let mut again = Vec::new();
    write_records(&records, &mut again).map_err(err)?;
    ensure!(again == bytes, "{} does not re-serialize identically", path.display());
    Ok(())
}

fn reload_stamped<T>(path: &Path) -> Result<T, String>
where
    T: serde::de::DeserializeOwned + serde::Serialize,
{
    let text = fs::read_to_string(path).map_err(err)?;
    let s: Stamped<T> = serde_json::from_str(&text).map_err(err)?;
    ensure!(s.schema == egospeed::cli::REPORT_SCHEMA, "schema {}", s.schema);
    ensure!(report_json(&s.body).map_err(err)? == text, "{} does not re-serialize identically", path.display());
    Ok(s.body)
}

fn round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg_path = dir.path().join("run.toml");
    fs::write(
        &cfg_path,
        "schema = \"egospeed.config/1\"\nseed = 21\n\
         [synth]\nsessions = 6\nframes_per_session = 600\n\
         [prepare]\nhistory = 5\nfuture = 2\n\
         [prepare.quota]\ncar = 6\npedestrian = 3\ntraffic = 3\n\
         [prepare.split]\nby_session = true\n\
         [model]\ngraph_widths = [8, 16]\nlstm_hidden = 16\nmlp_hidden = [16]\n\
         [train]\nbatch_size = 32\npatience = 2\nmax_epochs = 4\n",
    )
    .map_err(err)?;
    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scripts/pipeline.sh");
    let out = dir.path().join("out");
    let status = Command::new("bash")
        .arg(script)
        .arg(&out)
        .env("EGOSPEED", env!("CARGO_BIN_EXE_egospeed"))
        .env("CONFIG", &cfg_path)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(err)?;
    ensure!(
        status.status.success(),
        "pipeline script failed: {}",
        String::from_utf8_lossy(&status.stderr)
    );

    let logs = out.join("logs");
    reload_jsonl::<FrameDetections>(&logs.join(DETECTIONS_FILE))?;
    reload_jsonl::<SensorSample>(&logs.join(SENSORS_FILE))?;
    reload_jsonl::<OracleRecord>(&logs.join(egospeed::cli::ORACLE_FILE))?;

    let archive_path = out.join("prepared").join(ARCHIVE_FILE);
    let archive_bytes = fs::read(&archive_path).map_err(err)?;
    let archive = ClipArchive::from_bytes(&archive_bytes).map_err(err)?;
    ensure!(archive.to_bytes().map_err(err)? == archive_bytes, "archive re-encodes differently");

    let ckpt_path = out.join("train").join(CHECKPOINT_FILE);
    let ckpt_bytes = fs::read(&ckpt_path).map_err(err)?;
    let params = checkpoint::from_bytes(&ckpt_bytes).map_err(err)?;
    ensure!(checkpoint::to_bytes(&params).map_err(err)? == ckpt_bytes, "checkpoint re-encodes differently");

    let report: TrainReport = reload_stamped(&out.join("train").join("report.json"))?;
    let epochs = fs::read_to_string(out.join("train").join("epochs.csv")).map_err(err)?;
    ensure!(report.epochs_csv() == epochs, "epochs.csv disagrees with report.json");
    let summary: EvalSummary = reload_stamped(&out.join("eval").join("metrics.json"))?;
    ensure!(Some(&summary.metrics) == report.test_metrics.as_ref(), "eval metrics differ from training report");
    let recomputed = evaluate(&params, &archive.splits.test).map_err(err)?;
    ensure!(recomputed == summary.metrics, "reloaded checkpoint scores differently");

    for stage in ["logs", "prepared", "train", "eval"] {
        let path = out.join(stage).join("manifest.json");
        let text = fs::read_to_string(&path).map_err(err)?;
        let m: RunManifest = serde_json::from_str(&text).map_err(err)?;
        ensure!(serde_json::to_string_pretty(&m).map_err(err)? + "\n" == text, "{stage} manifest re-serializes differently");
        for a in m.inputs.iter().chain(&m.outputs) {
            let sha = egospeed::cli::sha256_hex(&fs::read(&a.path).map_err(err)?);
            ensure!(sha == a.sha256, "{stage}: {} hash mismatch", a.role);
        }
    }

    let oracle: Vec<OracleRecord> = read_file(&logs.join(egospeed::cli::ORACLE_FILE)).map_err(err)?;
    let by_frame: HashMap<(String, u64), Option<Action>> = oracle
        .into_iter()
        .map(|o| ((o.session, o.frame_index), o.action))
        .collect();
    let prep = &archive.meta.prepare;
    let stride = downsample_stride(prep.source_fps, prep.target_fps).map_err(err)? as u64;
    let mut checked = 0;
    for clip in archive.splits.train.iter().chain(&archive.splits.val).chain(&archive.splits.test) {
        let target = clip.meta.anchor_frame + prep.clip.future as u64 * stride;
        let want = by_frame.get(&(clip.meta.session.clone(), target)).copied().flatten();
        ensure!(
            want == Some(clip.label),
            "{} frame {target}: clip label {:?}, oracle {want:?}",
            clip.meta.session,
            clip.label
        );
        checked += 1;
    }
    ensure!(checked > 0, "archive is empty");
    Ok(format!(
        "{checked} clip labels match the oracle at t+FT; 4 stages, every artifact reloads bit-exactly"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", gradient_correctness),
        ("spectral oracle", spectral_oracle),
        ("invariance suite", invariance_suite),
        ("label derivation", label_derivation),
        ("dataset plumbing", dataset_plumbing),
        ("early stopping", early_stopping),
        ("end-to-end learnability", learnability),
        ("ablation harness", ablation_harness),
        ("round-trip integrity", round_trip),
    ];
    // Bare numbers on the command line select criteria; anything else
    // (libtest flags passed through by cargo) is ignored.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {} {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
