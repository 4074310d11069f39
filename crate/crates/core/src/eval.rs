//! Recall/accuracy metrics, ablation sweeps and inference timing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Action, CategoryQuota, Clip, ClipParams, DatasetSplits};
use crate::error::{Error, Result};
use crate::model::{predict_actions, predict_logits, ModelConfig, ModelParams, Variant};
use crate::train::{init_params, train, TrainConfig, TrainReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `confusion[true][predicted]`
    pub confusion: [[usize; 4]; 4],
    pub counts: [usize; 4],
    /// Percent; `None` when the class has no samples.
    pub recall: [Option<f64>; 4],
    /// Percent.
    pub accuracy: f64,
    pub total: usize,
}

impl MetricsReport {
    pub fn from_predictions(predicted: &[Action], truth: &[Action]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::shape("predictions", truth.len(), predicted.len()));
        }
        if truth.is_empty() {
            return Err(Error::InvalidInput("cannot score an empty test set".into()));
        }
        let mut confusion = [[0usize; 4]; 4];
        for (p, t) in predicted.iter().zip(truth) {
            confusion[t.index()][p.index()] += 1;
        }
        let counts = confusion.map(|row| row.iter().sum::<usize>());
        let mut recall = [None; 4];
        for j in 0..4 {
            if counts[j] == 0 {
                warn!("class {} absent from the test set; recall undefined", Action::ALL[j]);
            } else {
                recall[j] = Some(100.0 * confusion[j][j] as f64 / counts[j] as f64);
            }
        }
        let correct: usize = (0..4).map(|j| confusion[j][j]).sum();
        Ok(MetricsReport {
            confusion,
            counts,
            recall,
            accuracy: 100.0 * correct as f64 / truth.len() as f64,
            total: truth.len(),
        })
    }

    /// Classes with no test samples.
    pub fn missing_classes(&self) -> Vec<Action> {
        (0..4)
            .filter(|&j| self.counts[j] == 0)
            .map(|j| Action::ALL[j])
            .collect()
    }
}

/// Argmax predictions of `params` on `clips`, scored against their labels.
pub fn evaluate(params: &ModelParams, clips: &[Clip]) -> Result<MetricsReport> {
    if clips.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty test set".into()));
    }
    let predicted = predict_actions(clips, params)?;
    let truth: Vec<Action> = clips.iter().map(|c| c.label).collect();
    MetricsReport::from_predictions(&predicted, &truth)
}

/// [`evaluate`] with a check that `params` belong to `variant`.
pub fn evaluate_variant(
    params: &ModelParams,
    clips: &[Clip],
    variant: Variant,
) -> Result<MetricsReport> {
    if params.variant() != variant {
        return Err(Error::InvalidInput(format!(
            "parameters are for variant {}, not {variant}",
            params.variant()
        )));
    }
    evaluate(params, clips)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceTiming {
    pub clips: usize,
    pub total_seconds: f64,
    pub us_per_clip: f64,
}

/// Median wall-clock of three full passes over `clips`, after one untimed
/// warm-up pass.
pub fn measure_inference(params: &ModelParams, clips: &[Clip]) -> Result<InferenceTiming> {
    if clips.is_empty() {
        return Ok(InferenceTiming {
            clips: 0,
            total_seconds: 0.0,
            us_per_clip: 0.0,
        });
    }
    predict_logits(clips, params)?;
    let mut times = Vec::with_capacity(3);
    for _ in 0..3 {
        let t0 = Instant::now();
        predict_logits(clips, params)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let total = times[1];
    Ok(InferenceTiming {
        clips: clips.len(),
        total_seconds: total,
        us_per_clip: total * 1e6 / clips.len() as f64,
    })
}

/// One `(T, FT, K)` combination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Setting {
    pub history: usize,
    pub future: usize,
    pub order: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub variants: Vec<Variant>,
    pub history: Vec<usize>,
    pub future: Vec<usize>,
    pub order: Vec<usize>,
    pub quotas: Vec<CategoryQuota>,
    pub seeds: Vec<u64>,
    /// Explicit settings replacing the `history × future × order` product.
    pub settings: Option<Vec<Setting>>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            variants: Variant::ALL.to_vec(),
            history: vec![2, 5, 10, 15],
            future: vec![1, 5, 10],
            order: vec![1, 3, 5],
            quotas: vec![CategoryQuota::default()],
            seeds: vec![0],
            settings: None,
        }
    }
}

impl SweepSpec {
    /// Every variant at `T = 10, FT = 1, K = 1`.
    pub fn table1() -> Self {
        SweepSpec {
            history: vec![10],
            future: vec![1],
            order: vec![1],
            ..Default::default()
        }
    }

    /// The full model at four contrasting settings drawn from
    /// `T ∈ {2, 15}`, `FT ∈ {1, 10}`, `K ∈ {1, 5}`.
    pub fn table2() -> Self {
        let set = |history, order, future| Setting {
            history,
            future,
            order,
        };
        SweepSpec {
            variants: vec![Variant::Full],
            settings: Some(vec![set(2, 5, 1), set(15, 5, 1), set(15, 1, 1), set(15, 5, 10)]),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |name: &str| Err(Error::InvalidConfig(format!("sweep {name} set is empty")));
        if self.variants.is_empty() {
            return empty("variants");
        }
        if self.quotas.is_empty() {
            return empty("quotas");
        }
        if self.seeds.is_empty() {
            return empty("seeds");
        }
        match &self.settings {
            Some(s) if s.is_empty() => return empty("settings"),
            Some(_) => {}
            None => {
                if self.history.is_empty() {
                    return empty("history");
                }
                if self.future.is_empty() {
                    return empty("future");
                }
                if self.order.is_empty() {
                    return empty("order");
                }
            }
        }
        for q in &self.quotas {
            q.validate()?;
        }
        Ok(())
    }

    pub fn settings(&self) -> Vec<Setting> {
        if let Some(s) = &self.settings {
            return s.clone();
        }
        let mut out = Vec::new();
        for &history in &self.history {
            for &future in &self.future {
                for &order in &self.order {
                    out.push(Setting {
                        history,
                        future,
                        order,
                    });
                }
            }
        }
        out
    }

    /// Cartesian product of settings, quotas, variants and seeds.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for setting in self.settings() {
            for &quota in &self.quotas {
                for &variant in &self.variants {
                    for &seed in &self.seeds {
                        out.push(CellKey {
                            variant,
                            setting,
                            quota,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub variant: Variant,
    pub setting: Setting,
    pub quota: CategoryQuota,
    pub seed: u64,
}

impl CellKey {
    pub fn label(&self) -> String {
        format!(
            "{}|T{}|FT{}|K{}|{}|s{}",
            self.variant,
            self.setting.history,
            self.setting.future,
            self.setting.order,
            self.quota,
            self.seed
        )
    }

    /// Seed of this cell's init and shuffling streams.
    pub fn derived_seed(&self, master: u64) -> u64 {
        derive_seed(master, &self.label())
    }
}

/// Keyed hash of `(master, key)` folded to 64 bits.
pub fn derive_seed(master: u64, key: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(key.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub key: CellKey,
    pub metrics: Option<MetricsReport>,
    pub inference: Option<InferenceTiming>,
    pub report: Option<TrainReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationResults {
    pub cells: Vec<AblationCell>,
}

/// Trains and scores every cell of `spec` from a fresh seeded init.
/// `dataset` is called once per distinct `(T, FT, quota)`; its result is
/// shared across the cells that need it. A failing cell is recorded and the
/// sweep moves on.
pub fn run_ablation<F>(
    spec: &SweepSpec,
    train_cfg: &TrainConfig,
    model: &ModelConfig,
    master_seed: u64,
    mut dataset: F,
) -> Result<AblationResults>
where
    F: FnMut(&ClipParams) -> Result<DatasetSplits>,
{
    spec.validate()?;
    train_cfg.validate()?;
    let mut cache: BTreeMap<(usize, usize, String), std::result::Result<DatasetSplits, String>> =
        BTreeMap::new();
    let mut results = AblationResults::default();
    for key in spec.cells() {
        let clip = ClipParams {
            history: key.setting.history,
            future: key.setting.future,
            quota: key.quota,
        };
        let data = cache
            .entry((clip.history, clip.future, clip.quota.to_string()))
            .or_insert_with(|| dataset(&clip).map_err(|e| e.to_string()));
        let outcome = match data {
            Ok(splits) => run_cell(&key, splits, train_cfg, model, master_seed),
            Err(e) => Err(Error::InvalidInput(format!("dataset unavailable: {e}"))),
        };
        let cell = match outcome {
            Ok((metrics, inference, report)) => {
                info!("{}: accuracy {:.2}", key.label(), metrics.accuracy);
                AblationCell {
                    key,
                    metrics: Some(metrics),
                    inference: Some(inference),
                    report: Some(report),
                    error: None,
                }
            }
            Err(e) => {
                warn!("{} failed: {e}", key.label());
                let report = match &e {
                    Error::NumericFault { partial, .. } => partial.as_deref().cloned(),
                    _ => None,
                };
                AblationCell {
                    key,
                    metrics: None,
                    inference: None,
                    report,
                    error: Some(e.to_string()),
                }
            }
        };
        results.cells.push(cell);
    }
    Ok(results)
}

fn run_cell(
    key: &CellKey,
    splits: &DatasetSplits,
    train_cfg: &TrainConfig,
    model: &ModelConfig,
    master_seed: u64,
) -> Result<(MetricsReport, InferenceTiming, TrainReport)> {
    if splits.test.is_empty() {
        return Err(Error::InvalidInput("test split is empty".into()));
    }
    let seed = key.derived_seed(master_seed);
    let cfg = ModelConfig {
        variant: key.variant,
        history: key.setting.history,
        future: key.setting.future,
        order: key.setting.order,
        quota: key.quota,
        ..model.clone()
    };
    let init = init_params(&cfg, seed)?;
    let tc = TrainConfig {
        seed,
        ..train_cfg.clone()
    };
    let (params, report) = train(splits, init, &tc)?;
    let metrics = match &report.test_metrics {
        Some(m) => m.clone(),
        None => evaluate(&params, &splits.test)?,
    };
    let timing = measure_inference(&params, &splits.test)?;
    Ok((metrics, timing, report))
}

pub const RESULTS_HEADER: [&str; 14] = [
    "variant",
    "T",
    "FT",
    "K",
    "n_car",
    "n_ped",
    "n_traffic",
    "seed",
    "recall_fb",
    "recall_sb",
    "recall_sa",
    "recall_fa",
    "accuracy",
    "infer_us_per_clip",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl AblationResults {
    /// Flat results table. Failed cells keep their key with empty metric
    /// columns; groups with several seeds get an extra `mean` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(RESULTS_HEADER).map_err(csv_err)?;
        let mut groups: Vec<(CellKey, Vec<&AblationCell>)> = Vec::new();
        for cell in &self.cells {
            let k = cell.key;
            match groups
                .iter_mut()
                .find(|(g, _)| g.variant == k.variant && g.setting == k.setting && g.quota == k.quota)
            {
                Some((_, v)) => v.push(cell),
                None => groups.push((k, vec![cell])),
            }
        }
        for (key, cells) in &groups {
            let prefix = |seed: String| {
                vec![
                    key.variant.to_string(),
                    key.setting.history.to_string(),
                    key.setting.future.to_string(),
                    key.setting.order.to_string(),
                    key.quota.car.to_string(),
                    key.quota.pedestrian.to_string(),
                    key.quota.traffic.to_string(),
                    seed,
                ]
            };
            for cell in cells {
                let mut row = prefix(cell.key.seed.to_string());
                match &cell.metrics {
                    Some(m) => {
                        row.extend(m.recall.iter().map(|r| fmt_opt(*r)));
                        row.push(format!("{:.4}", m.accuracy));
                    }
                    None => row.extend(std::iter::repeat(String::new()).take(5)),
                }
                row.push(fmt_opt(cell.inference.map(|t| t.us_per_clip)));
                w.write_record(&row).map_err(csv_err)?;
            }
            if cells.len() > 1 {
                let mut row = prefix("mean".into());
                for j in 0..4 {
                    row.push(fmt_opt(mean_of(
                        cells.iter().map(|c| c.metrics.as_ref().and_then(|m| m.recall[j])),
                    )));
                }
                row.push(fmt_opt(mean_of(
                    cells.iter().map(|c| c.metrics.as_ref().map(|m| m.accuracy)),
                )));
                row.push(fmt_opt(mean_of(
                    cells.iter().map(|c| c.inference.map(|t| t.us_per_clip)),
                )));
                w.write_record(&row).map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
    }

    /// Long-format loss curves: one row per (cell, epoch).
    pub fn loss_curves_csv(&self) -> String {
        let mut s = String::from("variant,T,FT,K,seed,epoch,train_loss,val_loss\n");
        for cell in &self.cells {
            let Some(r) = &cell.report else { continue };
            let k = cell.key;
            for e in &r.epochs {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{:.17e},{:.17e}",
                    k.variant,
                    k.setting.history,
                    k.setting.future,
                    k.setting.order,
                    k.seed,
                    e.epoch,
                    e.train_loss,
                    e.val_loss
                );
            }
        }
        s
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
