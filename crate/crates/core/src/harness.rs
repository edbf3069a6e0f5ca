//! Desk-scale experiment engine: seeded synthetic concepts, sequential
//! editing drift curves, and the editing-time benchmark.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::edit_solvers::{
    ace_deltas, ace_edit_with, apply_edit, relative_change, sequential_edit_with, uce_delta,
    uce_delta_with_gram, AceProjectors, EditMode, EditRequest, EditResult, KnowledgeLedger,
};
use crate::error::{EditError, Result};
use crate::linalg::{
    gram, projector_from_gram, svd, EmbeddingSet, Matrix, NullSpaceProjector, WeightKind,
    WeightMatrix,
};

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    // Column-major fill so a column is a contiguous run of draws.
    Matrix::from_iterator(rows, cols, (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// `n` concept columns with i.i.d. standard normal entries; identical seeds
/// give identical bytes.
pub fn generate_concepts(seed: u64, d: usize, n: usize) -> EmbeddingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingSet::new(normal_matrix(&mut rng, d, n), "generated").expect("normal draws are finite")
}

/// Random projection with entries of variance `1/d_in`.
pub fn random_weight(seed: u64, d_out: usize, d_in: usize, kind: WeightKind) -> WeightMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (d_in as f64).sqrt();
    WeightMatrix::new(normal_matrix(&mut rng, d_out, d_in) * scale, kind).expect("finite weight")
}

/// Concepts lying within `max_angle_deg` of the span of `preserve`.
///
/// Each column mixes a unit vector inside the span with one orthogonal to
/// it at an angle drawn from `[0.25, 0.75]·max_angle_deg`, then is scaled to
/// norm `√d`.
pub fn conflict_concepts(
    seed: u64,
    preserve: &EmbeddingSet,
    n: usize,
    max_angle_deg: f64,
) -> Result<EmbeddingSet> {
    let d = preserve.dim();
    if preserve.is_empty() {
        return Err(EditError::InvalidArgument("conflict concepts need a preserve set".into()));
    }
    let f = svd(preserve.data())?;
    let smax = f.singular_values[0];
    let rank = f.singular_values.iter().filter(|&&s| s > 1e-8 * smax).count();
    let inside = f.left_vectors.columns(0, rank).into_owned();
    let outside = f.left_vectors.columns(rank, d - rank).into_owned();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Matrix::zeros(d, n);
    for j in 0..n {
        let a = (&inside * normal_matrix(&mut rng, rank, 1)).normalize();
        let theta = max_angle_deg.to_radians() * rng.random_range(0.25..0.75);
        let col = if outside.ncols() > 0 {
            let b = (&outside * normal_matrix(&mut rng, outside.ncols(), 1)).normalize();
            a * theta.cos() + b * theta.sin()
        } else {
            a
        };
        out.column_mut(j).copy_from(&(col * (d as f64).sqrt()).column(0));
    }
    EmbeddingSet::new(out, "erase")
}

// ── Sequential scenario ─────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub d_in: usize,
    pub d_out: usize,
    pub n_edits: usize,
    pub preserve_size: usize,
    pub erase_per_edit: usize,
    pub seed: u64,
    pub strategies: Vec<EditMode>,
    pub ridge: f64,
    pub tol: f64,
    /// Draw erase concepts within this angle of the preserve span.
    pub conflict_angle_deg: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            d_in: 64,
            d_out: 64,
            n_edits: 10,
            preserve_size: 16,
            erase_per_edit: 1,
            seed: 0,
            strategies: EditMode::ALL.to_vec(),
            ridge: EditRequest::DEFAULT_RIDGE,
            tol: crate::linalg::DEFAULT_TOL,
            conflict_angle_deg: None,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_out == 0 || self.erase_per_edit == 0 {
            return Err(EditError::InvalidArgument(
                "dimensions and erase_per_edit must be positive".into(),
            ));
        }
        if self.strategies.is_empty() {
            return Err(EditError::InvalidArgument("no strategies selected".into()));
        }
        if let Some(a) = self.conflict_angle_deg {
            if !(a > 0.0 && a < 90.0) || self.preserve_size == 0 {
                return Err(EditError::InvalidArgument(
                    "conflict angle must be in (0, 90) degrees with a nonempty preserve set".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub edit_index: usize,
    pub strategy: EditMode,
    pub erasure_residual: f64,
    /// Relative change of the preserved outputs caused by this edit alone.
    pub preservation_drift: f64,
    /// Running sum of `preservation_drift`.
    pub cumulative_drift: f64,
    /// Relative change of the preserved outputs against the original weights.
    pub drift_from_original: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: EditMode,
    pub edits: usize,
    pub failed: usize,
    pub final_cumulative_drift: f64,
    pub final_drift_from_original: f64,
    pub max_step_drift: f64,
    pub mean_erasure_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub config: ScenarioConfig,
    pub per_edit: Vec<DriftRow>,
    pub summary: Vec<StrategySummary>,
}

impl DriftReport {
    pub fn rows_for(&self, strategy: EditMode) -> impl Iterator<Item = &DriftRow> {
        self.per_edit.iter().filter(move |r| r.strategy == strategy)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.per_edit {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| EditError::io("csv", e))
    }
}

fn csv_err(e: csv::Error) -> EditError {
    EditError::io("csv", std::io::Error::other(e.to_string()))
}

struct ScenarioData {
    preserve: EmbeddingSet,
    w_k: WeightMatrix,
    w_v: WeightMatrix,
    edits: Vec<(EmbeddingSet, EmbeddingSet)>,
}

impl ScenarioData {
    fn generate(cfg: &ScenarioConfig) -> Result<Self> {
        let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut next = || seeds.random::<u64>();
        let preserve = EmbeddingSet::new(
            generate_concepts(next(), cfg.d_in, cfg.preserve_size).into_data(),
            "preserve",
        )?;
        let w_k = random_weight(next(), cfg.d_out, cfg.d_in, WeightKind::Key);
        let w_v = random_weight(next(), cfg.d_out, cfg.d_in, WeightKind::Value);
        let mut edits = Vec::with_capacity(cfg.n_edits);
        for _ in 0..cfg.n_edits {
            let erase = match cfg.conflict_angle_deg {
                Some(angle) => conflict_concepts(next(), &preserve, cfg.erase_per_edit, angle)?,
                None => generate_concepts(next(), cfg.d_in, cfg.erase_per_edit),
            };
            let targets = generate_concepts(next(), cfg.d_in, cfg.erase_per_edit);
            edits.push((erase, targets));
        }
        Ok(Self {
            preserve,
            w_k,
            w_v,
            edits,
        })
    }
}

/// Runs every strategy over the same stream of edits, each on its own
/// evolving copy of the weights, and records drift of the preserved outputs.
/// Solver failures become rows with an error message; the run continues.
pub fn run_sequential_scenario(cfg: &ScenarioConfig) -> Result<DriftReport> {
    cfg.validate()?;
    let data = ScenarioData::generate(cfg)?;
    let per_strategy: Vec<Vec<DriftRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .strategies
            .iter()
            .map(|&mode| {
                let data = &data;
                s.spawn(move || run_strategy(cfg, data, mode))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("strategy thread panicked"))
            .collect()
    });

    let mut per_edit = Vec::with_capacity(cfg.n_edits * cfg.strategies.len());
    for i in 0..cfg.n_edits {
        for rows in &per_strategy {
            per_edit.push(rows[i].clone());
        }
    }
    let summary = cfg
        .strategies
        .iter()
        .zip(&per_strategy)
        .map(|(&strategy, rows)| summarize(strategy, rows))
        .collect();
    Ok(DriftReport {
        config: cfg.clone(),
        per_edit,
        summary,
    })
}

fn summarize(strategy: EditMode, rows: &[DriftRow]) -> StrategySummary {
    let ok: Vec<&DriftRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let last = rows.last();
    StrategySummary {
        strategy,
        edits: rows.len(),
        failed: rows.len() - ok.len(),
        final_cumulative_drift: last.map_or(0.0, |r| r.cumulative_drift),
        final_drift_from_original: last.map_or(0.0, |r| r.drift_from_original),
        max_step_drift: ok.iter().map(|r| r.preservation_drift).fold(0.0, f64::max),
        mean_erasure_residual: if ok.is_empty() {
            0.0
        } else {
            ok.iter().map(|r| r.erasure_residual).sum::<f64>() / ok.len() as f64
        },
    }
}

enum StrategyState {
    Uce,
    Ace(AceProjectors),
    Sequential {
        projector: NullSpaceProjector,
        ledger_k: KnowledgeLedger,
        ledger_v: KnowledgeLedger,
    },
}

fn run_strategy(cfg: &ScenarioConfig, data: &ScenarioData, mode: EditMode) -> Vec<DriftRow> {
    let t0 = data.preserve.data();
    let (orig_k, orig_v) = (data.w_k.data() * t0, data.w_v.data() * t0);
    let base = (orig_k.norm_squared() + orig_v.norm_squared()).sqrt();
    let (mut w_k, mut w_v) = (data.w_k.clone(), data.w_v.clone());

    let mut state = match mode {
        EditMode::UceBaseline => Ok(StrategyState::Uce),
        EditMode::Ace => AceProjectors::build(&w_k, &w_v, &data.preserve, cfg.tol, None).map(StrategyState::Ace),
        EditMode::Sequential => projector_from_gram(&data.preserve.gram(), cfg.tol, None).map(|projector| {
            StrategyState::Sequential {
                projector,
                ledger_k: KnowledgeLedger::new(cfg.d_in, cfg.d_out),
                ledger_v: KnowledgeLedger::new(cfg.d_in, cfg.d_out),
            }
        }),
    };

    let mut cumulative = 0.0;
    let mut rows = Vec::with_capacity(data.edits.len());
    for (i, (erase, targets)) in data.edits.iter().enumerate() {
        let step = match &mut state {
            Ok(st) => edit_step(cfg, st, mode, &w_k, &w_v, erase, targets, &data.preserve),
            Err(e) => Err(EditError::InvalidArgument(format!("setup failed: {e}"))),
        };
        let row = match step {
            Ok((delta_k, delta_v, residual)) => {
                let moved = ((&delta_k * t0).norm_squared() + (&delta_v * t0).norm_squared()).sqrt();
                let current = ((w_k.data() * t0).norm_squared() + (w_v.data() * t0).norm_squared()).sqrt();
                let step_drift = relative_change(moved, current);
                w_k = apply_edit(&w_k, &delta_k).expect("delta conforms to weight");
                w_v = apply_edit(&w_v, &delta_v).expect("delta conforms to weight");
                cumulative += step_drift;
                let from_orig = ((w_k.data() * t0 - &orig_k).norm_squared()
                    + (w_v.data() * t0 - &orig_v).norm_squared())
                .sqrt();
                DriftRow {
                    edit_index: i,
                    strategy: mode,
                    erasure_residual: residual,
                    preservation_drift: step_drift,
                    cumulative_drift: cumulative,
                    drift_from_original: relative_change(from_orig, base),
                    error: None,
                }
            }
            Err(e) => DriftRow {
                edit_index: i,
                strategy: mode,
                erasure_residual: f64::NAN,
                preservation_drift: f64::NAN,
                cumulative_drift: cumulative,
                drift_from_original: rows.last().map_or(0.0, |r: &DriftRow| r.drift_from_original),
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    rows
}

#[allow(clippy::too_many_arguments)]
fn edit_step(
    cfg: &ScenarioConfig,
    state: &mut StrategyState,
    mode: EditMode,
    w_k: &WeightMatrix,
    w_v: &WeightMatrix,
    erase: &EmbeddingSet,
    targets: &EmbeddingSet,
    preserve: &EmbeddingSet,
) -> Result<(Matrix, Matrix, f64)> {
    let req = EditRequest::new(mode, erase.clone(), targets.clone(), preserve.clone())?
        .with_ridge(cfg.ridge)
        .with_tol(cfg.tol);
    let take = |res: &EditResult, kind: WeightKind| res.delta(kind).cloned().expect("solver fills delta");
    match state {
        StrategyState::Uce => {
            let rk = crate::edit_solvers::uce_edit(w_k, &req)?;
            let rv = crate::edit_solvers::uce_edit(w_v, &req)?;
            let residual = rk.erasure_residual.hypot(rv.erasure_residual);
            Ok((take(&rk, WeightKind::Key), take(&rv, WeightKind::Value), residual))
        }
        StrategyState::Ace(projectors) => {
            let res = ace_edit_with(w_k, w_v, &req, projectors)?;
            Ok((take(&res, WeightKind::Key), take(&res, WeightKind::Value), res.erasure_residual))
        }
        StrategyState::Sequential {
            projector,
            ledger_k,
            ledger_v,
        } => {
            let rk = sequential_edit_with(w_k, &req, ledger_k, projector)?;
            let rv = sequential_edit_with(w_v, &req, ledger_v, projector)?;
            let (dk, dv) = (take(&rk, WeightKind::Key), take(&rv, WeightKind::Value));
            let written_k = EmbeddingSet::new((w_k.data() + &dk) * erase.data(), "ledger")?;
            let written_v = EmbeddingSet::new((w_v.data() + &dv) * erase.data(), "ledger")?;
            *ledger_k = ledger_k.absorb(erase, &written_k)?;
            *ledger_v = ledger_v.absorb(erase, &written_v)?;
            Ok((dk, dv, rk.erasure_residual.hypot(rv.erasure_residual)))
        }
    }
}

// ── Timing benchmark ────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub retain_size: usize,
    pub strategy: String,
    pub projector_build_time_s: f64,
    pub per_edit_time_s: f64,
}

/// A published editing duration, carried as an annotation only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDuration {
    pub model: String,
    pub method: String,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub dim: usize,
    pub repeats: usize,
    pub erase_per_edit: usize,
    pub rows: Vec<TimingRow>,
    pub reference: Vec<ReferenceDuration>,
}

pub const UCE_UNCACHED: &str = "uce_uncached";
pub const UCE_CACHED: &str = "uce_cached";
pub const ACE: &str = "ace";

/// Reported editing durations on an A100 (averaged over 1000 edits).
pub fn reference_durations() -> Vec<ReferenceDuration> {
    [
        ("SD v1.4", "UCE", 6450.3),
        ("SD v1.4", "RECE", 17390.6),
        ("SD v1.4", "Ours", 82.1),
        ("SD v2.1", "UCE", 12191.1),
        ("SD v2.1", "RECE", 32868.2),
        ("SD v2.1", "Ours", 155.4),
    ]
    .into_iter()
    .map(|(model, method, duration)| ReferenceDuration {
        model: model.into(),
        method: method.into(),
        duration,
    })
    .collect()
}

#[derive(Serialize)]
struct TimingCsvRow<'a> {
    kind: &'static str,
    model: &'a str,
    retain_size: Option<usize>,
    strategy: &'a str,
    projector_build_time_s: Option<f64>,
    per_edit_time_s: Option<f64>,
    reported_duration: Option<f64>,
}

impl TimingReport {
    pub fn row(&self, retain_size: usize, strategy: &str) -> Option<&TimingRow> {
        self.rows
            .iter()
            .find(|r| r.retain_size == retain_size && r.strategy == strategy)
    }

    /// Published UCE / ours ratio for `model`.
    pub fn reference_ratio(&self, model: &str) -> Option<f64> {
        let get = |method: &str| {
            self.reference
                .iter()
                .find(|r| r.model == model && r.method == method)
                .map(|r| r.duration)
        };
        Some(get("UCE")? / get("Ours")?)
    }

    /// Measured rows followed by `reference` annotation rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(TimingCsvRow {
                kind: "measured",
                model: "",
                retain_size: Some(r.retain_size),
                strategy: &r.strategy,
                projector_build_time_s: Some(r.projector_build_time_s),
                per_edit_time_s: Some(r.per_edit_time_s),
                reported_duration: None,
            })
            .map_err(csv_err)?;
        }
        for r in &self.reference {
            w.serialize(TimingCsvRow {
                kind: "reference",
                model: &r.model,
                retain_size: None,
                strategy: &r.method,
                projector_build_time_s: None,
                per_edit_time_s: None,
                reported_duration: Some(r.duration),
            })
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| EditError::io("csv", e))
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = xs.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

const BENCH_ERASE: usize = 4;
const BENCH_ACE_BATCH: usize = 5;
const BENCH_RIDGE: f64 = 1.0;

/// Times UCE (uncached and cached retain Gram) against ACE (one-time
/// projector build plus per-edit solve) for each retain-set size.
///
/// Retain sets have intrinsic rank `d/2`, so the preserved null space has
/// the same dimension at every size. Everything runs on the calling thread.
pub fn run_timing_benchmark(retain_sizes: &[usize], d: usize, repeats: usize) -> Result<TimingReport> {
    if retain_sizes.is_empty() {
        return Err(EditError::InvalidArgument("no retain sizes given".into()));
    }
    if d < 2 || repeats == 0 {
        return Err(EditError::InvalidArgument("need d >= 2 and repeats >= 1".into()));
    }
    let rank = d / 2;
    let mut rows = Vec::new();
    for &size in retain_sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed ^ size as u64);
        let basis = normal_matrix(&mut rng, d, rank);
        let retain = EmbeddingSet::new(&basis * normal_matrix(&mut rng, rank, size), "preserve")?;
        let w_k = random_weight(rng.random(), d, d, WeightKind::Key);
        let w_v = random_weight(rng.random(), d, d, WeightKind::Value);
        let retain_gram = retain.gram();

        let mut uncached = Vec::with_capacity(repeats);
        let mut cached = Vec::with_capacity(repeats);
        let mut builds = Vec::with_capacity(repeats);
        let mut ace = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let erase = EmbeddingSet::new(normal_matrix(&mut rng, d, BENCH_ERASE), "erase")?;
            let targets = EmbeddingSet::new(normal_matrix(&mut rng, d, BENCH_ERASE), "target")?;

            let t = Instant::now();
            uce_delta(&w_k, &erase, &targets, &retain, BENCH_RIDGE)?;
            uce_delta(&w_v, &erase, &targets, &retain, BENCH_RIDGE)?;
            uncached.push(t.elapsed().as_secs_f64());

            let t = Instant::now();
            uce_delta_with_gram(&w_k, &erase, &targets, &retain_gram, BENCH_RIDGE)?;
            uce_delta_with_gram(&w_v, &erase, &targets, &retain_gram, BENCH_RIDGE)?;
            cached.push(t.elapsed().as_secs_f64());

            let t = Instant::now();
            let projectors = AceProjectors::from_preserve_gram(&w_k, &w_v, &gram(retain.data()), crate::linalg::DEFAULT_TOL, None)?;
            builds.push(t.elapsed().as_secs_f64());

            let t = Instant::now();
            for _ in 0..BENCH_ACE_BATCH {
                ace_deltas(&w_k, &w_v, &erase, &targets, &projectors, BENCH_RIDGE)?;
            }
            ace.push(t.elapsed().as_secs_f64() / BENCH_ACE_BATCH as f64);
        }
        rows.push(TimingRow {
            retain_size: size,
            strategy: UCE_UNCACHED.into(),
            projector_build_time_s: 0.0,
            per_edit_time_s: median(uncached),
        });
        rows.push(TimingRow {
            retain_size: size,
            strategy: UCE_CACHED.into(),
            projector_build_time_s: 0.0,
            per_edit_time_s: median(cached),
        });
        rows.push(TimingRow {
            retain_size: size,
            strategy: ACE.into(),
            projector_build_time_s: median(builds),
            per_edit_time_s: median(ace),
        });
    }
    Ok(TimingReport {
        dim: d,
        repeats,
        erase_per_edit: BENCH_ERASE,
        rows,
        reference: reference_durations(),
    })
}
