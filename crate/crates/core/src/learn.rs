//! Learning loops with fixed dictionary size: plain ITKrM and ITKrM with
//! replacement of coherent and unused atoms.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::candidates::{replace_coherent, replace_unused, CandidateSet, ReplacementPolicy};
use crate::dictionary::Dictionary;
use crate::engine::{run_iteration, EngineConfig, IterationOutput, Variant};
use crate::error::{check_dim, invalid, Result};
use crate::metrics::{asym_distance, mean_atom_distance, recovery_rate, RECOVERY_THRESHOLD};
use crate::rng::{derive_seed, stream_rng};
use crate::signal::{generate_batch, SignalBatch, SignalModel};

/// Supplies the training batch of every iteration.
pub trait SignalSource {
    fn dim(&self) -> usize;
    /// Batch for iteration `iteration` (1-based).
    fn batch(&mut self, iteration: usize) -> Result<Arc<SignalBatch>>;
}

/// Fresh synthetic signals every iteration.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub model: SignalModel,
    pub signals_per_iteration: usize,
}

impl SyntheticSource {
    pub fn new(model: SignalModel, signals_per_iteration: usize) -> Result<Self> {
        model.validate()?;
        if signals_per_iteration == 0 {
            return Err(invalid("signals_per_iteration", "must be positive"));
        }
        Ok(Self {
            model,
            signals_per_iteration,
        })
    }
}

impl SignalSource for SyntheticSource {
    fn dim(&self) -> usize {
        self.model.dictionary.dim()
    }

    fn batch(&mut self, iteration: usize) -> Result<Arc<SignalBatch>> {
        Ok(Arc::new(generate_batch(
            &self.model,
            self.signals_per_iteration,
            iteration as u64,
        )?))
    }
}

/// The same corpus in every iteration.
#[derive(Debug, Clone)]
pub struct FixedSource {
    batch: Arc<SignalBatch>,
}

impl FixedSource {
    pub fn new(batch: SignalBatch) -> Result<Self> {
        if batch.is_empty() {
            return Err(invalid("batch", "corpus is empty"));
        }
        Ok(Self { batch: Arc::new(batch) })
    }
}

impl SignalSource for FixedSource {
    fn dim(&self) -> usize {
        self.batch.dim()
    }

    fn batch(&mut self, _iteration: usize) -> Result<Arc<SignalBatch>> {
        Ok(Arc::clone(&self.batch))
    }
}

/// What to do with coherent and unused atoms after each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Replacement {
    None,
    /// Candidates learned from residuals.
    Candidates(ReplacementPolicy),
    /// Uniformly random unit vectors in place of learned candidates.
    Random(ReplacementPolicy),
}

/// One row of the trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub iter: usize,
    pub distance: Option<f64>,
    pub mean_atom_distance: Option<f64>,
    pub recovery_rate: Option<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "S_e")]
    pub s_e: usize,
    #[serde(rename = "S_bar")]
    pub s_bar: Option<usize>,
    pub replaced: usize,
    pub pruned: usize,
    pub added: usize,
    pub wallclock_ms: f64,
}

/// Distance, mean atom distance and recovery rate of `estimate`.
pub fn reference_metrics(reference: Option<&Dictionary>, estimate: &Dictionary) -> Result<[Option<f64>; 3]> {
    let Some(r) = reference else {
        return Ok([None; 3]);
    };
    Ok([
        Some(asym_distance(r, estimate)?.0),
        Some(mean_atom_distance(r, estimate)?),
        Some(recovery_rate(r, estimate, RECOVERY_THRESHOLD)?),
    ])
}

/// Writes serialisable rows as CSV with a header line.
pub fn write_csv<T: Serialize, W: Write>(w: W, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_csv_file<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    write_csv(std::fs::File::create(path)?, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    /// Engine settings; the variant follows from `replacement`.
    pub engine: EngineConfig,
    pub replacement: Replacement,
    pub seed: u64,
}

impl LearnConfig {
    pub fn plain(sparsity: usize, seed: u64) -> Self {
        Self {
            engine: EngineConfig::plain(sparsity),
            replacement: Replacement::None,
            seed,
        }
    }

    pub fn with_candidates(sparsity: usize, d: usize, policy: ReplacementPolicy, seed: u64) -> Self {
        Self {
            engine: EngineConfig::replacement(sparsity, d),
            replacement: Replacement::Candidates(policy),
            seed,
        }
    }

    pub fn with_random_replacement(sparsity: usize, d: usize, policy: ReplacementPolicy, seed: u64) -> Self {
        Self {
            engine: EngineConfig::replacement(sparsity, d),
            replacement: Replacement::Random(policy),
            seed,
        }
    }
}

const CANDIDATE_TAG: u64 = 0xCA4D;

/// ITKrM with a fixed number of atoms.
#[derive(Debug, Clone)]
pub struct Learner {
    pub dictionary: Dictionary,
    pub config: LearnConfig,
    pub reference: Option<Dictionary>,
    pub iteration: usize,
    /// Output of the last engine call.
    pub last: Option<IterationOutput>,
}

impl Learner {
    pub fn new(init: Dictionary, config: LearnConfig, reference: Option<Dictionary>) -> Result<Self> {
        config.engine.validate(init.dim(), init.len())?;
        if let Some(r) = &reference {
            check_dim(init.dim(), r.dim())?;
        }
        Ok(Self {
            dictionary: init,
            config,
            reference,
            iteration: 0,
            last: None,
        })
    }

    /// Runs one iteration on the next batch of `source`.
    pub fn step(&mut self, source: &mut dyn SignalSource) -> Result<TrajectoryRow> {
        let start = Instant::now();
        self.iteration += 1;
        let t = self.iteration;
        let batch = source.batch(t)?;
        let d = self.dictionary.dim();
        let mut rng = stream_rng(derive_seed(self.config.seed, CANDIDATE_TAG), t as u64);

        let mut engine = self.config.engine.clone();
        engine.variant = match self.config.replacement {
            Replacement::None => Variant::Plain,
            _ => Variant::Replacement,
        };
        let candidates = match self.config.replacement {
            Replacement::Candidates(_) if engine.candidate_count > 0 => {
                Some(CandidateSet::random(d, engine.candidate_count, &mut rng))
            }
            _ => None,
        };
        let out = run_iteration(&self.dictionary, &batch, &engine, candidates, &mut rng)?;
        let mut dico = out.dictionary.clone();
        let mut scores = out.scores.clone();

        let replaced = match self.config.replacement {
            Replacement::None => 0,
            Replacement::Candidates(policy) => match out.candidates.clone() {
                Some(mut c) => {
                    let a = replace_coherent(&mut dico, &mut scores, &mut c, &policy)?;
                    let b = replace_unused(&mut dico, &mut scores, &out.dead, &mut c, &policy)?;
                    a.len() + b.len()
                }
                None => 0,
            },
            Replacement::Random(policy) => {
                let mut c = CandidateSet::random(d, engine.candidate_count, &mut rng);
                let a = replace_coherent(&mut dico, &mut scores, &mut c, &policy)?;
                let b = replace_unused(&mut dico, &mut scores, &out.dead, &mut c, &policy)?;
                a.len() + b.len()
            }
        };
        self.dictionary = dico;
        self.last = Some(out);

        let [distance, mean_dist, recovery] = reference_metrics(self.reference.as_ref(), &self.dictionary)?;
        Ok(TrajectoryRow {
            iter: t,
            distance,
            mean_atom_distance: mean_dist,
            recovery_rate: recovery,
            k: self.dictionary.len(),
            s_e: self.config.engine.sparsity,
            s_bar: None,
            replaced,
            pruned: 0,
            added: 0,
            wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Result of a learning run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub dictionary: Dictionary,
    /// Dictionary after every iteration, when requested.
    pub snapshots: Vec<Dictionary>,
}

/// Runs `iterations` iterations from `init`.
pub fn run_learning(
    init: Dictionary,
    source: &mut dyn SignalSource,
    config: &LearnConfig,
    iterations: usize,
    reference: Option<&Dictionary>,
    keep_snapshots: bool,
) -> Result<Trajectory> {
    check_dim(init.dim(), source.dim())?;
    let mut learner = Learner::new(init, config.clone(), reference.cloned())?;
    let mut rows = Vec::with_capacity(iterations);
    let mut snapshots = Vec::new();
    for _ in 0..iterations {
        rows.push(learner.step(source)?);
        if keep_snapshots {
            snapshots.push(learner.dictionary.clone());
        }
    }
    Ok(Trajectory {
        rows,
        dictionary: learner.dictionary,
        snapshots,
    })
}
