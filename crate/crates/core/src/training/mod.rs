//! Temporal batching, gradients, optimisation and the training schedule.
//!
//! Each epoch starts from all-zero embeddings and streams the temporal
//! batches in order, taking one Adam step per batch. Joint training is
//! preceded by a short pretraining phase per interaction module.

pub mod adam;
pub mod batching;
pub mod checkpoint;
pub mod grad;
pub mod gradcheck;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use batching::{t_batches, TemporalBatch};
pub use checkpoint::Checkpoint;
pub use grad::{batch_gradients, batch_loss, finite_diff_gradients, forward_batch, BatchEnv};

use std::path::Path;

use crate::data::io::write_lines;
use crate::data::{Dataset, InteractionKind, InteractionLog, PatientFeatures};
use crate::dynamics::{DeltaScale, DimsConfig, EmbeddingState, ParamGroup, ParameterSet, DEFAULT_DYNAMIC_DIM};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::loss::{LossBreakdown, LossWeights};
use crate::static_embed::{DomainGraphs, Laplacians, StaticMode, StaticSpec, StaticTables};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub patience: usize,
    pub pretrain_epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub d_dyn: usize,
    pub static_spec: StaticSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            max_epochs: 1000,
            patience: 10,
            pretrain_epochs: 5,
            seed: 0,
            weights: LossWeights::default(),
            d_dyn: DEFAULT_DYNAMIC_DIM,
            static_spec: StaticSpec {
                mode: StaticMode::OneHot,
                copies: None,
                seed: 0,
            },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.weights.validate()?;
        if self.patience == 0 {
            return Err(Error::Invalid("patience must be at least 1".into()));
        }
        if self.d_dyn == 0 {
            return Err(Error::Invalid("dynamic dimension must be at least 1".into()));
        }
        if self.static_spec.copies == Some(0) {
            return Err(Error::Invalid("bourgain copies must be at least 1".into()));
        }
        Ok(())
    }
}

/// A dataset turned into model inputs: static tables, Laplacians, Δ scale
/// and temporal batches.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dims: DimsConfig,
    pub log: InteractionLog,
    pub features: PatientFeatures,
    pub tables: StaticTables,
    pub laplacians: Laplacians,
    pub scale: DeltaScale,
    pub static_spec: StaticSpec,
    pub batches: Vec<TemporalBatch>,
}

impl Prepared {
    pub fn new(ds: &Dataset, d_dyn: usize, static_spec: StaticSpec, exec: &Exec) -> Result<Self> {
        let graphs = DomainGraphs::from_dataset(ds)?;
        let tables = StaticTables::build(&graphs, static_spec, exec)?;
        let dims = DimsConfig::new(d_dyn, &ds.features, &tables, ds.populations)?;
        let scale = DeltaScale::from_log(&ds.log, &ds.populations);
        log::info!(
            "prepared {} events, d_dyn {d_dyn}, static {} {:?}, delta scale {:.1}s",
            ds.log.len(),
            static_spec.mode.as_str(),
            dims.d_static,
            scale.0
        );
        Ok(Prepared {
            dims,
            batches: t_batches(&ds.log),
            log: ds.log.clone(),
            features: ds.features.clone(),
            tables,
            laplacians: graphs.laplacians(),
            scale,
            static_spec,
        })
    }

    pub fn env<'a>(&'a self, weights: LossWeights, exec: &'a Exec) -> BatchEnv<'a> {
        BatchEnv {
            dims: &self.dims,
            tables: &self.tables,
            features: &self.features,
            laplacians: &self.laplacians,
            scale: self.scale,
            weights,
            exec,
        }
    }

    pub fn zero_state(&self) -> EmbeddingState {
        EmbeddingState::zeros(self.dims.d_dyn, &self.dims.populations)
    }
}

/// Loss of one epoch (weighted contributions summed over its batches).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub batches: usize,
    pub loss: LossBreakdown,
}

impl EpochLoss {
    pub fn total(&self) -> f64 {
        self.loss.total()
    }
}

pub const HISTORY_HEADER: &str = "epoch,batch,reconst,temp,dom,total";

pub fn history_lines(history: &[EpochLoss]) -> impl Iterator<Item = String> + '_ {
    history.iter().map(|h| {
        format!(
            "{},{},{},{},{},{}",
            h.epoch,
            h.batches,
            h.loss.reconst,
            h.loss.temp,
            h.loss.dom,
            h.total()
        )
    })
}

pub fn write_history(path: impl AsRef<Path>, history: &[EpochLoss]) -> Result<()> {
    write_lines(
        path.as_ref(),
        std::iter::once(HISTORY_HEADER.to_string()).chain(history_lines(history)),
    )
}

/// Where joint training stands; everything needed to resume bitwise.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainProgress {
    pub params: ParameterSet,
    pub optimizer: OptimizerState,
    /// Completed epochs.
    pub epoch: usize,
    pub best_loss: f64,
    pub stale_epochs: usize,
}

impl TrainProgress {
    pub fn start(dims: &DimsConfig, params: ParameterSet) -> Self {
        TrainProgress {
            optimizer: OptimizerState::new(dims),
            params,
            epoch: 0,
            best_loss: f64::INFINITY,
            stale_epochs: 0,
        }
    }

    pub fn checkpoint(&self, prep: &Prepared) -> Checkpoint {
        Checkpoint {
            dims: prep.dims,
            static_spec: prep.static_spec,
            scale: prep.scale,
            epoch: self.epoch,
            best_loss: self.best_loss,
            stale_epochs: self.stale_epochs,
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    /// Fails when the checkpoint was written for different data or static
    /// settings.
    pub fn from_checkpoint(ck: Checkpoint, prep: &Prepared) -> Result<Self> {
        if ck.dims != prep.dims {
            return Err(Error::Checkpoint(format!(
                "checkpoint dimensions {:?} do not match the dataset {:?}",
                ck.dims, prep.dims
            )));
        }
        if ck.static_spec != prep.static_spec {
            return Err(Error::Checkpoint(format!(
                "checkpoint static settings {:?} differ from {:?}",
                ck.static_spec, prep.static_spec
            )));
        }
        Ok(TrainProgress {
            params: ck.params,
            optimizer: ck.optimizer,
            epoch: ck.epoch,
            best_loss: ck.best_loss,
            stale_epochs: ck.stale_epochs,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub progress: TrainProgress,
    pub final_state: EmbeddingState,
    /// Epochs run by this call.
    pub history: Vec<EpochLoss>,
    pub stopped_early: bool,
}

/// Pretraining history of one module.
#[derive(Debug, Clone)]
pub struct PretrainRecord {
    pub kind: InteractionKind,
    pub history: Vec<EpochLoss>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub pretrain: Vec<PretrainRecord>,
    pub train: TrainOutcome,
}

fn locate(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Divergence { detail, .. } => Error::Divergence { epoch, batch, detail },
        other => other,
    }
}

/// Runs the schedule on a prepared dataset.
#[derive(Debug, Clone, Copy)]
pub struct Trainer<'a> {
    pub prep: &'a Prepared,
    pub cfg: &'a TrainConfig,
    pub exec: &'a Exec,
}

impl<'a> Trainer<'a> {
    pub fn new(prep: &'a Prepared, cfg: &'a TrainConfig, exec: &'a Exec) -> Result<Self> {
        cfg.validate()?;
        if cfg.d_dyn != prep.dims.d_dyn {
            return Err(Error::Invalid(format!(
                "config d_dyn {} but data prepared for {}",
                cfg.d_dyn, prep.dims.d_dyn
            )));
        }
        Ok(Trainer { prep, cfg, exec })
    }

    pub fn init_params(&self) -> ParameterSet {
        ParameterSet::init(&self.prep.dims, self.cfg.seed)
    }

    /// One epoch from zero state with an optimizer step per batch.
    #[allow(clippy::too_many_arguments)]
    fn run_epoch(
        &self,
        epoch: usize,
        batches: &[TemporalBatch],
        weights: LossWeights,
        params: &mut ParameterSet,
        opt: &mut OptimizerState,
        trainable: &dyn Fn(ParamGroup) -> bool,
    ) -> Result<(EpochLoss, EmbeddingState)> {
        let env = self.prep.env(weights, self.exec);
        let mut state = self.prep.zero_state();
        let mut sum = LossBreakdown::default();
        for b in batches {
            let (grads, loss) =
                batch_gradients(&env, &mut state, &b.events, params).map_err(|e| locate(e, epoch, b.index))?;
            adam_step(&self.cfg.adam, params, &grads, opt, trainable).map_err(|e| locate(e, epoch, b.index))?;
            sum += loss;
        }
        Ok((
            EpochLoss {
                epoch,
                batches: batches.len(),
                loss: sum,
            },
            state,
        ))
    }

    /// Forward-only pass over `batches` with fixed parameters.
    pub fn evaluate(
        &self,
        batches: &[TemporalBatch],
        weights: LossWeights,
        params: &ParameterSet,
    ) -> Result<(LossBreakdown, EmbeddingState)> {
        let env = self.prep.env(weights, self.exec);
        let mut state = self.prep.zero_state();
        let mut sum = LossBreakdown::default();
        for b in batches {
            let (_, loss) = forward_batch(&env, &mut state, &b.events, params).map_err(|e| locate(e, 0, b.index))?;
            sum += loss;
        }
        Ok((sum, state))
    }

    /// Loss weights for pretraining one module: the domain term only for
    /// its counterpart kind.
    pub fn pretrain_weights(&self, kind: InteractionKind) -> LossWeights {
        let mut w = self.cfg.weights;
        let keep = w.dom[kind.slot()];
        w.dom = [0.0; 3];
        w.dom[kind.slot()] = keep;
        w
    }

    pub fn pretrain_batches(&self, kind: InteractionKind) -> Result<Vec<TemporalBatch>> {
        let log = self.prep.log.filter_kind(kind);
        if log.is_empty() {
            return Err(Error::Invalid(format!("no {} interactions to pretrain on", kind.code())));
        }
        Ok(t_batches(&log))
    }

    /// Trains only `kind`'s networks and decoder (plus the shared projection)
    /// on that kind's interactions, with a fresh optimizer.
    pub fn pretrain(&self, kind: InteractionKind, params: &mut ParameterSet) -> Result<Vec<EpochLoss>> {
        let batches = self.pretrain_batches(kind)?;
        let weights = self.pretrain_weights(kind);
        let mut opt = OptimizerState::new(&self.prep.dims);
        let trainable = move |g: ParamGroup| match g {
            ParamGroup::Projection => true,
            ParamGroup::PatientNet(k) | ParamGroup::CounterpartNet(k) | ParamGroup::Decoder(k) => k == kind,
        };
        let mut history = Vec::with_capacity(self.cfg.pretrain_epochs);
        for epoch in 1..=self.cfg.pretrain_epochs {
            let (loss, _) = self.run_epoch(epoch, &batches, weights, params, &mut opt, &trainable)?;
            log::info!("pretrain {} epoch {epoch}: loss {:.6e}", kind.code(), loss.total());
            history.push(loss);
        }
        Ok(history)
    }

    /// Joint training from `progress` until `max_epochs` or early stop.
    /// `on_epoch` sees the progress after each epoch (for checkpointing).
    pub fn train(
        &self,
        mut progress: TrainProgress,
        mut on_epoch: impl FnMut(&TrainProgress, &EpochLoss) -> Result<()>,
    ) -> Result<TrainOutcome> {
        let all = |_: ParamGroup| true;
        let mut history = Vec::new();
        let mut final_state = None;
        let mut stopped_early = progress.stale_epochs >= self.cfg.patience;
        while !stopped_early && progress.epoch < self.cfg.max_epochs {
            let epoch = progress.epoch + 1;
            let (loss, state) = self.run_epoch(
                epoch,
                &self.prep.batches,
                self.cfg.weights,
                &mut progress.params,
                &mut progress.optimizer,
                &all,
            )?;
            progress.epoch = epoch;
            if loss.total() < progress.best_loss {
                progress.best_loss = loss.total();
                progress.stale_epochs = 0;
            } else {
                progress.stale_epochs += 1;
            }
            log::info!(
                "epoch {epoch}: loss {:.6e} (reconst {:.4e}, temp {:.4e}, dom {:.4e})",
                loss.total(),
                loss.loss.reconst,
                loss.loss.temp,
                loss.loss.dom
            );
            on_epoch(&progress, &loss)?;
            history.push(loss);
            final_state = Some(state);
            if progress.stale_epochs >= self.cfg.patience {
                log::info!("early stop after epoch {epoch}: no improvement for {} epochs", progress.stale_epochs);
                stopped_early = true;
            }
        }
        let final_state = match final_state {
            Some(s) => s,
            None => self.evaluate(&self.prep.batches, self.cfg.weights, &progress.params)?.1,
        };
        Ok(TrainOutcome {
            progress,
            final_state,
            history,
            stopped_early,
        })
    }

    /// Initialise, pretrain every module that has interactions, then train
    /// jointly.
    pub fn fit(&self, on_epoch: impl FnMut(&TrainProgress, &EpochLoss) -> Result<()>) -> Result<FitOutcome> {
        let mut params = self.init_params();
        let counts = self.prep.log.counts();
        let mut pretrain = Vec::new();
        for kind in InteractionKind::ALL {
            if self.cfg.pretrain_epochs == 0 {
                break;
            }
            if counts[kind.slot()] == 0 {
                log::warn!("no {} interactions; skipping its pretraining", kind.code());
                continue;
            }
            let history = self.pretrain(kind, &mut params)?;
            pretrain.push(PretrainRecord { kind, history });
        }
        let progress = TrainProgress::start(&self.prep.dims, params);
        let train = self.train(progress, on_epoch)?;
        Ok(FitOutcome { pretrain, train })
    }
}

pub const PRETRAIN_HISTORY_HEADER: &str = "phase,epoch,batch,reconst,temp,dom,total";

pub fn write_pretrain_history(path: impl AsRef<Path>, records: &[PretrainRecord]) -> Result<()> {
    let lines = records.iter().flat_map(|r| {
        history_lines(&r.history).map(move |l| format!("{},{l}", r.kind.code()))
    });
    write_lines(
        path.as_ref(),
        std::iter::once(PRETRAIN_HISTORY_HEADER.to_string()).chain(lines),
    )
}
