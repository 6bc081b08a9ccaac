use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use super::config::{lr_at_epoch, TrainConfig};
use super::loss::{combined_branch_loss, smoothed_targets};
use super::optimizer::{sgd_step_network, OptimizerState, SgdHyper};
use crate::augmentation::{
    augment_pipeline, channel_means, epoch_shuffle, fit_pca_basis, AugmentConfig, PcaBasis, SampleKey,
};
use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::EvalReport;
use crate::model::{BranchedNetConfig, BranchedNetwork};
use crate::tensor_core::{Mode, Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Zero-based epoch index.
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean training loss of each branch.
    pub branch_losses: Vec<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// `(epochs completed, report)` for each evaluation run.
    pub evaluations: Vec<(usize, EvalReport)>,
}

impl TrainHistory {
    pub fn extend(&mut self, other: TrainHistory) {
        self.epochs.extend(other.epochs);
        self.evaluations.extend(other.evaluations);
    }

    /// `epoch,lr,loss_branch_1..K`. Wall time is left out so equal runs give equal bytes.
    pub fn to_csv(&self) -> String {
        let branches = self.epochs.first().map_or(0, |r| r.branch_losses.len());
        let mut s = String::from("epoch,lr");
        for k in 1..=branches {
            let _ = write!(s, ",loss_branch_{k}");
        }
        s.push('\n');
        for r in &self.epochs {
            let _ = write!(s, "{},{}", r.epoch, r.lr);
            for l in &r.branch_losses {
                let _ = write!(s, ",{l}");
            }
            s.push('\n');
        }
        s
    }

    /// `epoch,wall_seconds`.
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,wall_seconds\n");
        for r in &self.epochs {
            let _ = writeln!(s, "{},{:.3}", r.epoch, r.wall_seconds);
        }
        s
    }
}

/// Execution switches that never change results.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Spread convolution work over the rayon pool.
    pub parallel_kernels: bool,
}

/// Everything needed to continue training: weights, optimizer state, the
/// resolved augmentation settings and the number of finished epochs.
///
/// All randomness is keyed by `(seed, epoch, sample)`, so the finished-epoch
/// count is the whole RNG cursor.
#[derive(Debug, Clone)]
pub struct TrainSession {
    pub net: BranchedNetwork,
    pub optimizer: OptimizerState,
    pub config: TrainConfig,
    /// Channel means are filled in from the training set when unset.
    pub augment: AugmentConfig,
    pub pca: Option<PcaBasis>,
    pub epochs_done: usize,
}

impl TrainSession {
    pub fn new(model: &BranchedNetConfig, config: TrainConfig, augment: AugmentConfig, data: &Dataset) -> Result<Self> {
        config.validate()?;
        augment.validate()?;
        model.validate()?;
        if data.is_empty() {
            return Err(Error::invalid("train", "training set is empty"));
        }
        if model.num_classes != config.num_classes {
            return Err(Error::Config(format!(
                "model.num_classes = {} but train.num_classes = {}",
                model.num_classes, config.num_classes
            )));
        }
        if data.meta.num_classes > config.num_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes but the model predicts {}",
                data.meta.num_classes, config.num_classes
            )));
        }
        let (h, w) = (data.meta.height, data.meta.width);
        augment.validate_for_source(h, w)?;
        let out = augment.output_size(h, w);
        if out != (model.input_height, model.input_width) {
            return Err(Error::Config(format!(
                "augmented images are {}×{} but model expects {}×{}",
                out.0, out.1, model.input_height, model.input_width
            )));
        }
        let mut augment = augment;
        if augment.enable_normalize && augment.channel_means.is_none() {
            augment.channel_means = Some(channel_means(&data.images));
        }
        let pca = if augment.enable_pca {
            Some(fit_pca_basis(&data.images)?)
        } else {
            None
        };
        let net = BranchedNetwork::new(model, config.seed)?;
        let optimizer = OptimizerState::for_network(&net);
        Ok(Self {
            net,
            optimizer,
            config,
            augment,
            pca,
            epochs_done: 0,
        })
    }

    /// Trains until `config.total_epochs` epochs are done.
    pub fn run(
        &mut self,
        data: &Dataset,
        opts: RunOptions,
        on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<TrainHistory> {
        self.run_until(data, self.config.total_epochs, opts, on_epoch)
    }

    /// Trains until `end_epoch` epochs are done (capped at `total_epochs`).
    pub fn run_until(
        &mut self,
        data: &Dataset,
        end_epoch: usize,
        opts: RunOptions,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<TrainHistory> {
        let mut history = TrainHistory::default();
        while self.epochs_done < end_epoch.min(self.config.total_epochs) {
            let rec = self.train_epoch(data, opts)?;
            on_epoch(&rec);
            history.epochs.push(rec);
        }
        Ok(history)
    }

    /// One pass over a fresh permutation of the training set. The last
    /// batch may be smaller than `batch_size`.
    pub fn train_epoch(&mut self, data: &Dataset, opts: RunOptions) -> Result<EpochRecord> {
        let start = Instant::now();
        let epoch = self.epochs_done;
        let lr = lr_at_epoch(&self.config, epoch);
        let order = epoch_shuffle(data.len(), epoch as u64, self.config.seed);
        let mut sums = vec![0.0; self.net.num_branches()];
        for (b, idx) in order.chunks(self.config.batch_size).enumerate() {
            let losses = self.step(data, idx, epoch, lr, opts).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged { epoch, batch: b },
                e => e,
            })?;
            for (s, l) in sums.iter_mut().zip(losses) {
                *s += l * idx.len() as f64;
            }
        }
        self.epochs_done += 1;
        Ok(EpochRecord {
            epoch,
            lr,
            branch_losses: sums.into_iter().map(|s| s / data.len() as f64).collect(),
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }

    fn step(&mut self, data: &Dataset, idx: &[usize], epoch: usize, lr: f64, opts: RunOptions) -> Result<Vec<f64>> {
        let seed = self.config.seed;
        let samples = idx
            .par_iter()
            .map(|&i| {
                let key = SampleKey::new(seed, epoch as u64, i as u64);
                augment_pipeline(&data.images[i], &self.augment, self.pca.as_ref(), key)
            })
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let targets = smoothed_targets(&labels, self.config.num_classes, self.config.smoothing_epsilon)?;

        let mut tape = Tape::with_parallel(opts.parallel_kernels);
        let input = tape.constant(Tensor::stack(&samples)?);
        let out = self.net.forward_all_branches(&mut tape, input, Mode::Train)?;
        let loss = combined_branch_loss(&mut tape, &out.logits, &targets)?;
        if !tape.value(loss.total).item().is_finite() {
            return Err(Error::NonFinite { op: "loss" });
        }
        tape.backward(loss.total)?;
        let grads: Vec<Tensor> = out
            .params
            .iter()
            .map(|&v| match tape.grad(v) {
                Some(g) => g.clone(),
                None => Tensor::zeros(tape.value(v).shape()),
            })
            .collect();
        let hyper = SgdHyper {
            lr,
            momentum: self.config.momentum,
            weight_decay: self.config.weight_decay,
        };
        sgd_step_network(&mut self.net, &grads, &mut self.optimizer, hyper)?;
        if !(0..self.net.num_params()).all(|i| self.net.param_at(i).all_finite()) {
            return Err(Error::NonFinite {
                op: "sgd_momentum_step",
            });
        }
        Ok(loss.per_branch.iter().map(|&v| tape.value(v).item()).collect())
    }
}

/// Builds a session and trains it for `config.total_epochs` epochs.
pub fn train(
    model: &BranchedNetConfig,
    config: TrainConfig,
    augment: AugmentConfig,
    data: &Dataset,
    opts: RunOptions,
) -> Result<(TrainSession, TrainHistory)> {
    let mut session = TrainSession::new(model, config, augment, data)?;
    let history = session.run(data, opts, |_| {})?;
    Ok((session, history))
}
