use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{OptimizerState, TrainConfig, TrainError};
use crate::autodiff::{AutodiffError, Tape};
use crate::harness::Dataset;
use crate::search_space::{
    batch_loss, bind, ArchParams, GradMode, SpaceError, SupernetSpec, Weights,
};

/// Serialisable position of the run's ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string; JSON numbers do not carry u128 portably.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, TrainError> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| TrainError::State(format!("bad rng word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything that evolves during a search.
#[derive(Clone, Debug)]
pub struct SearchState {
    pub weights: Weights,
    pub arch: ArchParams,
    pub weight_opt: OptimizerState,
    pub param_opt: OptimizerState,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr_w: f64,
    /// Rate actually applied to α; 0 while α is frozen.
    pub lr_a: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub sample_losses: Vec<f64>,
    pub correct: Vec<bool>,
}

/// First-order alternating optimizer: one α step on a validation batch, then
/// one ω step on a training batch.
#[derive(Clone, Debug)]
pub struct BilevelTrainer {
    spec: SupernetSpec,
    config: TrainConfig,
    state: SearchState,
}

fn batch_of<'a>(data: &'a Dataset, idx: &[usize]) -> (Vec<&'a [f64]>, Vec<usize>) {
    (
        idx.iter().map(|&i| data.features[i].as_slice()).collect(),
        idx.iter().map(|&i| data.labels[i]).collect(),
    )
}

/// Running per-sample record, reduced in sample order so the epoch summary
/// does not depend on batch order.
struct SampleLog {
    loss: Vec<Option<f64>>,
    correct: Vec<bool>,
}

impl SampleLog {
    fn new(n: usize) -> Self {
        Self {
            loss: vec![None; n],
            correct: vec![false; n],
        }
    }

    fn record(&mut self, idx: &[usize], stats: &BatchStats) {
        for ((&i, &l), &c) in idx.iter().zip(&stats.sample_losses).zip(&stats.correct) {
            self.loss[i] = Some(l);
            self.correct[i] = c;
        }
    }

    fn summary(&self) -> (f64, f64) {
        let (mut total, mut hits, mut n) = (0.0, 0usize, 0usize);
        for (l, &c) in self.loss.iter().zip(&self.correct) {
            if let Some(l) = l {
                total += l;
                hits += c as usize;
                n += 1;
            }
        }
        (total / n as f64, hits as f64 / n as f64)
    }
}

impl BilevelTrainer {
    /// Fresh run: ω from the seed, α all zeros.
    pub fn new(spec: SupernetSpec, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let weights = Weights::init(&spec, &mut rng);
        let arch = ArchParams::for_spec(&spec);
        let weight_opt = OptimizerState::new(
            config.weight_optimizer,
            config.weight_weight_decay,
            weights.tensors(),
        )?;
        let param_opt = OptimizerState::new(
            config.param_optimizer,
            config.param_weight_decay,
            arch.tensors(),
        )?;
        Ok(Self {
            spec,
            config,
            state: SearchState {
                weights,
                arch,
                weight_opt,
                param_opt,
                epoch: 0,
                rng,
            },
        })
    }

    /// Resumes from a saved state.
    pub fn from_state(
        spec: SupernetSpec,
        config: TrainConfig,
        state: SearchState,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        state.arch.check_against(&spec)?;
        if !state.weight_opt.matches(state.weights.tensors())
            || !state.param_opt.matches(state.arch.tensors())
        {
            return Err(TrainError::State(
                "optimizer state does not match parameters".into(),
            ));
        }
        if state.epoch > config.total_epochs {
            return Err(TrainError::State(format!(
                "state is at epoch {} beyond total {}",
                state.epoch, config.total_epochs
            )));
        }
        Ok(Self {
            spec,
            config,
            state,
        })
    }

    pub fn spec(&self) -> &SupernetSpec {
        &self.spec
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &SearchState {
        &self.state
    }

    pub fn epoch(&self) -> usize {
        self.state.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.config.total_epochs
    }

    /// Whether α is frozen during the epoch about to run.
    pub fn in_warmup(&self) -> bool {
        self.state.epoch < self.config.warmup_epochs
    }

    fn forward_backward(
        &mut self,
        feats: &[&[f64]],
        labels: &[usize],
        mode: GradMode,
    ) -> Result<BatchStats, TrainError> {
        let mut tape = Tape::new();
        let s = &mut self.state;
        let bound = bind(&mut tape, &self.spec, &s.weights, &s.arch, mode)?;
        let out = batch_loss(&mut tape, &self.spec, &bound, feats, labels)?;
        if mode != GradMode::NONE {
            let grads = tape.backward(out.loss)?;
            if mode.weights {
                for (t, &v) in s.weights.tensors_mut().iter_mut().zip(&bound.weights) {
                    grads.write_into(v, t)?;
                }
            }
            if mode.arch {
                for (t, &v) in s.arch.tensors_mut().iter_mut().zip(&bound.alphas) {
                    grads.write_into(v, t)?;
                }
            }
        }
        Ok(BatchStats {
            sample_losses: out.sample_losses,
            correct: out.correct,
        })
    }

    /// One ω update from a training batch, α held fixed.
    pub fn step_weights(
        &mut self,
        feats: &[&[f64]],
        labels: &[usize],
        lr: f64,
    ) -> Result<BatchStats, TrainError> {
        let stats = self.forward_backward(feats, labels, GradMode::WEIGHTS)?;
        let s = &mut self.state;
        s.weight_opt.step(s.weights.tensors_mut(), lr)?;
        Ok(stats)
    }

    /// One α update from a validation batch, ω held fixed.
    pub fn step_params(
        &mut self,
        feats: &[&[f64]],
        labels: &[usize],
        lr: f64,
    ) -> Result<BatchStats, TrainError> {
        let stats = self.forward_backward(feats, labels, GradMode::ARCH)?;
        let s = &mut self.state;
        s.param_opt.step(s.arch.tensors_mut(), lr)?;
        Ok(stats)
    }

    /// Loss and accuracy without touching any parameter.
    pub fn evaluate(
        &mut self,
        feats: &[&[f64]],
        labels: &[usize],
    ) -> Result<BatchStats, TrainError> {
        self.forward_backward(feats, labels, GradMode::NONE)
    }

    /// Runs one full pass over the paired training/validation batches.
    pub fn run_epoch(
        &mut self,
        train: &Dataset,
        val: &Dataset,
    ) -> Result<EpochMetrics, TrainError> {
        if self.is_finished() {
            return Err(TrainError::State(
                "training already reached total_epochs".into(),
            ));
        }
        if train.is_empty() || val.is_empty() {
            return Err(TrainError::Config(
                "training and validation sets must be non-empty".into(),
            ));
        }
        let epoch = self.state.epoch + 1;
        let diverged = |e: TrainError| match e {
            TrainError::NonFiniteGradient
            | TrainError::Space(SpaceError::Autodiff(AutodiffError::NonFinite(_))) => {
                TrainError::NonFinite { epoch }
            }
            other => other,
        };
        let (train_loss, train_acc, val_loss, val_acc, lr_w, lr_a) =
            self.epoch_pass(train, val).map_err(diverged)?;
        let params_finite = self
            .state
            .weights
            .tensors()
            .iter()
            .chain(self.state.arch.tensors())
            .all(|t| t.is_finite());
        if !(train_loss.is_finite() && val_loss.is_finite() && params_finite) {
            return Err(TrainError::NonFinite { epoch });
        }
        self.state.epoch = epoch;
        Ok(EpochMetrics {
            epoch,
            lr_w,
            lr_a,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        })
    }

    fn epoch_pass(
        &mut self,
        train: &Dataset,
        val: &Dataset,
    ) -> Result<(f64, f64, f64, f64, f64, f64), TrainError> {
        let (t, total) = (self.state.epoch, self.config.total_epochs);
        let frozen = self.in_warmup();
        let lr_w = self.config.weight_lr.lr_at(t, total)?;
        let lr_a = if frozen {
            0.0
        } else {
            self.config.param_lr.lr_at(t, total)?
        };

        let bs = self.config.batch_size;
        let mut train_idx: Vec<usize> = (0..train.len()).collect();
        let mut val_idx: Vec<usize> = (0..val.len()).collect();
        train_idx.shuffle(&mut self.state.rng);
        val_idx.shuffle(&mut self.state.rng);
        let train_batches: Vec<&[usize]> = train_idx.chunks(bs).collect();
        let val_batches: Vec<&[usize]> = val_idx.chunks(bs).collect();

        let mut train_log = SampleLog::new(train.len());
        let mut val_log = SampleLog::new(val.len());
        for (step, tb) in train_batches.iter().enumerate() {
            let vb = val_batches[step % val_batches.len()];
            let (vf, vl) = batch_of(val, vb);
            let vstats = if frozen {
                self.evaluate(&vf, &vl)?
            } else {
                self.step_params(&vf, &vl, lr_a)?
            };
            val_log.record(vb, &vstats);

            let (tf, tl) = batch_of(train, tb);
            let tstats = self.step_weights(&tf, &tl, lr_w)?;
            train_log.record(tb, &tstats);
        }
        let (train_loss, train_acc) = train_log.summary();
        let (val_loss, val_acc) = val_log.summary();
        Ok((train_loss, train_acc, val_loss, val_acc, lr_w, lr_a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilevel::{apply_scheme, LrSchedule};
    use crate::harness::{generate_dataset, DatasetSpec};

    fn small() -> (SupernetSpec, TrainConfig, crate::harness::SplitDataset) {
        let spec = SupernetSpec {
            feature_dim: 6,
            input_dim: 4,
            classes: 3,
            ..SupernetSpec::default()
        };
        let mut c = apply_scheme("baseline").unwrap();
        c.total_epochs = 4;
        c.batch_size = 16;
        let data = generate_dataset(&DatasetSpec {
            n_samples: 96,
            classes: 3,
            input_dim: 4,
            ..DatasetSpec::default()
        })
        .unwrap();
        (spec, c, data)
    }

    #[test]
    fn alpha_step_leaves_weights_and_vice_versa() {
        let (spec, c, data) = small();
        let mut tr = BilevelTrainer::new(spec, c).unwrap();
        let (f, l) = batch_of(&data.val, &[0, 1, 2, 3]);
        let w_before = tr.state().weights.bit_pattern();
        let a_before = tr.state().arch.bit_pattern();
        tr.step_params(&f, &l, 0.5).unwrap();
        assert_eq!(tr.state().weights.bit_pattern(), w_before);
        assert_ne!(tr.state().arch.bit_pattern(), a_before);

        let a_before = tr.state().arch.bit_pattern();
        tr.step_weights(&f, &l, 0.5).unwrap();
        assert_eq!(tr.state().arch.bit_pattern(), a_before);
        assert_ne!(tr.state().weights.bit_pattern(), w_before);
    }

    #[test]
    fn warmup_freezes_alpha_but_trains_weights() {
        let (spec, mut c, data) = small();
        c.warmup_epochs = 2;
        let mut tr = BilevelTrainer::new(spec, c).unwrap();
        let a0 = tr.state().arch.bit_pattern();
        let w0 = tr.state().weights.bit_pattern();
        for _ in 0..2 {
            let m = tr.run_epoch(&data.train, &data.val).unwrap();
            assert_eq!(m.lr_a, 0.0);
            assert_eq!(tr.state().arch.bit_pattern(), a0);
            assert_ne!(tr.state().weights.bit_pattern(), w0);
        }
        tr.run_epoch(&data.train, &data.val).unwrap();
        assert_ne!(tr.state().arch.bit_pattern(), a0);
    }

    #[test]
    fn zero_rates_give_constant_losses() {
        let (spec, mut c, data) = small();
        c.weight_lr = LrSchedule::Constant { lr: 0.0 };
        c.param_lr = LrSchedule::Constant { lr: 0.0 };
        let mut tr = BilevelTrainer::new(spec, c).unwrap();
        let first = tr.run_epoch(&data.train, &data.val).unwrap();
        for _ in 1..4 {
            let m = tr.run_epoch(&data.train, &data.val).unwrap();
            assert_eq!(m.train_loss.to_bits(), first.train_loss.to_bits());
            assert_eq!(m.val_loss.to_bits(), first.val_loss.to_bits());
        }
        assert!(tr.is_finished());
        assert!(tr.run_epoch(&data.train, &data.val).is_err());
    }

    #[test]
    fn replay_is_bit_identical() {
        let (spec, c, data) = small();
        let run = || {
            let mut tr = BilevelTrainer::new(spec.clone(), c.clone()).unwrap();
            let ms: Vec<_> = (0..4)
                .map(|_| tr.run_epoch(&data.train, &data.val).unwrap())
                .collect();
            (ms, tr.state().arch.bit_pattern())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn uniform_alpha_gradient_keeps_mixture() {
        let mut arch = ArchParams::from_rows(vec![vec![0.1, -0.3, 0.2]]).unwrap();
        let before = arch.mixture_weights();
        arch.tensors_mut()[0].set_grad(vec![0.7; 3]).unwrap();
        let kind = crate::bilevel::OptimizerKind::SGD_09;
        let mut opt = OptimizerState::new(kind, 0.0, arch.tensors()).unwrap();
        opt.step(arch.tensors_mut(), 0.1).unwrap();
        for (a, b) in arch.mixture_weights()[0].iter().zip(&before[0]) {
            assert!((a - b).abs() < 1e-15);
        }

        // positive gradient on one entry lowers it and its share
        let mut arch = ArchParams::zeros(1, 3);
        arch.tensors_mut()[0].set_grad(vec![0.0, 1.0, 0.0]).unwrap();
        let mut opt = OptimizerState::new(kind, 0.0, arch.tensors()).unwrap();
        opt.step(arch.tensors_mut(), 0.1).unwrap();
        assert!(arch.edge(0)[1] < 0.0);
        assert!(arch.mixture_weights()[0][1] < 1.0 / 3.0);
    }

    #[test]
    fn divergence_names_the_epoch() {
        let (spec, mut c, data) = small();
        c.weight_lr = LrSchedule::Constant { lr: 1e200 };
        let mut tr = BilevelTrainer::new(spec, c).unwrap();
        let mut err = None;
        for _ in 0..4 {
            if let Err(e) = tr.run_epoch(&data.train, &data.val) {
                err = Some(e);
                break;
            }
        }
        assert!(
            matches!(err, Some(TrainError::NonFinite { epoch: 1 | 2 })),
            "{err:?}"
        );
    }

    #[test]
    fn empty_data_is_config_error() {
        let (spec, c, data) = small();
        let mut tr = BilevelTrainer::new(spec, c).unwrap();
        let empty = Dataset {
            features: vec![],
            labels: vec![],
            classes: 3,
        };
        assert!(matches!(
            tr.run_epoch(&empty, &data.val),
            Err(TrainError::Config(_))
        ));
    }

    #[test]
    fn rng_state_round_trip() {
        use rand::Rng;
        let mut a = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..37 {
            let _: u64 = a.random();
        }
        let saved = RngState::capture(&a);
        let json = serde_json::to_string(&saved).unwrap();
        let mut b = serde_json::from_str::<RngState>(&json)
            .unwrap()
            .restore()
            .unwrap();
        for _ in 0..10 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }
}
