use rand::seq::SliceRandom;

use super::{Adam, CapSample, CapabilityNet};
use crate::error::{CinError, Result};
use crate::oracle::argmax;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// How the learning rate moves away from its initial value over the
    /// epochs of each call.
    pub schedule: LrSchedule,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        SupervisedConfig {
            epochs: 10,
            batch: 64,
            seed: 0,
            schedule: LrSchedule::Cosine,
        }
    }
}

fn check_sample(net: &CapabilityNet, s: &CapSample) -> Result<()> {
    if s.patch.len() != net.input_size() || s.label >= net.input_size() {
        return Err(CinError::ShapeMismatch {
            expected: net.input_size(),
            found: s.patch.len(),
        });
    }
    Ok(())
}

/// Squared error between the action slice and the one-hot label, averaged
/// over the window.
fn sample_loss(probs: &[f64], s: &CapSample) -> f64 {
    let w = s.patch.len();
    let slice = &probs[s.action.index() * w..(s.action.index() + 1) * w];
    slice
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let y = if j == s.label { 1.0 } else { 0.0 };
            (p - y) * (p - y)
        })
        .sum::<f64>()
        / w as f64
}

/// Mean MSE loss over `samples`.
pub fn mse_loss(net: &CapabilityNet, samples: &[CapSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(CinError::Empty("no samples"));
    }
    let mut total = 0.0;
    for s in samples {
        check_sample(net, s)?;
        total += sample_loss(&net.forward(&s.patch)?, s);
    }
    Ok(total / samples.len() as f64)
}

/// Mean MSE loss and its parameter gradient over `samples`.
pub fn mse_gradient(net: &CapabilityNet, samples: &[CapSample]) -> Result<(f64, Vec<f64>)> {
    if samples.is_empty() {
        return Err(CinError::Empty("no samples"));
    }
    let scale = 1.0 / samples.len() as f64;
    let mut grad = vec![0.0; net.num_params()];
    let mut total = 0.0;
    for s in samples {
        check_sample(net, s)?;
        let acts = net.forward_cached(&s.patch)?;
        total += sample_loss(&acts.probs, s);
        let w = s.patch.len();
        let a = s.action.index();
        let mut d_probs = vec![0.0; acts.probs.len()];
        for j in 0..w {
            let y = if j == s.label { 1.0 } else { 0.0 };
            d_probs[a * w + j] = scale * 2.0 * (acts.probs[a * w + j] - y) / w as f64;
        }
        net.backward(&acts, &d_probs, &mut grad);
    }
    Ok((total * scale, grad))
}

/// Per-epoch learning-rate multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LrSchedule {
    Constant,
    /// Half cosine from 1 towards 0 over the run.
    #[default]
    Cosine,
    /// `rate^epoch`.
    Exponential(f64),
}

impl LrSchedule {
    /// Multiplier of the base learning rate in zero-based `epoch` of `epochs`.
    pub fn factor(&self, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
            }
            LrSchedule::Exponential(rate) => rate.powi(epoch as i32),
        }
    }
}

/// Minibatch Adam on the MSE loss. Returns the mean training loss of each
/// epoch (averaged over the batches seen during that epoch). `adam.lr` is
/// left as it was on entry.
pub fn train_supervised(
    net: &mut CapabilityNet,
    samples: &[CapSample],
    cfg: &SupervisedConfig,
    adam: &mut Adam,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(CinError::Empty("no training samples"));
    }
    if cfg.batch == 0 {
        return Err(CinError::InvalidParameter("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = seed::rng(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch);
    let base_lr = adam.lr;
    let result = (|| {
        for epoch in 0..cfg.epochs {
            adam.lr = base_lr * cfg.schedule.factor(epoch, cfg.epochs);
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            let mut count = 0usize;
            for (b, chunk) in order.chunks(cfg.batch).enumerate() {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| samples[i].clone()));
                let (loss, grad) = mse_gradient(net, &batch)?;
                if !loss.is_finite() {
                    return Err(CinError::NonFiniteLoss { epoch, batch: b });
                }
                adam.update(net.params_mut(), &grad)?;
                sum += loss * chunk.len() as f64;
                count += chunk.len();
            }
            losses.push(sum / count as f64);
        }
        Ok(())
    })();
    adam.lr = base_lr;
    result.map(|()| losses)
}

/// Trains on a growing prefix of the curriculum bins: stage `i` uses bins
/// `0..=i`, for `cfg.epochs` epochs each. Returns the per-epoch losses of
/// all stages in order.
pub fn train_curriculum(
    net: &mut CapabilityNet,
    bins: &[Vec<CapSample>],
    cfg: &SupervisedConfig,
    adam: &mut Adam,
) -> Result<Vec<f64>> {
    let mut losses = Vec::new();
    let mut pool: Vec<CapSample> = Vec::new();
    for (stage, bin) in bins.iter().enumerate() {
        pool.extend(bin.iter().cloned());
        if pool.is_empty() {
            continue;
        }
        let stage_cfg = SupervisedConfig {
            seed: seed::derive(cfg.seed, 0xC0, stage as u64),
            ..*cfg
        };
        losses.extend(train_supervised(net, &pool, &stage_cfg, adam)?);
    }
    if pool.is_empty() {
        return Err(CinError::Empty("no training samples"));
    }
    Ok(losses)
}

/// Fraction of samples whose most likely next position equals the label.
pub fn argmax_accuracy(net: &CapabilityNet, samples: &[CapSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(CinError::Empty("no samples"));
    }
    let mut hits = 0usize;
    for s in samples {
        check_sample(net, s)?;
        let probs = net.forward(&s.patch)?;
        let w = s.patch.len();
        let a = s.action.index();
        if argmax(&probs[a * w..(a + 1) * w]) == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capability::collect_samples;
    use crate::gridworld::{generate_maze, Action, MapKind};

    #[test]
    fn exact_predictions_have_zero_loss() {
        // all-zero weights with a huge bias on the label position
        let mut net = CapabilityNet::new(3, &[4], 0).unwrap();
        let n = net.num_params();
        for p in net.params_mut().iter_mut() {
            *p = 0.0;
        }
        // output biases are the final 72 parameters; favour the centre
        for a in 0..8 {
            net.params_mut()[n - 72 + a * 9 + 4] = 1e3;
        }
        let s = CapSample {
            kind: MapKind::Occupancy2D,
            patch: vec![0.0; 9],
            action: Action::S,
            label: 4,
        };
        assert_eq!(mse_loss(&net, &[s]).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let maps = vec![generate_maze(8, 3).unwrap()];
        let samples = collect_samples(&maps, 1, 2, 3, 4).unwrap();
        assert_eq!(samples.len(), 2);
        let net = CapabilityNet::new(3, &[10, 10, 10, 10], 5).unwrap();
        let (_, grad) = mse_gradient(&net, &samples).unwrap();
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for k in 0..net.num_params() {
            let mut plus = net.clone();
            plus.params_mut()[k] += eps;
            let mut minus = net.clone();
            minus.params_mut()[k] -= eps;
            let fd = (mse_loss(&plus, &samples).unwrap() - mse_loss(&minus, &samples).unwrap()) / (2.0 * eps);
            let scale = fd.abs().max(grad[k].abs());
            if scale > 1e-7 {
                worst = worst.max((fd - grad[k]).abs() / scale);
            } else {
                assert!((fd - grad[k]).abs() < 1e-9);
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn training_reduces_loss_and_is_reproducible() {
        let maps: Vec<_> = (0..30).map(|s| generate_maze(8, s).unwrap()).collect();
        let samples = collect_samples(&maps, 2, 20, 3, 7).unwrap();
        let cfg = SupervisedConfig { epochs: 5, batch: 64, seed: 3, schedule: LrSchedule::Cosine };
        let start = CapabilityNet::standard(3, 1).unwrap();
        let before = mse_loss(&start, &samples).unwrap();

        let mut a = start.clone();
        let mut adam_a = Adam::new(a.num_params());
        let log_a = train_supervised(&mut a, &samples, &cfg, &mut adam_a).unwrap();
        let after = mse_loss(&a, &samples).unwrap();
        assert!(after < before, "{after} >= {before}");
        assert!(log_a.last().unwrap() < log_a.first().unwrap());

        let mut b = start.clone();
        let mut adam_b = Adam::new(b.num_params());
        let log_b = train_supervised(&mut b, &samples, &cfg, &mut adam_b).unwrap();
        assert_eq!(log_a, log_b);
        assert_eq!(a, b);
        assert_eq!(adam_a.lr, 1e-3);
    }

    #[test]
    fn schedules_start_at_base_and_decay() {
        let cos = LrSchedule::Cosine;
        assert_eq!(cos.factor(0, 10), 1.0);
        assert!((cos.factor(5, 10) - 0.5).abs() < 1e-12);
        for s in [cos, LrSchedule::Exponential(0.8)] {
            let f: Vec<f64> = (0..10).map(|e| s.factor(e, 10)).collect();
            assert!(f.windows(2).all(|w| w[1] < w[0]));
            assert!(f[9] > 0.0);
        }
        assert!((LrSchedule::Exponential(0.5).factor(3, 10) - 0.125).abs() < 1e-15);
        assert_eq!(LrSchedule::Constant.factor(7, 10), 1.0);
    }

    #[test]
    fn empty_samples_rejected() {
        let mut net = CapabilityNet::standard(3, 0).unwrap();
        let mut adam = Adam::new(net.num_params());
        assert!(train_supervised(&mut net, &[], &SupervisedConfig::default(), &mut adam).is_err());
    }

    #[test]
    fn nan_loss_aborts() {
        let maps = vec![generate_maze(8, 0).unwrap()];
        let samples = collect_samples(&maps, 1, 4, 3, 0).unwrap();
        let mut net = CapabilityNet::new(3, &[4], 0).unwrap();
        net.params_mut()[0] = f64::NAN;
        let mut adam = Adam::new(net.num_params());
        let cfg = SupervisedConfig { epochs: 1, batch: 4, seed: 0, schedule: LrSchedule::Constant };
        assert!(matches!(
            train_supervised(&mut net, &samples, &cfg, &mut adam),
            Err(CinError::NonFiniteLoss { .. })
        ));
    }
}
