use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Seeded generator behind dropout masks. Its full state is two integers,
/// so it can be checkpointed and restored exactly.
#[derive(Debug, Clone)]
pub struct MaskRng {
    seed: u64,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

impl MaskRng {
    pub fn new(seed: u64) -> Self {
        MaskRng {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(state.seed);
        rng.set_word_pos(state.word_pos);
        MaskRng { seed: state.seed, rng }
    }

    /// Uniform sample in `[0, 1)` with 53 bits of resolution.
    fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

pub(crate) fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

/// Inverted dropout. In train mode each element survives with probability
/// `1 - rate` and is scaled by `1 / (1 - rate)`; the returned mask holds
/// those per-element multipliers. Infer mode is the identity and draws
/// nothing from `rng`.
pub fn dropout<S: Scalar>(
    x: &Tensor<S>,
    rate: f64,
    mode: Mode,
    rng: &mut MaskRng,
) -> Result<(Tensor<S>, Option<Vec<S>>)> {
    check_rate(rate)?;
    if mode == Mode::Infer {
        return Ok((x.clone(), None));
    }
    let keep = S::one() / (S::one() - S::from_f64_lossy(rate));
    let mask: Vec<S> = (0..x.len())
        .map(|_| if rng.unit() >= rate { keep } else { S::zero() })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::new(x.shape(), data)?, Some(mask)))
}

pub fn dropout_grad<S: Scalar>(mask: &[S], grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    if mask.len() != grad_out.len() {
        return Err(Error::Internal(format!(
            "dropout mask has {} elements but gradient has {}",
            mask.len(),
            grad_out.len()
        )));
    }
    let data = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
    Tensor::new(grad_out.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infer_mode_is_identity() {
        let x = Tensor::<f32>::from_fn([2, 3, 4, 4], |[n, c, h, w]| (n * 3 + c) as f32 - (h * w) as f32);
        let (y, mask) = dropout(&x, 0.5, Mode::Infer, &mut MaskRng::new(0)).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
    }

    #[test]
    fn zero_rate_train_is_identity() {
        let x = Tensor::<f32>::from_fn([2, 3, 4, 4], |[n, c, h, w]| (n + c + h + w) as f32 * 0.37);
        let (y, _) = dropout(&x, 0.0, Mode::Train, &mut MaskRng::new(9)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn half_rate_preserves_mean() {
        let x = Tensor::<f64>::full([4, 16, 32, 32], 3.0);
        let (y, _) = dropout(&x, 0.5, Mode::Train, &mut MaskRng::new(1234)).unwrap();
        let mean = y.sum() / y.len() as f64;
        assert!((mean - 3.0).abs() <= 0.05 * 3.0, "{mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 6.0));
    }

    #[test]
    fn rejects_rate_of_one() {
        let x = Tensor::<f64>::zeros([1, 1, 1, 1]);
        assert_eq!(dropout(&x, 1.0, Mode::Train, &mut MaskRng::new(0)).unwrap_err().category(), "config");
    }

    #[test]
    fn mask_depends_only_on_generator_state() {
        let x = Tensor::<f64>::full([1, 2, 8, 8], 1.0);
        let mut a = MaskRng::new(77);
        let _ = dropout(&x, 0.5, Mode::Train, &mut a).unwrap();
        let saved = a.state();
        let (first, _) = dropout(&x, 0.5, Mode::Train, &mut a).unwrap();
        let mut b = MaskRng::from_state(saved);
        let (second, _) = dropout(&x, 0.5, Mode::Train, &mut b).unwrap();
        assert_eq!(first, second);
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn gradient_reuses_mask() {
        let x = Tensor::<f64>::full([1, 1, 4, 4], 1.0);
        let (y, mask) = dropout(&x, 0.5, Mode::Train, &mut MaskRng::new(3)).unwrap();
        let g = dropout_grad(&mask.unwrap(), &x).unwrap();
        assert_eq!(g, y);
    }
}
