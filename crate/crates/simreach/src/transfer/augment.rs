//! Training-time image augmentation: brightness and white-balance jitter,
//! stronger on the simulated domain.

use rand::Rng;

use crate::numgrad::Tensor;
use crate::simworld::Domain;

/// Brightness jitter half-width per domain.
pub fn brightness_range(domain: Domain) -> f64 {
    match domain {
        Domain::Sim => 0.8,
        Domain::PseudoReal => 0.4,
    }
}

pub const WHITE_BALANCE_RANGE: f64 = 0.025;

/// Scale brightness uniformly in [1-b, 1+b] and each channel independently
/// in +-2.5%, then clamp back to [-1,1]. Operates on the [0,1] scale the
/// physical values live on, i.e. after unmapping from [-1,1].
pub fn augment(image: &Tensor, domain: Domain, rng: &mut impl Rng) -> Tensor {
    let b = brightness_range(domain);
    let brightness = rng.gen_range(1.0 - b..=1.0 + b);
    let wb: [f64; 3] = [
        rng.gen_range(1.0 - WHITE_BALANCE_RANGE..=1.0 + WHITE_BALANCE_RANGE),
        rng.gen_range(1.0 - WHITE_BALANCE_RANGE..=1.0 + WHITE_BALANCE_RANGE),
        rng.gen_range(1.0 - WHITE_BALANCE_RANGE..=1.0 + WHITE_BALANCE_RANGE),
    ];
    let mut out = image.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let unit = (*v + 1.0) / 2.0;
        let scaled = unit * brightness * wb[i % 3];
        *v = (scaled * 2.0 - 1.0).clamp(-1.0, 1.0);
    }
    out
}
