//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use univcode_core::channels::{ChannelFamily, ChannelPoint, Output};
use univcode_core::combinatorics::{build_codebook_with_messages, CompositionType};
use univcode_core::mixtures::{PriorKind, PriorSpec};
use univcode_core::simulator::UniversalCode;

/// BSC with crossover `p` in the logistic binary DMC family.
pub fn bsc(p: f64) -> ChannelPoint {
    let fam = Arc::new(ChannelFamily::make_dmc_family(2, 1).unwrap());
    let theta = ChannelFamily::dmc_natural_parameters(&[vec![1.0 - p, p], vec![p, 1.0 - p]]).unwrap();
    fam.point(theta).unwrap()
}

/// `Y = s_x + Z`, `Z ~ N(0, 1/2)`, antipodal signals.
pub fn fading() -> ChannelPoint {
    let fam = Arc::new(ChannelFamily::make_gaussian_fading(vec![-1.0, 1.0]).unwrap());
    fam.point(ChannelFamily::fading_natural_parameters(1.0, 0.0, 0.5).unwrap()).unwrap()
}

/// A balanced binary code with `messages` codewords and the default priors.
pub fn binary_code(n: usize, messages: usize, threshold_rate: f64, seed: u64) -> UniversalCode {
    let fam = bsc(0.1).family().clone();
    let comp = CompositionType::new(vec![n / 2, n - n / 2]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let book = build_codebook_with_messages(&comp, 0.1, messages, &mut rng, false).unwrap();
    UniversalCode::new(fam, book, threshold_rate, &PriorSpec::uniform(PriorKind::Dirichlet { alpha: 1.0 })).unwrap()
}

/// An output word drawn from `point` when codeword `i` is sent.
pub fn received(code: &UniversalCode, point: &ChannelPoint, i: usize, seed: u64) -> Vec<Output> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    code.codebook().codeword(i).iter().map(|&x| point.sample_output(x, &mut rng)).collect()
}
