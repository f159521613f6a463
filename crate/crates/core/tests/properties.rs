//! Property tests over randomly drawn channels, types, mixtures and codes.

use std::sync::Arc;

use proptest::prelude::*;
use univcode_core::channels::{ChannelFamily, ChannelPoint, Output};
use univcode_core::combinatorics::{
    enumerate_types, log_multinomial, number_of_types, round_to_type, Codebook, CompositionType,
};
use univcode_core::infomeasures::{
    exponent_lower_bound, kl_divergence, mutual_information, optimal_r1, renyi_divergence,
    ChannelTable, RateParameters, DEFAULT_RESOLUTION,
};
use univcode_core::mixtures::{
    estimate_renyi_to_mixture, MixtureModel, MixtureTarget, PriorKind, PriorSpec, RenyiMethod,
};
use univcode_core::numerics::entropy;
use univcode_core::simulator::{decision_masses, decode, Decision, UniversalCode};

fn dmc(d: usize, m: usize) -> Arc<ChannelFamily> {
    Arc::new(ChannelFamily::make_dmc_family(d, m).unwrap())
}

fn theta_strategy(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, k)
}

fn dist_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, d).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn rows(pt: &ChannelPoint) -> Vec<Vec<f64>> {
    (0..pt.family().inputs()).map(|x| pt.transition_row(x).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fisher_information_is_local_divergence_curvature(theta in theta_strategy(2), dir in theta_strategy(2)) {
        let fam = dmc(1, 2);
        let pt = fam.point(theta.clone()).unwrap();
        let j = pt.fisher_information(0).unwrap();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 0.1);
        let u: Vec<f64> = dir.iter().map(|v| v / norm).collect();
        let quad = (0..2).map(|a| (0..2).map(|b| u[a] * j[(a, b)] * u[b]).sum::<f64>()).sum::<f64>();
        let eps = 1e-3;
        let moved = fam.point(theta.iter().zip(&u).map(|(t, v)| t + eps * v).collect()).unwrap();
        let kl = kl_divergence(&pt.conditional(0), &moved.conditional(0), 1).unwrap();
        prop_assert!((2.0 * kl / (eps * eps) - quad).abs() < 1e-2 * (1.0 + quad));
        // Rényi of order 1+s scales like (1+s)/2 · εᵀJε locally.
        let r = renyi_divergence(&pt.conditional(0), &moved.conditional(0), 1.0, 1).unwrap();
        prop_assert!((r / (eps * eps) - quad).abs() < 2e-2 * (1.0 + quad));
    }

    #[test]
    fn information_bounds_and_concavity(theta in theta_strategy(6), p in dist_strategy(3)) {
        let pt = dmc(3, 2).point(theta).unwrap();
        let table = ChannelTable::new(&p, &pt, DEFAULT_RESOLUTION).unwrap();
        let i = table.mutual_information();
        prop_assert!(i >= -1e-12 && i <= entropy(&p) + 1e-12);
        let v: Vec<f64> = (0..=50).map(|k| table.s_info(k as f64 / 50.0)).collect();
        for w in v.windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] <= 1e-9);
        }
        // sI_{1−s} ≤ sI (Rényi information is nondecreasing in the order)
        for (k, val) in v.iter().enumerate() {
            prop_assert!(*val <= k as f64 / 50.0 * i + 1e-9);
        }
    }

    #[test]
    fn optimal_threshold_beats_every_other_threshold(theta in theta_strategy(2), frac in 0.0f64..0.9, offsets in prop::collection::vec(1e-3f64..0.5, 5)) {
        let pt = dmc(2, 1).point(theta).unwrap();
        let p = [0.5, 0.5];
        let i = mutual_information(&p, &pt).unwrap();
        prop_assume!(i > 1e-3);
        let rate = frac * i;
        let best = optimal_r1(&p, std::slice::from_ref(&pt), rate).unwrap();
        for off in offsets {
            let other = exponent_lower_bound(&p, std::slice::from_ref(&pt), RateParameters { rate, threshold_rate: rate + off }).unwrap();
            prop_assert!(other.bound <= best.bound + 1e-7);
        }
    }

    #[test]
    fn type_machinery_is_consistent(n in 1usize..12, d in 2usize..5, p in dist_strategy(3)) {
        let types = enumerate_types(n, d).unwrap();
        prop_assert_eq!(types.len() as f64, number_of_types(n, d).round());
        let total: f64 = types.iter().map(|t| log_multinomial(t.counts()).exp()).sum();
        prop_assert!((total - (d as f64).powi(n as i32)).abs() < 1e-6 * total);
        let t = round_to_type(&p, n).unwrap();
        prop_assert_eq!(t.n(), n);
        let err: f64 = t.distribution().iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!(err <= 3.0 / n as f64 + 1e-12);
    }

    #[test]
    fn mixtures_are_normalised_and_dominate(theta in theta_strategy(2), n in 1usize..10) {
        let fam = dmc(1, 2);
        let pt = fam.point(theta).unwrap();
        for prior in [PriorKind::Dirichlet { alpha: 1.0 }, PriorKind::Dirichlet { alpha: 0.5 }, PriorKind::GridE] {
            let model = MixtureModel::new(fam.clone(), prior.clone(), MixtureTarget::Input(0), n).unwrap();
            let types = enumerate_types(n, 3).unwrap();
            let total: f64 = types.iter().map(|t| (log_multinomial(t.counts()) + model.log_density_counts(t.counts()).unwrap()).exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
            for (w, node) in model.nodes() {
                let r = fam.point(node.clone()).unwrap().transition_row(0).unwrap();
                let c = types[types.len() / 2].counts();
                let lp: f64 = c.iter().zip(&r).map(|(k, q)| *k as f64 * q.ln()).sum();
                prop_assert!(model.log_density_counts(c).unwrap() >= w + lp - 1e-12);
            }
        }
        // Rényi divergence to the mixture is nondecreasing in the order.
        let model = MixtureModel::new(fam, PriorKind::Dirichlet { alpha: 1.0 }, MixtureTarget::Input(0), n).unwrap();
        let vals: Vec<f64> = [0.2, 0.5, 1.0, 3.0].iter().map(|&s| estimate_renyi_to_mixture(&pt, &model, s, RenyiMethod::Exact).unwrap().estimate).collect();
        for w in vals.windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-10);
        }
    }

    #[test]
    fn decoder_regions_partition_and_shrink(theta in theta_strategy(2), r1 in -0.3f64..0.4, seed in 0u64..1000) {
        use rand::SeedableRng;
        let fam = dmc(2, 1);
        let pt = fam.point(theta).unwrap();
        let comp = CompositionType::new(vec![3, 3]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let book = univcode_core::combinatorics::build_codebook_with_messages(&comp, 0.1, 4, &mut rng, false).unwrap();
        let priors = PriorSpec::uniform(PriorKind::Dirichlet { alpha: 1.0 });
        let code = UniversalCode::new(fam.clone(), book.clone(), r1, &priors).unwrap();
        let w = rows(&pt);
        let (masses, erasure) = decision_masses(&code, &w, book.codeword(0)).unwrap();
        prop_assert!((masses.iter().sum::<f64>() + erasure - 1.0).abs() < 1e-10);
        let higher = code.with_threshold(r1 + 0.05);
        let (_, erasure_hi) = decision_masses(&higher, &w, book.codeword(0)).unwrap();
        prop_assert!(erasure_hi >= erasure - 1e-12);
        // Reordering the codebook only changes decisions on outputs accepted by several codewords.
        let mut words = book.codewords().to_vec();
        words.reverse();
        let reversed = UniversalCode::new(fam, Codebook::from_codewords(comp, 0.1, words).unwrap(), r1, &priors).unwrap();
        for mask in 0u32..64 {
            let ys: Vec<Output> = (0..6).map(|i| Output::Symbol((mask >> i & 1) as usize)).collect();
            let accepted = code.accepting(&ys);
            let (a, b) = (decode(&code, &ys), decode(&reversed, &ys));
            match accepted.len() {
                0 => prop_assert!(a == Decision::Erasure && b == Decision::Erasure),
                1 => prop_assert_eq!(a, Decision::Message(accepted[0])),
                _ => {}
            }
            if accepted.len() == 1 {
                prop_assert_eq!(b, Decision::Message(3 - accepted[0]));
            }
        }
    }
}
