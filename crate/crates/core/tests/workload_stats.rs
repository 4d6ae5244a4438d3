use pi_index::workload::{synthetic_dataset, KeyOrder, RankSampler, WorkloadGen, WorkloadSpec};
use rand::rngs::SmallRng;
use rand::SeedableRng;

const DRAWS: usize = 1_000_000;

/// Largest gap between the empirical and exact CDF of ranks.
fn ks_distance(n: usize, theta: f64, seed: u64) -> f64 {
    let sampler = RankSampler::new(n, theta).unwrap();
    let mut rng = SmallRng::seed_from_u64(seed);
    let mut counts = vec![0u64; n];
    for _ in 0..DRAWS {
        counts[sampler.sample(&mut rng)] += 1;
    }
    let weights: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-theta)).collect();
    let total: f64 = weights.iter().sum();
    let (mut exact, mut seen, mut d) = (0.0, 0u64, 0.0f64);
    for (w, c) in weights.iter().zip(&counts) {
        exact += w / total;
        seen += c;
        d = d.max((seen as f64 / DRAWS as f64 - exact).abs());
    }
    d
}

#[test]
fn ranks_follow_zipf_pmf() {
    // α = 0.01 critical value for one-sample KS at large n
    let crit = 1.628 / (DRAWS as f64).sqrt();
    for (theta, seed) in [(0.0, 1), (0.5, 2), (0.9, 3), (0.99, 4)] {
        let d = ks_distance(10_000, theta, seed);
        assert!(d < crit, "theta {theta}: D = {d} >= {crit}");
    }
}

#[test]
fn uniform_keys_pass_chi_square() {
    let n = 100_000;
    let data = synthetic_dataset(n);
    let spec = WorkloadSpec { dataset_size: n, batch_size: DRAWS, theta: 0.0, seed: 9, ..WorkloadSpec::default() };
    let mut gen = WorkloadGen::new(spec).unwrap();
    let mut bins = [0u64; 100];
    for _ in 0..DRAWS {
        let k = gen.next_key();
        let pos = data.partition_point(|p| p.0 < k);
        bins[pos * 100 / n] += 1;
    }
    let expected = DRAWS as f64 / 100.0;
    let chi2: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    // 99 degrees of freedom, upper 0.1% point
    assert!(chi2 < 148.2, "chi2 = {chi2}");
}

#[test]
fn skew_concentrates_ranked_keys() {
    let n = 100_000;
    let share_of_top_percent = |theta| {
        let spec = WorkloadSpec { dataset_size: n, theta, key_order: KeyOrder::Ranked, ..WorkloadSpec::default() };
        let mut gen = WorkloadGen::new(spec).unwrap();
        let cut = synthetic_dataset(n)[n / 100].0;
        (0..200_000).filter(|_| gen.next_key() < cut).count() as f64 / 200_000.0
    };
    assert!(share_of_top_percent(0.0) < 0.015);
    // exact share is H(1000, 0.9) / H(100000, 0.9) = 0.474
    assert!((share_of_top_percent(0.9) - 0.474).abs() < 0.01);
}
