use hybrid_icd::stats::{
    classify_transitions, holm_adjust, mann_whitney_u, mann_whitney_u_exact, mann_whitney_u_normal,
    Direction,
};
use proptest::prelude::*;

/// Exact p by enumerating every split of the pooled sample (test-side oracle).
fn enumerate_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let u_of = |mask: u32| -> f64 {
        let (xs, ys): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| mask >> i & 1 == 1);
        let mut u = 0.0;
        for &x in &xs {
            for &y in &ys {
                if pooled[x] > pooled[y] {
                    u += 1.0
                } else if pooled[x] == pooled[y] {
                    u += 0.5
                }
            }
        }
        u
    };
    let mu = (a.len() * b.len()) as f64 / 2.0;
    let observed = (u_of((1u32 << a.len()) - 1) - mu).abs();
    let mut hit = 0usize;
    let mut total = 0usize;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize == a.len() {
            total += 1;
            if (u_of(mask) - mu).abs() >= observed - 1e-9 {
                hit += 1;
            }
        }
    }
    hit as f64 / total as f64
}

#[test]
fn normal_approximation_matches_reference_values() {
    // two-sided, continuity-corrected asymptotic p from an independent library
    let ties_a = [0.1, 0.2, 0.2, 0.3, 0.5, 0.5, 0.5, 0.7, 0.8, 0.9, 0.9, 1.0];
    let ties_b = [0.0, 0.1, 0.1, 0.2, 0.3, 0.3, 0.4, 0.4, 0.5, 0.6, 0.6, 0.8, 0.8, 0.85];
    let shift_a: Vec<f64> = (0..25).map(|i| i as f64 * 0.37 % 5.0).collect();
    let shift_b: Vec<f64> = (0..18).map(|i| 1.5 + (i as f64 * 0.53 % 5.0)).collect();
    let close_a: Vec<f64> = (0..30).map(|i| (i % 7) as f64).collect();
    let close_b: Vec<f64> = (0..30).map(|i| ((i + 1) % 7) as f64).collect();
    let cases: [(&[f64], &[f64], f64, f64); 3] = [
        (&ties_a, &ties_b, 104.5, 0.3012171782930757),
        (&shift_a, &shift_b, 102.5, 0.0026685340237007525),
        (&close_a, &close_b, 440.5, 0.893045846227259),
    ];
    for (a, b, u, p) in cases {
        let t = mann_whitney_u_normal(a, b).unwrap();
        assert_eq!(t.u, u);
        assert!((t.p - p).abs() < 1e-6, "{} vs {p}", t.p);
    }
    let t = mann_whitney_u(&[0.3, 1.2, 2.5, 0.7, 1.9], &[2.2, 3.1, 0.5, 4.0, 2.8, 3.3]).unwrap();
    assert_eq!(t.u, 5.0);
    assert!((t.p - 0.08225108225108226).abs() < 1e-12);
}

#[test]
fn exact_and_normal_agree_on_15_vs_15() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let shift = rng.gen_range(0.0..1.0);
        let a: Vec<f64> = (0..15).map(|_| rng.gen::<f64>()).collect();
        let b: Vec<f64> = (0..15).map(|_| rng.gen::<f64>() + shift * 0.5).collect();
        let e = mann_whitney_u_exact(&a, &b).unwrap();
        let n = mann_whitney_u_normal(&a, &b).unwrap();
        assert_eq!(e.u, n.u);
        worst = worst.max((e.p - n.p).abs());
    }
    assert!(worst < 0.02, "max gap {worst}");
}

fn small_sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u8..6).prop_map(|x| x as f64 / 2.0), 1..7)
}

proptest! {
    #[test]
    fn exact_matches_enumeration(a in small_sample(), b in small_sample()) {
        let t = mann_whitney_u_exact(&a, &b).unwrap();
        prop_assert!((t.p - enumerate_p(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn swapping_samples_mirrors_u(a in prop::collection::vec(0.0f64..1.0, 1..25), b in prop::collection::vec(0.0f64..1.0, 1..25)) {
        let x = mann_whitney_u(&a, &b).unwrap();
        let y = mann_whitney_u(&b, &a).unwrap();
        prop_assert!((x.u + y.u - (a.len() * b.len()) as f64).abs() < 1e-9);
        prop_assert!((x.p - y.p).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&x.p));
    }

    #[test]
    fn holm_is_monotone_and_dominates(p in prop::collection::vec(0.0f64..=1.0, 1..10)) {
        let adj = holm_adjust(&p).unwrap();
        for (r, a) in p.iter().zip(&adj) {
            prop_assert!(a >= r && *a <= 1.0);
        }
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
        for w in idx.windows(2) {
            prop_assert!(adj[w[0]] <= adj[w[1]]);
        }
    }

    #[test]
    fn transitions_ignore_within_bin_order(
        bins in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 0..12), 4),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut shuffled = bins.clone();
        for b in &mut shuffled {
            b.shuffle(&mut rng);
        }
        let x = classify_transitions(&bins, 0.05).unwrap();
        let y = classify_transitions(&shuffled, 0.05).unwrap();
        prop_assert_eq!(x.len(), 3);
        for (u, v) in x.iter().zip(&y) {
            prop_assert_eq!(u.direction, v.direction);
            prop_assert_eq!(u.p_adjusted, v.p_adjusted);
            if let (Some(adj), Direction::Up | Direction::Down) = (u.p_adjusted, u.direction) {
                prop_assert!(adj <= 0.05);
            }
        }
    }
}
