use convkernel::rates::*;
use convkernel::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inners() -> Vec<InnerFunction64> {
    vec![
        InnerFunction::Exponential,
        InnerFunction::rbf(0.7).unwrap(),
        InnerFunction::rbf(2.5).unwrap(),
        InnerFunction::polynomial(vec![0.3, -1.0, 0.5, 2.0]).unwrap(),
        InnerFunction::polynomial(vec![1.0]).unwrap(),
    ]
}

// Projection of t -> kappa(sum z / q) onto the degree-l elementary symmetric
// polynomial, averaged over all of {-1,1}^q. The polynomial is expanded
// coordinate by coordinate, so no Krawtchouk values are involved.
fn xi_by_enumeration(inner: &InnerFunction64, q: usize) -> Vec<f64> {
    let mut acc = vec![0.0; q + 1];
    for bits in 0u32..1 << q {
        let z: Vec<f64> = (0..q).map(|i| if bits >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
        let mut e = vec![0.0; q + 1];
        e[0] = 1.0;
        for &zi in &z {
            for l in (1..=q).rev() {
                e[l] += zi * e[l - 1];
            }
        }
        let k = inner.eval(z.iter().sum::<f64>() / q as f64);
        for l in 0..=q {
            acc[l] += k * e[l];
        }
    }
    acc.iter().map(|a| a / f64::powi(2.0, q as i32)).collect()
}

#[test]
fn xi_matches_exhaustive_projection() {
    for inner in inners() {
        for q in 1..=10 {
            let xi = xi_coefficients(&inner, q).unwrap();
            let oracle = xi_by_enumeration(&inner, q);
            let scale = xi.max_abs().max(1e-300);
            for (l, (a, b)) in xi.values.iter().zip(&oracle).enumerate() {
                assert!((a - b).abs() <= 1e-10 * scale, "{inner} q={q} l={l}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn xi_reconstructs_the_inner_function() {
    for inner in inners() {
        for q in 1..=12 {
            let xi = xi_coefficients(&inner, q).unwrap();
            for k in 0..=q {
                let direct = inner.eval((q as f64 - 2.0 * k as f64) / q as f64);
                let back = xi.reconstruct(k).unwrap();
                assert!((direct - back).abs() <= 1e-10 * direct.abs().max(1.0), "{inner} q={q} k={k}");
            }
        }
    }
}

#[test]
fn squared_kernel_matches_average_over_the_cube() {
    let (d, q) = (12, 4);
    let inner = InnerFunction::rbf(1.3).unwrap();
    let kernel = ConvKernel::new(d, q, inner.clone()).unwrap();
    let s = full_spectrum(d, q, &inner).unwrap();
    let pts = sample_points(6, d, 21).unwrap();
    let sq = s.spectral_matrix(&pts, &pts, 2).unwrap();
    let cube: Vec<HypercubePoint> = (0..1u64 << d).map(|b| HypercubePoint::from_bits(b, d)).collect();
    let cross = kernel::cross_gram(&kernel, &pts, &cube).unwrap();
    let exact = &cross * cross.transpose() / cube.len() as f64;
    assert!(linalg::max_abs_diff(&sq, &exact) <= 1e-12);

    // Sampled version with a standard-error bound.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 10_000;
    let z: Vec<HypercubePoint> = (0..draws).map(|_| HypercubePoint::from_bits(rng.random::<u64>(), d)).collect();
    let kz = kernel::cross_gram(&kernel, &pts, &z).unwrap();
    for (i, j) in [(0, 0), (0, 3), (2, 5), (4, 1)] {
        let prods: Vec<f64> = (0..draws).map(|t| kz[(i, t)] * kz[(j, t)]).collect();
        let mean = prods.iter().sum::<f64>() / draws as f64;
        let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!((mean - sq[(i, j)]).abs() <= 4.0 * se, "entry ({i},{j})");
    }
}

#[test]
fn eigendecay_constants_are_stable_in_q() {
    let inner = InnerFunction::<f64>::Exponential;
    let mut upper = vec![vec![]; 4];
    let mut lower = vec![vec![]; 4];
    for q in [8usize, 16, 32] {
        let d = 3 * q;
        let s = Spectrum::with_cap(d, q, &inner, u128::MAX).unwrap();
        for l in 1..=3usize {
            let vals: Vec<f64> = s.profiles().iter().filter(|p| p.degree == l).map(|p| p.eigenvalue).collect();
            let max = vals.iter().cloned().fold(f64::MIN, f64::max);
            let min = vals.iter().cloned().fold(f64::MAX, f64::min);
            upper[l].push(max * d as f64 * (q as f64).powi(l as i32 - 1));
            lower[l].push(min * d as f64 * (q as f64).powi(l as i32));
        }
    }
    let spread = |c: &Vec<f64>| {
        let hi = c.iter().cloned().fold(f64::MIN, f64::max);
        let lo = c.iter().cloned().fold(f64::MAX, f64::min);
        assert!(lo > 0.0);
        hi / lo
    };
    for l in 1..=3 {
        assert!(spread(&upper[l]) <= 2.0, "l={l}: {:?}", upper[l]);
        // the lower bound holds with the constant measured at the smallest q
        assert!(lower[l].iter().all(|&c| c >= 0.5 * lower[l][0]), "l={l}: {:?}", lower[l]);
        // degree one has a single profile, so its lower bound is loose by a factor q
        if l >= 2 {
            assert!(spread(&lower[l]) <= 2.0, "l={l}: {:?}", lower[l]);
        }
    }
}

fn random_params(rng: &mut ChaCha8Rng) -> RateParams {
    loop {
        let ell = rng.random_range(1.2..3.0);
        let beta = rng.random_range(0.05..0.95);
        let ell_sigma = rng.random_range(-0.5..1.5);
        let l_star = rng.random_range(1..=3usize);
        let p = RateParams::new(ell, beta, ell_sigma, 0.0, l_star).unwrap();
        if p.ell_bar() > 0.01 {
            return p;
        }
    }
}

fn eta_at(p: &RateParams, x: f64) -> RateExponents {
    rate_exponents(&p.with_ell_lambda(x)).unwrap()
}

#[test]
fn optimal_rate_matches_fine_grid_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let step = 1e-6;
    for _ in 0..20 {
        let p = random_params(&mut rng);
        let bar = p.ell_bar();
        let opt = optimal_reg_rate(&p).unwrap();
        let count = (bar / step).floor() as usize;
        let xs: Vec<f64> = (0..=count).map(|k| k as f64 * step).chain([bar]).collect();
        let etas: Vec<f64> = xs.iter().map(|&x| eta_at(&p, x).eta).collect();
        let best = etas.iter().cloned().fold(f64::MAX, f64::min);
        let near: Vec<f64> = xs.iter().zip(&etas).filter(|(_, e)| **e <= best + 1e-12).map(|(x, _)| *x).collect();
        let (lo, hi) = (near[0], *near.last().unwrap());
        assert!((lo - opt.lo).abs() <= step + 1e-9, "{p:?}: lo {lo} vs {}", opt.lo);
        assert!((hi - opt.hi).abs() <= step + 1e-9, "{p:?}: hi {hi} vs {}", opt.hi);
        assert!(opt.eta_min <= best + 1e-12 && best - opt.eta_min <= 2.0 * step);
    }
}

#[test]
fn eta_pieces_have_the_stated_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..50 {
        let p = random_params(&mut rng);
        let bar = p.ell_bar();
        let mut jumps = vec![];
        for steps in [1000usize, 2000] {
            let h = bar / steps as f64;
            let e: Vec<RateExponents> = (0..=steps).map(|k| eta_at(&p, k as f64 * h)).collect();
            let mut jump: f64 = 0.0;
            for w in e.windows(2) {
                assert!(((w[1].eta_b - w[0].eta_b) / h - 2.0 / p.ell).abs() <= 1e-6);
                assert!(w[1].eta_v <= w[0].eta_v + 1e-12);
                jump = jump.max((w[1].eta_v - w[0].eta_v).abs());
            }
            jumps.push(jump);
        }
        // halving the step at least roughly halves the largest increment
        assert!(jumps[1] <= 0.51 * jumps[0] + 1e-12, "{jumps:?}");
    }
}

#[test]
fn eta_is_affine_on_both_sides_of_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let p = random_params(&mut rng);
        let opt = optimal_reg_rate(&p).unwrap();
        let bar = p.ell_bar();
        // beyond the crossing the bias exponent is the whole rate
        let end = eta_at(&p, bar);
        if end.eta_v <= end.eta_b {
            for t in [0.25, 0.5, 1.0] {
                let e = eta_at(&p, opt.hi + t * (bar - opt.hi));
                assert_eq!(e.eta, e.eta_b);
            }
        }
        if opt.lo > 0.0 {
            let eps = opt.lo.min(1e-6);
            let x = opt.lo - eps;
            let expected = opt.eta_min + 2.0 / p.ell * (opt.lo - x);
            assert!((eta_at(&p, x).eta - expected).abs() <= 1e-9, "{p:?}");
        }
    }
}

#[test]
fn regime_flips_across_each_beta_star() {
    let cases = [(2.0, 0.6, 2usize), (2.0, 0.0, 2), (1.8, 0.3, 1), (2.5, 0.9, 3)];
    for (ell, ell_sigma, l_star) in cases {
        let bs = beta_star(ell, ell_sigma, l_star);
        for &root in &bs.roots {
            let g = interpolator_gap(ell, ell_sigma, l_star, root).unwrap();
            assert!(g.abs() <= 1e-8);
            let below = phase_report(ell, ell_sigma, l_star, root - 1e-4);
            let above = phase_report(ell, ell_sigma, l_star, root + 1e-4);
            if let (Ok(b), Ok(a)) = (below, above) {
                assert_ne!(b.regime, a.regime, "ell={ell} ell_sigma={ell_sigma} root={root}");
            }
            let shifted = beta_star_on_grid(ell, ell_sigma, l_star, BETA_GRID_STEP, 0.37 * BETA_GRID_STEP);
            assert!(shifted.roots.iter().any(|r| (r - root).abs() <= 1e-6));
        }
    }
}
