use super::*;
use crate::grid::{coeff_inner_product, BandId, CoeffShape};
use crate::operators::{
    augment_background, compose, rational_kernel, Convolution, Identity, Kernel, TiHaar,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Square matrix acting on a `1 × n` pixel row.
struct Dense {
    n: usize,
    m: Vec<f64>,
}

impl LinearOp for Dense {
    fn domain(&self) -> CoeffShape {
        CoeffShape::pixels(1, self.n)
    }
    fn range(&self) -> (usize, usize) {
        (1, self.n)
    }
    fn apply(&self, c: &CoeffField) -> Result<ImageGrid> {
        let x = c.bands()[0].1.as_slice();
        let y = (0..self.n)
            .map(|i| (0..self.n).map(|j| self.m[i * self.n + j] * x[j]).sum())
            .collect();
        ImageGrid::new(1, self.n, y)
    }
    fn adjoint(&self, y: &ImageGrid) -> Result<CoeffField> {
        let y = y.as_slice();
        let x = (0..self.n)
            .map(|j| (0..self.n).map(|i| self.m[i * self.n + j] * y[i]).sum())
            .collect();
        Ok(CoeffField::from_image(ImageGrid::new(1, self.n, x)?))
    }
}

fn row(v: &[f64]) -> CoeffField {
    CoeffField::from_image(ImageGrid::new(1, v.len(), v.to_vec()).unwrap())
}

fn pixels(c: &CoeffField) -> Vec<f64> {
    c.bands()[0].1.as_slice().to_vec()
}

fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> ImageGrid {
    ImageGrid::from_fn(h, w, |_, _| rng.random_range(lo..hi))
}

fn direct_conv(f: &ImageGrid, k: &Kernel, flip: bool) -> ImageGrid {
    let (h, w) = f.shape();
    let r = k.radius() as isize;
    let s = if flip { -1 } else { 1 };
    ImageGrid::from_fn(h, w, |i, j| {
        let mut acc = 0.0;
        for a in -r..=r {
            for b in -r..=r {
                let ii = (i as isize - s * a).rem_euclid(h as isize) as usize;
                let jj = (j as isize - s * b).rem_euclid(w as isize) as usize;
                acc += k.tap(a, b) * f.get(ii, jj);
            }
        }
        acc
    })
}

fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).round() as usize;
    let mut best = (f64::INFINITY, lo);
    for k in 0..=n {
        let x = lo + k as f64 * step;
        let v = f(x);
        if v < best.0 {
            best = (v, x);
        }
    }
    best.1
}

// ---------------------------------------------------------------- objective

#[test]
fn objective_closed_forms() {
    let n = 12;
    let op = Identity::new(3, 4);
    let c = CoeffField::from_image(ImageGrid::filled(3, 4, 1.0));
    let g = ImageGrid::filled(3, 4, 1.0);
    let e = objective(&c, &g, &op, &PriorConfig::from_gamma(0.0).unwrap()).unwrap();
    assert!((e - n as f64).abs() < 1e-12);
    let e = objective(&c, &g, &op, &PriorConfig::from_gamma(0.5).unwrap()).unwrap();
    assert!((e - 1.5 * n as f64).abs() < 1e-12);
}

#[test]
fn objective_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = rational_kernel(1).unwrap();
    let op = Convolution::new(k.clone(), 6, 5).unwrap();
    let f = random_image(6, 5, &mut rng, 0.5, 3.0);
    let g = ImageGrid::from_fn(6, 5, |_, _| rng.random_range(0..6) as f64);
    let gamma = 0.3;
    let e = objective(
        &CoeffField::from_image(f.clone()),
        &g,
        &op,
        &PriorConfig::from_gamma(gamma).unwrap(),
    )
    .unwrap();
    let af = direct_conv(&f, &k, false);
    let mut oracle = 0.0;
    for i in 0..6 {
        for j in 0..5 {
            let a = af.get(i, j);
            oracle += a - g.get(i, j) * a.ln() + gamma * f.get(i, j).abs();
        }
    }
    assert!((e - oracle).abs() <= 1e-10 * oracle.abs(), "{e} vs {oracle}");
}

#[test]
fn objective_rejects_nonpositive_forward_values() {
    let op = Identity::new(1, 3);
    let c = row(&[1.0, -0.5, 2.0]);
    let prior = PriorConfig::from_gamma(0.1).unwrap();
    let err = objective(&c, &ImageGrid::new(1, 3, vec![1.0, 2.0, 1.0]).unwrap(), &op, &prior);
    assert!(matches!(err, Err(Error::Domain { row: 0, col: 1, .. })));
    // no data at the offending pixel: the log term is absent there
    let ok = objective(&c, &ImageGrid::new(1, 3, vec![1.0, 0.0, 1.0]).unwrap(), &op, &prior);
    assert!(ok.is_ok());
}

#[test]
fn background_penalty_is_configurable() {
    let c = CoeffField::from_image(ImageGrid::filled(2, 2, -1.0)).with_background(Some(5.0));
    let p = PriorConfig::from_gamma(2.0).unwrap();
    assert_eq!(p.penalty(&c), 8.0);
    assert_eq!(p.with_background_penalty(true).penalty(&c), 18.0);
}

#[test]
fn prior_construction() {
    let p = PriorConfig::from_beta(4.0).unwrap();
    assert_eq!(p.gamma(), 0.25);
    assert_eq!(p.p(), 1.0);
    assert!(PriorConfig::new(0.25, 4.0).is_ok());
    assert!(PriorConfig::new(0.3, 4.0).is_err());
    assert!(PriorConfig::from_beta(0.0).is_err());
    assert!(PriorConfig::from_gamma(-1.0).is_err());
}

// ----------------------------------------------------------- soft threshold

#[test]
fn soft_threshold_examples() {
    let c = row(&[2.0, 0.3, -2.0, 0.5, -0.5]);
    let s = soft_threshold(&c, 1.0, 2.0);
    assert_eq!(pixels(&s), vec![1.5, 0.0, -1.5, 0.0, 0.0]);
}

#[test]
fn soft_threshold_is_the_l1_prox() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let c = rng.random_range(-5.0..5.0);
        let gamma = rng.random_range(0.0..2.0);
        let mu = rng.random_range(0.5..5.0);
        let s = pixels(&soft_threshold(&row(&[c]), gamma, mu))[0];
        let x = grid_argmin(|x| 0.5 * mu * (x - c) * (x - c) + gamma * x.abs(), -6.0, 6.0, 1e-4);
        assert!((s - x).abs() <= 1e-4, "c={c} gamma={gamma} mu={mu}: {s} vs {x}");
    }
}

#[test]
fn shrink_respects_background_exemption() {
    let c = row(&[3.0]).with_background(Some(0.4));
    let p = PriorConfig::from_gamma(1.0).unwrap();
    assert_eq!(shrink(&c, &p, 2.0).background(), Some(0.4));
    assert_eq!(shrink(&c, &p.with_background_penalty(true), 2.0).background(), Some(0.0));
    assert_eq!(soft_threshold(&c, 1.0, 2.0).background(), Some(0.0));
}

// --------------------------------------------------------------- gradients

#[test]
fn gradient_arg_fixed_point_of_data_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let op = Convolution::new(rational_kernel(1).unwrap(), 8, 8).unwrap();
    let c = CoeffField::from_image(random_image(8, 8, &mut rng, 0.5, 2.0));
    let g = op.apply(&c).unwrap();
    let arg = pis_gradient_arg(&c, &g, &op, 0.7).unwrap();
    let diff = arg.sub(&c).unwrap().norm();
    assert!(diff < 1e-12, "{diff}");
}

#[test]
fn gradient_arg_identity_formula_and_large_mu_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let op = Identity::new(8, 8);
    let ct = random_image(8, 8, &mut rng, 0.2, 3.0);
    let g = ImageGrid::from_fn(8, 8, |_, _| rng.random_range(0..5) as f64);
    let mu = 1.7;
    let arg = pis_gradient_arg(&CoeffField::from_image(ct.clone()), &g, &op, mu).unwrap();
    for (k, v) in pixels(&arg).into_iter().enumerate() {
        let c = ct.as_slice()[k];
        let expect = c + (g.as_slice()[k] - c) / (mu * c);
        assert!((v - expect).abs() < 1e-12);
    }
    let far = pis_gradient_arg(&CoeffField::from_image(ct.clone()), &g, &op, 1e12).unwrap();
    let gap = far.sub(&CoeffField::from_image(ct)).unwrap().norm();
    assert!(gap < 1e-9);
}

#[test]
fn both_residual_forms_agree() {
    // c + A*[(g − Ac)/Ac]/μ  versus  c − A*[1 − g/Ac]/μ
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let haar = TiHaar::new(8, 8, 2).unwrap();
    let conv = Convolution::new(rational_kernel(1).unwrap(), 8, 8).unwrap();
    let op = augment_background(compose(conv, haar).unwrap()).unwrap();
    let c = CoeffField::zeros(&op.domain())
        .map(|_| rng.random_range(-0.2..0.2))
        .with_background(Some(4.0));
    let g = ImageGrid::from_fn(8, 8, |_, _| rng.random_range(0..9) as f64);
    let mu = 3.0;
    let a = pis_gradient_arg(&c, &g, &op, mu).unwrap();
    let b = c.add_scaled(&smooth_gradient(&c, &g, &op).unwrap(), -1.0 / mu).unwrap();
    let d = a.sub(&b).unwrap().norm();
    assert!(d <= 1e-12 * a.norm(), "{d}");
}

#[test]
fn smooth_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let conv = Convolution::new(rational_kernel(1).unwrap(), 8, 8).unwrap();
    let op = augment_background(conv).unwrap();
    for _ in 0..10 {
        let c = CoeffField::from_image(random_image(8, 8, &mut rng, 1.0, 5.0))
            .with_background(Some(rng.random_range(1.0..3.0)));
        let g = ImageGrid::from_fn(8, 8, |_, _| rng.random_range(0..12) as f64);
        let d = CoeffField::zeros(&op.domain()).map(|_| rng.random_range(-1.0..1.0));
        let d = d.scale(1.0 / d.norm());
        let h = 1e-5;
        let plus = smooth_objective(&c.add_scaled(&d, h).unwrap(), &g, &op).unwrap();
        let minus = smooth_objective(&c.add_scaled(&d, -h).unwrap(), &g, &op).unwrap();
        let fd = (plus - minus) / (2.0 * h);
        let an = coeff_inner_product(&smooth_gradient(&c, &g, &op).unwrap(), &d).unwrap();
        assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "{fd} vs {an}");
    }
}

// ----------------------------------------------------------- surrogate gap

#[test]
fn surrogate_gap_vanishes_at_anchor() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let op = Convolution::new(rational_kernel(1).unwrap(), 6, 6).unwrap();
    let c = CoeffField::from_image(random_image(6, 6, &mut rng, 0.5, 2.0));
    let g = ImageGrid::from_fn(6, 6, |_, _| rng.random_range(0..5) as f64);
    assert_eq!(surrogate_gap(&c, &c, &g, &op).unwrap(), 0.0);
}

#[test]
fn surrogate_gap_matches_coefficient_space_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let k = rational_kernel(1).unwrap();
    let op = Convolution::new(k.clone(), 6, 7).unwrap();
    let ct = random_image(6, 7, &mut rng, 0.5, 2.0);
    let cn = ct.map(|v| v * 1.3 + 0.1);
    let g = ImageGrid::from_fn(6, 7, |_, _| rng.random_range(0..5) as f64);
    let gap = surrogate_gap(
        &CoeffField::from_image(cn.clone()),
        &CoeffField::from_image(ct.clone()),
        &g,
        &op,
    )
    .unwrap();
    let at = direct_conv(&ct, &k, false);
    let an = direct_conv(&cn, &k, false);
    let back = direct_conv(&g.zip_map(&at, |a, b| a / b).unwrap(), &k, true);
    let mut lin = 0.0;
    let mut log = 0.0;
    for i in 0..6 {
        for j in 0..7 {
            lin += back.get(i, j) * (cn.get(i, j) - ct.get(i, j));
            log += g.get(i, j) * (an.get(i, j) / at.get(i, j)).ln();
        }
    }
    let oracle = lin - log;
    assert!((gap - oracle).abs() <= 1e-10 * oracle.abs(), "{gap} vs {oracle}");
}

#[test]
fn surrogate_gap_errors_outside_domain() {
    let op = Identity::new(1, 2);
    let g = ImageGrid::new(1, 2, vec![1.0, 1.0]).unwrap();
    assert!(surrogate_gap(&row(&[1.0, -1.0]), &row(&[1.0, 1.0]), &g, &op).is_err());
}

// ------------------------------------------------------------------ find_mu

fn random_instance(rng: &mut ChaCha8Rng) -> (ImageGrid, CoeffField, Convolution) {
    let op = Convolution::new(rational_kernel(1).unwrap(), 6, 6).unwrap();
    let truth = random_image(6, 6, rng, 0.5, 8.0);
    let lam = op.convolve(&truth).unwrap();
    let g = ImageGrid::from_fn(6, 6, |r, c| {
        let l = lam.get(r, c);
        (l + rng.random_range(-1.0f64..1.0) * l.sqrt()).max(0.0).round()
    });
    let c = CoeffField::from_image(random_image(6, 6, rng, 0.5, 4.0));
    (g, c, op)
}

#[test]
fn find_mu_postcondition_and_minimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = MuSearchConfig::default();
    for k in 0..30 {
        let (g, c, op) = random_instance(&mut rng);
        let prior = PriorConfig::from_gamma(0.05 * k as f64).unwrap();
        let step = find_mu(&c, &g, &op, &prior, &cfg).unwrap();
        assert!(step.mu * step.delta_sq >= 2.0 * step.gap);
        let gap = surrogate_gap(&step.c_next, &c, &g, &op).unwrap();
        assert!((gap - step.gap).abs() <= 1e-9 * gap.abs().max(1e-12));
        if step.delta_sq > 0.0 {
            // one α-step smaller must fail the test (or leave the domain)
            let smaller = step.mu * cfg.alpha;
            let arg = pis_gradient_arg(&c, &g, &op, smaller).unwrap();
            let cand = shrink(&arg, &prior, smaller);
            let d = cand.sub(&c).unwrap().norm_sq();
            if let Ok(f) = surrogate_gap(&cand, &c, &g, &op) {
                assert!(smaller * d < 2.0 * f, "alpha*mu still feasible");
            }
        }
    }
}

#[test]
fn find_mu_one_pixel_grid_oracle() {
    let op = Identity::new(1, 1);
    let cfg = MuSearchConfig::default();
    for &(c0, g0, gamma) in &[(1.0, 5.0, 0.0), (3.0, 1.0, 0.2), (0.5, 2.0, 0.1), (2.0, 0.5, 0.0), (0.1, 40.0, 0.5)] {
        let c = row(&[c0]);
        let g = ImageGrid::new(1, 1, vec![g0]).unwrap();
        let prior = PriorConfig::from_gamma(gamma).unwrap();
        let step = find_mu(&c, &g, &op, &prior, &cfg).unwrap();
        // scalar feasibility of μ, independent of the library
        let feasible = |mu: f64| {
            let arg = c0 + (g0 / c0 - 1.0) / mu;
            let tau = gamma / mu;
            let x = if arg.abs() >= tau { (arg.abs() - tau) * arg.signum() } else { 0.0 };
            if g0 > 0.0 && x <= 0.0 {
                return false;
            }
            let f = if g0 > 0.0 { g0 / c0 * (x - c0) - g0 * (x / c0).ln() } else { 0.0 };
            mu * (x - c0) * (x - c0) >= 2.0 * f
        };
        let grid: Vec<f64> = (0..200_000).map(|k| 1e-4 * 1.0001f64.powi(k)).collect();
        let min_feasible = grid.iter().copied().find(|&m| feasible(m)).unwrap();
        assert!(feasible(step.mu));
        assert!(
            step.mu >= min_feasible * 0.9999 && step.mu <= min_feasible / cfg.alpha * 1.0001,
            "c={c0} g={g0}: mu={} min={min_feasible}",
            step.mu
        );
    }
}

#[test]
fn find_mu_without_data_is_unbounded() {
    // no counts: E(c) = c has no minimiser and every shrinking ν passes
    let op = Identity::new(1, 1);
    let g = ImageGrid::new(1, 1, vec![0.0]).unwrap();
    let p = PriorConfig::from_gamma(0.0).unwrap();
    let r = find_mu(&row(&[2.0]), &g, &op, &p, &MuSearchConfig::default());
    assert!(matches!(r, Err(Error::MuSearchExhausted(_))));
}

#[test]
fn find_mu_rejects_bad_config() {
    let op = Identity::new(1, 1);
    let g = ImageGrid::new(1, 1, vec![1.0]).unwrap();
    let p = PriorConfig::from_gamma(0.0).unwrap();
    let bad = MuSearchConfig {
        alpha: 1.0,
        ..MuSearchConfig::default()
    };
    assert!(find_mu(&row(&[1.0]), &g, &op, &p, &bad).is_err());
}

// ---------------------------------------------------------------- pis_solve

#[test]
fn pis_four_coefficient_grid_oracle() {
    let op = Identity::new(1, 4);
    let g = ImageGrid::new(1, 4, vec![3.0, 1.0, 7.0, 0.5]).unwrap();
    let gamma = 0.25;
    let prior = PriorConfig::from_gamma(gamma).unwrap();
    let stop = StopRule {
        rel_tol: 1e-13,
        max_iter: 20_000,
    };
    let sol = pis_solve(
        &g,
        &Problem::new(&op, &op),
        &prior,
        &StepRule::default(),
        &stop,
        &row(&[1.0; 4]),
    )
    .unwrap();
    for (k, &v) in pixels(&sol.coeffs).iter().enumerate() {
        let gk = g.as_slice()[k];
        let x = grid_argmin(|x| x - gk * x.ln() + gamma * x.abs(), 1e-4, 10.0, 1e-4);
        assert!((v - x).abs() < 1e-3, "coefficient {k}: {v} vs {x}");
    }
    assert!(sol.trace.is_monotone(1e-9));
}

#[test]
fn pis_noiseless_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let conv = Convolution::new(rational_kernel(1).unwrap(), 8, 8).unwrap();
    let ident = Identity::new(8, 8);
    let star = CoeffField::from_image(random_image(8, 8, &mut rng, 1.0, 10.0));
    let g = conv.apply(&star).unwrap();
    let prior = PriorConfig::from_gamma(0.0).unwrap();
    let e_star = objective(&star, &g, &conv, &prior).unwrap();
    let c0 = CoeffField::from_image(ImageGrid::filled(8, 8, g.mean()));
    let sol = pis_solve(
        &g,
        &Problem::new(&conv, &ident),
        &prior,
        &StepRule::default(),
        &StopRule::iterations(300),
        &c0,
    )
    .unwrap();
    let objs = sol.trace.objectives();
    assert!(sol.trace.is_monotone(1e-9));
    assert!(objs.last().unwrap() - e_star < 1e-3 * (objs[0] - e_star));
    assert!(*objs.last().unwrap() >= e_star - 1e-9);
    // data residual shrinks monotonically over the first iterations
    let mut c = c0;
    let mut prev = f64::INFINITY;
    for _ in 0..5 {
        let r = g.zip_map(&conv.apply(&c).unwrap(), |a, b| a - b).unwrap().norm();
        assert!(r < prev);
        prev = r;
        c = find_mu(&c, &g, &conv, &prior, &MuSearchConfig::default()).unwrap().c_next;
    }
}

#[test]
fn pis_monotone_on_framed_deconvolution() {
    let (h, w) = (16, 16);
    let conv = Convolution::new(rational_kernel(2).unwrap(), h, w).unwrap();
    let haar = TiHaar::new(h, w, 2).unwrap();
    let forward = augment_background(compose(&conv, haar.clone()).unwrap()).unwrap();
    let synthesis = augment_background(haar).unwrap();
    let truth = ImageGrid::from_fn(h, w, |r, c| if (4..12).contains(&r) && (5..10).contains(&c) { 40.0 } else { 0.0 });
    let lam = conv.convolve(&truth).unwrap().add_scalar(5.0);
    let g = crate::phantoms::poisson_sample(&lam, 3).unwrap().to_image();
    let c0 = default_initial_coeffs(&g, &synthesis).unwrap();
    let sol = pis_solve(
        &g,
        &Problem::new(&forward, &synthesis).with_truth(&truth),
        &PriorConfig::from_gamma(0.05).unwrap(),
        &StepRule::default(),
        &StopRule::iterations(100),
        &c0,
    )
    .unwrap();
    assert_eq!(sol.trace.records.len(), 101);
    assert!(sol.trace.is_monotone(1e-9), "increase at {:?}", sol.trace.first_increase(1e-9));
    assert!(sol.trace.records.iter().all(|r| r.nmse.is_some()));
    assert_eq!(sol.trace.termination, Some(Termination::MaxIterations));
    let first = sol.trace.records[0].nmse.unwrap();
    assert!(sol.trace.records.last().unwrap().nmse.unwrap() < first);
}

#[test]
fn pis_fixed_mu_domain_error_keeps_trace() {
    let op = Identity::new(1, 3);
    let g = ImageGrid::new(1, 3, vec![0.0, 4.0, 4.0]).unwrap();
    // tiny μ drives the first pixel far negative, but it has no data; the
    // others overshoot upward. Then g = 0 pixel pushes everything negative.
    let sol = pis_solve(
        &g,
        &Problem::new(&op, &op),
        &PriorConfig::from_gamma(0.0).unwrap(),
        &StepRule::Fixed(0.01),
        &StopRule::iterations(5),
        &row(&[1.0, 1.0, 1.0]),
    );
    match sol {
        Err(fail) => {
            assert!(matches!(fail.error, Error::Domain { .. }));
            assert!(!fail.trace.records.is_empty());
        }
        Ok(s) => panic!("expected a domain error, got {:?}", s.trace.termination),
    }
}

#[test]
fn pis_validates_shapes() {
    let op = Identity::new(2, 2);
    let g = ImageGrid::filled(2, 3, 1.0);
    let r = pis_solve(
        &g,
        &Problem::new(&op, &op),
        &PriorConfig::from_gamma(0.0).unwrap(),
        &StepRule::default(),
        &StopRule::default(),
        &CoeffField::from_image(ImageGrid::filled(2, 2, 1.0)),
    );
    assert!(r.is_err());
}

#[test]
fn default_init_is_in_domain() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g = ImageGrid::from_fn(16, 16, |_, _| rng.random_range(0..20) as f64);
    let haar = augment_background(TiHaar::new(16, 16, 3).unwrap()).unwrap();
    let c0 = default_initial_coeffs(&g, &haar).unwrap();
    assert_eq!(c0.background(), Some(g.median()));
    let f0 = haar.apply(&c0).unwrap();
    assert!(f0.min() > 0.0);
    let plain = default_initial_coeffs(&g, &Identity::new(16, 16)).unwrap();
    assert_eq!(plain.bands()[0].0, BandId::Pixels);
    assert!(pixels(&plain).iter().all(|&v| v > 0.0));
}

// ---------------------------------------------------------------------- GIS

#[test]
fn gis_zero_data_is_a_fixed_point() {
    let op = Identity::new(4, 4);
    let g = ImageGrid::zeros(4, 4);
    let c0 = CoeffField::from_image(ImageGrid::zeros(4, 4));
    let cfg = GisConfig {
        prior: PriorConfig::from_gamma(0.1).unwrap(),
        mu: 1.1,
        lambda_max: Some(1.0),
    };
    let sol = gis_solve(&g, &Problem::new(&op, &op), &cfg, &StopRule::default(), &c0).unwrap();
    assert_eq!(sol.trace.termination, Some(Termination::FixedPoint));
    assert_eq!(sol.trace.iterations(), 1);
    assert_eq!(sol.coeffs, c0);
}

#[test]
fn gis_identity_first_step_and_contraction() {
    let op = Identity::new(1, 3);
    let g = ImageGrid::new(1, 3, vec![2.0, -1.0, 5.0]).unwrap();
    let c0 = row(&[0.0, 0.0, 1.0]);
    let mu = 2.5;
    let cfg = GisConfig {
        prior: PriorConfig::from_gamma(0.0).unwrap(),
        mu,
        lambda_max: Some(1.0),
    };
    let one = gis_solve(&g, &Problem::new(&op, &op), &cfg, &StopRule::iterations(1), &c0).unwrap();
    for (k, v) in pixels(&one.coeffs).into_iter().enumerate() {
        let c = pixels(&c0)[k];
        assert!((v - (c + (g.as_slice()[k] - c) / mu)).abs() < 1e-15);
    }
    let many = gis_solve(&g, &Problem::new(&op, &op), &cfg, &StopRule::iterations(10), &c0).unwrap();
    let rate = (1.0 - 1.0 / mu).abs();
    for (k, v) in pixels(&many.coeffs).into_iter().enumerate() {
        let err0 = (pixels(&c0)[k] - g.as_slice()[k]).abs();
        assert!(((v - g.as_slice()[k]).abs() - err0 * rate.powi(10)).abs() < 1e-12);
    }
    assert!(many.trace.warnings.is_empty());
}

#[test]
fn gis_warns_below_lipschitz_bound() {
    let op = Identity::new(2, 2);
    let g = ImageGrid::filled(2, 2, 1.0);
    let cfg = GisConfig {
        prior: PriorConfig::from_gamma(0.0).unwrap(),
        mu: 0.9,
        lambda_max: None,
    };
    let c0 = CoeffField::from_image(ImageGrid::zeros(2, 2));
    let sol = gis_solve(&g, &Problem::new(&op, &op), &cfg, &StopRule::iterations(2), &c0).unwrap();
    assert_eq!(sol.trace.warnings.len(), 1);
}

#[test]
fn gis_four_coefficient_grid_oracle() {
    let m = vec![
        1.0, 0.3, 0.0, 0.1, //
        0.2, 1.0, 0.4, 0.0, //
        0.0, 0.1, 0.8, 0.3, //
        0.1, 0.0, 0.2, 1.2,
    ];
    let op = Dense { n: 4, m: m.clone() };
    let g = ImageGrid::new(1, 4, vec![1.5, -0.7, 2.0, 0.05]).unwrap();
    let gamma = 0.2;
    let (mu, lambda) = gis_step_size(&op, 1.1).unwrap();
    let cfg = GisConfig {
        prior: PriorConfig::from_gamma(gamma).unwrap(),
        mu,
        lambda_max: Some(lambda),
    };
    let stop = StopRule {
        rel_tol: 0.0,
        max_iter: 5000,
    };
    let sol = gis_solve(&g, &Problem::new(&op, &op), &cfg, &stop, &row(&[0.0; 4])).unwrap();
    // coordinate descent with exact grid line searches
    let energy = |x: &[f64]| {
        let mut e = 0.0;
        for i in 0..4 {
            let ax: f64 = (0..4).map(|j| m[i * 4 + j] * x[j]).sum();
            e += 0.5 * (g.as_slice()[i] - ax).powi(2);
        }
        e + gamma * x.iter().map(|v| v.abs()).sum::<f64>()
    };
    let mut x = [0.0; 4];
    for _ in 0..40 {
        for k in 0..4 {
            let coarse = grid_argmin(
                |v| {
                    let mut y = x;
                    y[k] = v;
                    energy(&y)
                },
                -5.0,
                5.0,
                1e-3,
            );
            x[k] = grid_argmin(
                |v| {
                    let mut y = x;
                    y[k] = v;
                    energy(&y)
                },
                coarse - 2e-3,
                coarse + 2e-3,
                1e-5,
            );
        }
    }
    for (k, v) in pixels(&sol.coeffs).into_iter().enumerate() {
        assert!((v - x[k]).abs() < 1e-3, "coefficient {k}: {v} vs {}", x[k]);
    }
    let e = gis_objective(&sol.coeffs, &g, &op, &cfg.prior).unwrap();
    assert!(e <= energy(&x) + 1e-8);
}

// ------------------------------------------------------------------- RL/TV

fn rl_oracle(g: &ImageGrid, k: &Kernel, f0: &ImageGrid, iters: usize) -> ImageGrid {
    let mut f = f0.clone();
    for _ in 0..iters {
        let hf = direct_conv(&f, k, false);
        let ratio = g.zip_map(&hf, |a, b| if a > 0.0 { a / b } else { 0.0 }).unwrap();
        let back = direct_conv(&ratio, k, true);
        f = f.zip_map(&back, |a, b| a * b).unwrap();
    }
    f
}

#[test]
fn rl_noiseless_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = Convolution::new(rational_kernel(2).unwrap(), 16, 16).unwrap();
    let star = random_image(16, 16, &mut rng, 1.0, 50.0);
    let g = h.convolve(&star).unwrap();
    let next = rl_step(&g, &h, &star, 0.0).unwrap();
    let d = next.zip_map(&star, |a, b| (a - b).abs()).unwrap().max();
    assert!(d <= 1e-10 * star.max(), "{d}");
}

#[test]
fn rl_matches_scalar_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let k = Kernel::new(1, (1..=9).map(f64::from).collect()).unwrap();
    let h = Convolution::new(k.clone(), 8, 8).unwrap();
    let g = ImageGrid::from_fn(8, 8, |_, _| rng.random_range(0..30) as f64);
    let f0 = random_image(8, 8, &mut rng, 1.0, 10.0);
    let sol = rl_solve(&g, &h, &f0, 0.0, &StopRule::iterations(3), None).unwrap();
    let oracle = rl_oracle(&g, &k, &f0, 3);
    for (a, b) in sol.image.as_slice().iter().zip(oracle.as_slice()) {
        assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn rl_conserves_flux() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let h = Convolution::new(rational_kernel(2).unwrap(), 16, 16).unwrap();
    let g = ImageGrid::from_fn(16, 16, |_, _| rng.random_range(0..40) as f64);
    let total = g.sum();
    let mut f = ImageGrid::filled(16, 16, g.mean());
    for _ in 0..50 {
        f = rl_step(&g, &h, &f, 0.0).unwrap();
        assert!((f.sum() - total).abs() <= 1e-8 * total);
        assert!(f.min() >= 0.0);
    }
}

#[test]
fn rl_tracks_nmse_optimal_iterate() {
    let h = Convolution::new(rational_kernel(1).unwrap(), 16, 16).unwrap();
    let truth = ImageGrid::from_fn(16, 16, |r, c| if (r / 4 + c / 4) % 2 == 0 { 30.0 } else { 5.0 });
    let g = crate::phantoms::poisson_sample(&h.convolve(&truth).unwrap(), 9).unwrap().to_image();
    let f0 = ImageGrid::filled(16, 16, g.mean());
    let sol = rl_solve(&g, &h, &f0, 0.0, &StopRule::iterations(40), Some(&truth)).unwrap();
    let (t, img) = sol.best.unwrap();
    let best = sol.trace.best_nmse().unwrap();
    assert_eq!(best.iter, t);
    assert!((crate::metrics::nmse(&truth, &img).unwrap() - best.nmse.unwrap()).abs() < 1e-15);
}

#[test]
fn rl_rejects_nonpositive_start() {
    let h = Convolution::new(rational_kernel(1).unwrap(), 4, 4).unwrap();
    let g = ImageGrid::filled(4, 4, 1.0);
    let f0 = ImageGrid::zeros(4, 4);
    let err = rl_solve(&g, &h, &f0, 0.0, &StopRule::iterations(1), None).unwrap_err();
    assert!(matches!(err.error, Error::Domain { .. }));
}

#[test]
fn rltv_zero_weight_is_rl() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let h = Convolution::new(rational_kernel(2).unwrap(), 16, 16).unwrap();
    let g = ImageGrid::from_fn(16, 16, |_, _| rng.random_range(0..40) as f64);
    let f0 = ImageGrid::filled(16, 16, g.mean());
    let a = rl_solve(&g, &h, &f0, 0.0, &StopRule::iterations(20), None).unwrap();
    let b = rltv_solve(&g, &h, &f0, 0.0, 0.0, &StopRule::iterations(20), None).unwrap();
    assert_eq!(a.image, b.image);
    for (x, y) in a.trace.records.iter().zip(&b.trace.records) {
        assert!((x.objective - y.objective).abs() <= 1e-12 * x.objective.abs());
    }
}

#[test]
fn rltv_one_step_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let k = rational_kernel(1).unwrap();
    let h = Convolution::new(k.clone(), 8, 8).unwrap();
    let g = ImageGrid::from_fn(8, 8, |_, _| rng.random_range(0..30) as f64);
    let f0 = random_image(8, 8, &mut rng, 5.0, 10.0);
    let gamma = 0.01;
    let got = rltv_step(&g, &h, &f0, gamma, 0.0).unwrap();
    let rl = rl_oracle(&g, &k, &f0, 1);
    let n = 8usize;
    let at = |r: usize, c: usize| f0.get(r % n, c % n);
    for r in 0..n {
        for c in 0..n {
            let unit = |r: usize, c: usize| {
                let fx = at(r, c + 1) - at(r, c);
                let fy = at(r + 1, c) - at(r, c);
                let nrm = (fx * fx + fy * fy + 1e-16).sqrt();
                (fx / nrm, fy / nrm)
            };
            let (px, py) = unit(r, c);
            let (pxl, _) = unit(r, (c + n - 1) % n);
            let (_, pyu) = unit((r + n - 1) % n, c);
            let div = (px - pxl) + (py - pyu);
            let expect = rl.get(r, c) / (1.0 - gamma * div);
            assert!((got.get(r, c) - expect).abs() <= 1e-10 * expect.abs());
        }
    }
}

#[test]
fn rltv_denominator_error_names_pixel() {
    let h = Convolution::new(rational_kernel(1).unwrap(), 8, 8).unwrap();
    let mut data = vec![1.0; 64];
    data[3 * 8 + 4] = 100.0;
    let f0 = ImageGrid::new(8, 8, data).unwrap();
    let g = ImageGrid::filled(8, 8, 3.0);
    let err = rltv_solve(&g, &h, &f0, 10.0, 0.0, &StopRule::iterations(1), None).unwrap_err();
    assert!(matches!(err.error, Error::Domain { .. }), "{}", err.error);
    assert!(err.to_string().contains("TV denominator"));
}

#[test]
fn curvature_properties() {
    let c = curvature(&ImageGrid::filled(8, 8, 3.0), 1e-8);
    assert!(c.as_slice().iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let f = random_image(12, 10, &mut rng, 0.0, 5.0);
    assert!(curvature(&f, 1e-8).sum().abs() < 1e-10);

    let ramp = ImageGrid::from_fn(10, 10, |r, _| r as f64);
    let k = curvature(&ramp, 1e-8);
    for r in 1..9 {
        for c in 0..10 {
            assert!(k.get(r, c).abs() < 1e-14, "({r},{c}) = {}", k.get(r, c));
        }
    }
    assert!(k.get(0, 0).abs() > 0.5);
}
