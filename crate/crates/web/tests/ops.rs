use llt_web::{chi2_series_values, gibbs_spectrum_values, llt_curve_rows};

/// χ²(N(m, v) ‖ N(0, s)) for v < 2s.
fn chi2_normal(m: f64, v: f64, s: f64) -> f64 {
    s / (v * (2.0 * s - v)).sqrt() * (m * m / (2.0 * s - v)).exp() - 1.0
}

#[test]
fn chi2_series_follows_the_conjugate_update() {
    let (alpha, tau) = (0.5, 2usize);
    let t = tau as f64;
    let (mut m, mut v) = (1.5, 1.2);
    let out = chi2_series_values(alpha, tau, m, v, 12).unwrap();
    assert_eq!(out.len(), 26);
    for (k, &chi2) in out[..13].iter().enumerate() {
        let want = chi2_normal(m, v, 1.0 / alpha);
        assert!((chi2 - want).abs() <= 1e-10 * want.max(1e-300), "k={k}: {chi2} vs {want}");
        // y | x ∼ N(τx, τ), then x | y ∼ N(y/(α+τ), 1/(α+τ))
        m *= t / (alpha + t);
        v = (t * t * v + t) / (alpha + t).powi(2) + 1.0 / (alpha + t);
    }
    for k in 0..13 {
        assert!(out[k] <= out[13 + k] * (1.0 + 1e-12));
    }
}

#[test]
fn chi2_series_rejects_oversized_requests() {
    assert!(chi2_series_values(1.0, 1, 0.0, 1.0, 10_000).is_err());
    assert!(chi2_series_values(1.0, 0, 0.0, 1.0, 5).is_err());
    assert!(chi2_series_values(-1.0, 1, 0.0, 1.0, 5).is_err());
}

#[test]
fn gaussian_curve_is_half_square_on_both_sides() {
    let rows = llt_curve_rows("gaussian", 3, -2.0, 2.0, 9).unwrap();
    for r in rows.chunks(3) {
        let want = 0.5 * r[0] * r[0];
        assert!((r[1] - want).abs() < 1e-12 && (r[2] - want).abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn laplace_curve_blows_up_at_the_unit_interval() {
    let rows = llt_curve_rows("laplace", 2, -1.2, 1.2, 13).unwrap();
    for r in rows.chunks(3) {
        if r[0].abs() < 0.95 {
            let want = -(1.0 - r[0] * r[0]).ln();
            assert!((r[1] - want).abs() < 1e-10, "{r:?}");
            assert!((r[2] - want).abs() < 1e-6, "{r:?}");
        } else if r[0].abs() > 1.0 {
            assert!(r[1].is_infinite() && r[2].is_infinite(), "{r:?}");
        }
    }
    assert!(llt_curve_rows("cauchy", 1, 0.0, 1.0, 5).is_err());
    assert!(llt_curve_rows("quartic", 3, 0.0, 1.0, 5).is_err());
    assert!(llt_curve_rows("gaussian", 1, 1.0, 0.0, 5).is_err());
}

#[test]
fn gibbs_spectrum_of_symmetric_two_by_two() {
    let (p, q) = (0.35, 0.15);
    let r = gibbs_spectrum_values(&[p, q, q, p], 2, 2).unwrap();
    let want = (2.0 * (p - q)).powi(2);
    assert!((r[0] - want).abs() < 1e-12, "{r:?}");
    assert!((r[1] - (1.0 - want)).abs() < 1e-12);
    assert!((r[2] - want).abs() < 1e-10 && (r[3] - want).abs() < 1e-10);

    let unnormalized = gibbs_spectrum_values(&[7.0, 3.0, 3.0, 7.0], 2, 2).unwrap();
    assert!((unnormalized[0] - 0.16).abs() < 1e-12);

    let reducible = gibbs_spectrum_values(&[0.5, 0.0, 0.0, 0.5], 2, 2).unwrap();
    assert_eq!(reducible[..2], [1.0, 0.0]);
    let product = gibbs_spectrum_values(&[0.08, 0.12, 0.32, 0.48], 2, 2).unwrap();
    assert!(product[0].abs() < 1e-12);
    assert!(gibbs_spectrum_values(&[0.5, 0.5, 0.0], 2, 2).is_err());
    assert!(gibbs_spectrum_values(&[0.0; 4], 2, 2).is_err());
}
