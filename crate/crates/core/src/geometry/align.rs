use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use super::{GeometryError, Sim3};

/// How an estimate is aligned to a reference before residuals are taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AlignmentMode {
    None,
    Se3,
    Sim3,
}

/// Closed-form least-squares transform taking `src[i]` onto `dst[i]`.
///
/// With `with_scale == false` the returned scale is exactly 1.
pub fn umeyama_align(src: &[Vector3<f64>], dst: &[Vector3<f64>], with_scale: bool) -> Result<Sim3, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::SizeMismatch {
            src: src.len(),
            dst: dst.len(),
        });
    }
    let n = src.len();
    if n < 3 {
        return Err(GeometryError::TooFewCorrespondences { found: n, needed: 3 });
    }
    let inv_n = 1.0 / n as f64;
    let mu_src = src.iter().fold(Vector3::zeros(), |a, p| a + p) * inv_n;
    let mu_dst = dst.iter().fold(Vector3::zeros(), |a, p| a + p) * inv_n;

    let mut cov = Matrix3::zeros();
    let mut var_src = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = s - mu_src;
        cov += (d - mu_dst) * sc.transpose();
        var_src += sc.norm_squared();
    }
    cov *= inv_n;
    var_src *= inv_n;
    if !(var_src > 1e-24) {
        return Err(GeometryError::RankDeficient("source points coincide"));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::RankDeficient("SVD failed")),
    };
    let mut sv = [svd.singular_values[0], svd.singular_values[1], svd.singular_values[2]];
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[1] > 1e-12 * sv[0]) {
        return Err(GeometryError::RankDeficient("correspondences are collinear"));
    }

    let mut s_diag = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s_diag[(2, 2)] = -1.0;
    }
    let r = u * s_diag * v_t;
    let scale = if with_scale {
        (Matrix3::from_diagonal(&svd.singular_values) * s_diag).trace() / var_src
    } else {
        1.0
    };
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = mu_dst - rotation * mu_src * scale;
    Sim3::new(rotation, translation, scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tangent7;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)))
            .collect()
    }

    #[test]
    fn identical_sets_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_points(&mut rng, 20);
        let t = umeyama_align(&p, &p, true).unwrap();
        assert!(t.log().unwrap().norm() < 1e-12);
    }

    #[test]
    fn recovers_known_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = Sim3::exp(&Tangent7::new(
            Vector3::new(1.0, -0.5, 2.0),
            Vector3::new(0.4, -1.1, 0.3),
            0.8,
        ));
        let src = random_points(&mut rng, 30);
        let dst: Vec<_> = src.iter().map(|p| truth.transform_point(p)).collect();
        let est = umeyama_align(&src, &dst, true).unwrap();
        assert!(est.between(&truth).log().unwrap().norm() < 1e-9);

        let rigid = Sim3::exp(&Tangent7::new(
            Vector3::new(1.0, -0.5, 2.0),
            Vector3::new(0.4, -1.1, 0.3),
            0.0,
        ));
        let dst: Vec<_> = src.iter().map(|p| rigid.transform_point(p)).collect();
        let est = umeyama_align(&src, &dst, false).unwrap();
        assert_eq!(est.scale(), 1.0);
        assert!(est.between(&rigid).log().unwrap().norm() < 1e-9);
    }

    #[test]
    fn noisy_residual_within_two_sigma() {
        // Monte-Carlo: per-axis noise sigma, RMS residual norm stays below
        // 2 sigma (its expectation is about sqrt(3) sigma).
        let sigma = 0.01;
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let truth = Sim3::exp(&Tangent7::new(
            Vector3::new(0.2, 0.1, -0.3),
            Vector3::new(0.1, 0.5, -0.2),
            -0.3,
        ));
        for _ in 0..20 {
            let src = random_points(&mut rng, 200);
            let dst: Vec<_> = src
                .iter()
                .map(|p| truth.transform_point(p) + Vector3::from_fn(|_, _| noise.sample(&mut rng)))
                .collect();
            let est = umeyama_align(&src, &dst, true).unwrap();
            let rmse = (src
                .iter()
                .zip(&dst)
                .map(|(s, d)| (d - est.transform_point(s)).norm_squared())
                .sum::<f64>()
                / src.len() as f64)
                .sqrt();
            assert!(rmse <= 2.0 * sigma, "rmse {rmse}");
        }
    }

    #[test]
    fn collinear_is_rank_deficient() {
        let src: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            umeyama_align(&src, &src, true),
            Err(GeometryError::RankDeficient(_))
        ));
        let same = alloc::vec![Vector3::new(1.0, 1.0, 1.0); 5];
        assert!(matches!(
            umeyama_align(&same, &same, true),
            Err(GeometryError::RankDeficient(_))
        ));
    }

    #[test]
    fn cardinality_checks() {
        let a = alloc::vec![Vector3::zeros(); 3];
        let b = alloc::vec![Vector3::zeros(); 4];
        assert!(matches!(
            umeyama_align(&a, &b, true),
            Err(GeometryError::SizeMismatch { .. })
        ));
        assert!(matches!(
            umeyama_align(&a[..2], &a[..2], true),
            Err(GeometryError::TooFewCorrespondences { .. })
        ));
    }
}
