use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{estimate_homography, GeometryError, Homography, PointPair};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub tolerance_px: f64,
    pub max_iterations: usize,
    /// Stop sampling once this fraction of pairs are inliers.
    pub stop_inlier_ratio: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            tolerance_px: 5.0,
            max_iterations: 500,
            stop_inlier_ratio: 0.9,
            seed: 0x5eed_cafe,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    /// Indices into the input slice, ascending.
    pub inliers: Vec<usize>,
    pub homography: Homography,
}

/// RANSAC over 4-point minimal samples. Inliers are pairs whose forward
/// reprojection error is within the tolerance; the returned homography is
/// refit on all inliers of the best sample.
///
/// Pairs are put in a canonical order before sampling, so the inlier set does
/// not depend on the input order for a given seed.
pub fn ransac_homography_filter(
    pairs: &[PointPair],
    config: &RansacConfig,
) -> Result<RansacResult, GeometryError> {
    if pairs.len() < 4 {
        return Err(GeometryError::TooFewPoints {
            needed: 4,
            got: pairs.len(),
        });
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&pairs[a], &pairs[b]);
        p.world
            .x
            .total_cmp(&q.world.x)
            .then(p.world.y.total_cmp(&q.world.y))
            .then(p.image.x.total_cmp(&q.image.x))
            .then(p.image.y.total_cmp(&q.image.y))
    });
    let canonical: Vec<PointPair> = order.iter().map(|&i| pairs[i]).collect();

    let inliers_of = |h: &Homography| -> (Vec<usize>, f64) {
        let mut idx = Vec::new();
        let mut err = 0.0;
        for (i, p) in canonical.iter().enumerate() {
            let e = h.transfer_error(p);
            if e <= config.tolerance_px {
                idx.push(i);
                err += e;
            }
        }
        (idx, err)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(Vec<usize>, f64)> = None;
    let n = canonical.len();
    for _ in 0..config.max_iterations {
        let picked = sample(&mut rng, n, 4);
        let minimal: Vec<PointPair> = picked.iter().map(|i| canonical[i]).collect();
        let Ok(h) = estimate_homography(&minimal) else {
            continue;
        };
        let (idx, err) = inliers_of(&h);
        let better = match &best {
            None => true,
            Some((b, berr)) => idx.len() > b.len() || (idx.len() == b.len() && err < *berr),
        };
        if better {
            best = Some((idx, err));
        }
        if let Some((b, _)) = &best {
            if b.len() as f64 >= config.stop_inlier_ratio * n as f64 {
                break;
            }
        }
    }

    let (idx, _) = best.unwrap_or_default();
    if idx.len() < 4 {
        return Err(GeometryError::InsufficientInliers {
            needed: 4,
            found: idx.len(),
        });
    }
    let inlier_pairs: Vec<PointPair> = idx.iter().map(|&i| canonical[i]).collect();
    let homography = estimate_homography(&inlier_pairs)?;
    let mut inliers: Vec<usize> = idx.iter().map(|&i| order[i]).collect();
    inliers.sort_unstable();
    Ok(RansacResult { inliers, homography })
}
