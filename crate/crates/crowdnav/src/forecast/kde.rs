//! Weighted 2D Gaussian kernel density estimation with a diagonal
//! Scott's-rule bandwidth and a floor for degenerate sample sets.

use crate::geom::Vec2;
use rand::RngExt;
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone)]
pub struct Kde2d {
    points: Vec<Vec2>,
    /// Normalized weights.
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    pub bandwidth: Vec2,
}

impl Kde2d {
    /// Fits a KDE to weighted points. Uniform weights may be passed as an
    /// empty slice. Bandwidths follow Scott's rule per dimension with the
    /// effective sample size, floored at `bw_floor`.
    pub fn fit(points: &[Vec2], weights: &[f64], bw_floor: f64) -> Self {
        assert!(!points.is_empty(), "KDE needs at least one point");
        let n = points.len();
        let w: Vec<f64> = if weights.is_empty() {
            vec![1.0 / n as f64; n]
        } else {
            assert_eq!(weights.len(), n);
            let total: f64 = weights.iter().sum();
            weights.iter().map(|&x| x / total).collect()
        };
        let mean = points
            .iter()
            .zip(&w)
            .fold(Vec2::zeros(), |acc, (p, &wi)| acc + p * wi);
        let var = points.iter().zip(&w).fold(Vec2::zeros(), |acc, (p, &wi)| {
            let d = p - mean;
            acc + Vec2::new(d.x * d.x, d.y * d.y) * wi
        });
        let n_eff = 1.0 / w.iter().map(|&x| x * x).sum::<f64>();
        let factor = n_eff.powf(-1.0 / 6.0);
        let bandwidth = Vec2::new(
            (var.x.sqrt() * factor).max(bw_floor),
            (var.y.sqrt() * factor).max(bw_floor),
        );
        let log_weights = w.iter().map(|&x| x.max(1e-300).ln()).collect();
        Self { points: points.to_vec(), weights: w, log_weights, bandwidth }
    }

    pub fn log_pdf(&self, x: Vec2) -> f64 {
        let norm = -(2.0 * std::f64::consts::PI * self.bandwidth.x * self.bandwidth.y).ln();
        let mut max_term = f64::NEG_INFINITY;
        let mut terms = Vec::with_capacity(self.points.len());
        for (p, &lw) in self.points.iter().zip(&self.log_weights) {
            let dx = (x.x - p.x) / self.bandwidth.x;
            let dy = (x.y - p.y) / self.bandwidth.y;
            let t = lw + norm - 0.5 * (dx * dx + dy * dy);
            max_term = max_term.max(t);
            terms.push(t);
        }
        if max_term == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        max_term + terms.iter().map(|t| (t - max_term).exp()).sum::<f64>().ln()
    }

    /// Draws one sample: a weighted point choice plus Gaussian jitter at the
    /// fitted bandwidth.
    pub fn sample(&self, rng: &mut ChaCha12Rng) -> Vec2 {
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        let mut idx = self.points.len() - 1;
        for (i, &wi) in self.weights.iter().enumerate() {
            acc += wi;
            if u <= acc {
                idx = i;
                break;
            }
        }
        let (g1, g2) = gaussian_pair(rng);
        self.points[idx] + Vec2::new(g1 * self.bandwidth.x, g2 * self.bandwidth.y)
    }
}

/// Box-Muller standard normal pair.
pub fn gaussian_pair(rng: &mut ChaCha12Rng) -> (f64, f64) {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    let r = (-2.0 * u1.ln()).sqrt();
    let th = 2.0 * std::f64::consts::PI * u2;
    (r * th.cos(), r * th.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn density_peaks_at_the_data() {
        let pts = vec![Vec2::new(0.0, 0.0), Vec2::new(0.1, 0.0), Vec2::new(-0.1, 0.0)];
        let kde = Kde2d::fit(&pts, &[], 1e-3);
        assert!(kde.log_pdf(Vec2::zeros()) > kde.log_pdf(Vec2::new(3.0, 3.0)));
    }

    #[test]
    fn degenerate_samples_use_the_floor() {
        let pts = vec![Vec2::new(1.0, 2.0); 5];
        let kde = Kde2d::fit(&pts, &[], 1e-3);
        assert_eq!(kde.bandwidth, Vec2::new(1e-3, 1e-3));
        assert!(kde.log_pdf(Vec2::new(1.0, 2.0)).is_finite());
    }

    #[test]
    fn weighted_fit_prefers_heavy_points() {
        let pts = vec![Vec2::new(0.0, 0.0), Vec2::new(5.0, 0.0)];
        let kde = Kde2d::fit(&pts, &[0.99, 0.01], 1e-2);
        assert!(kde.log_pdf(Vec2::new(0.0, 0.0)) > kde.log_pdf(Vec2::new(5.0, 0.0)));
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let near_zero = (0..500).filter(|_| kde.sample(&mut rng).x < 2.5).count();
        assert!(near_zero > 450, "samples follow the weights: {near_zero}");
    }

    #[test]
    fn sampling_matches_density_mass() {
        let pts = vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)];
        let kde = Kde2d::fit(&pts, &[0.5, 0.5], 1e-2);
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let left = (0..2000).filter(|_| kde.sample(&mut rng).x < 5.0).count();
        assert!((left as f64 / 2000.0 - 0.5).abs() < 0.05);
    }
}
