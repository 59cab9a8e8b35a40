//! Linear SVM on standardised features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::knn::Standardizer;

/// Linear SVM trained by stochastic subgradient descent on the regularised
/// hinge loss with step `1 / (lambda * t)`. The bias is an extra constant
/// feature and is regularised with the weights.
#[derive(Debug, Clone)]
pub struct LinearSvm {
    scaler: Standardizer,
    w: Vec<f64>,
}

impl LinearSvm {
    pub fn fit(x: &[Vec<f64>], y: &[bool], lambda: f64, passes: usize, seed: u64) -> Self {
        let scaler = Standardizer::fit(x);
        let rows: Vec<Vec<f64>> = x
            .iter()
            .map(|r| {
                let mut z = scaler.transform(r);
                z.push(1.0);
                z
            })
            .collect();
        let mut w = vec![0.0; rows[0].len()];
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0.0;
        for _ in 0..passes {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1.0;
                let eta = 1.0 / (lambda * t);
                let yi = if y[i] { 1.0 } else { -1.0 };
                let margin = yi * rows[i].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                let shrink = 1.0 - eta * lambda;
                for wj in &mut w {
                    *wj *= shrink;
                }
                if margin < 1.0 {
                    for (wj, xj) in w.iter_mut().zip(&rows[i]) {
                        *wj += eta * yi * xj;
                    }
                }
            }
        }
        Self { scaler, w }
    }

    pub fn decision(&self, row: &[f64]) -> f64 {
        let z = self.scaler.transform(row);
        z.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() + self.w[z.len()]
    }

    pub fn predict_one(&self, row: &[f64]) -> bool {
        self.decision(row) > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn svm_separates_linearly_separable_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dir = [0.6, -0.8];
        let mut x = Vec::new();
        let mut y = Vec::new();
        while x.len() < 20 {
            let p: [f64; 2] = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let proj = p[0] * dir[0] + p[1] * dir[1];
            if proj.abs() > 0.5 {
                x.push(p.to_vec());
                y.push(proj > 0.0);
            }
        }
        // Exhaustive-threshold oracle on the 1-D projection: some cut
        // classifies every point.
        let mut proj: Vec<(f64, bool)> = x.iter().zip(&y).map(|(p, &l)| (p[0] * dir[0] + p[1] * dir[1], l)).collect();
        proj.sort_by(|a, b| a.0.total_cmp(&b.0));
        let separable = (0..=proj.len()).any(|k| proj[..k].iter().all(|p| !p.1) && proj[k..].iter().all(|p| p.1));
        assert!(separable);

        let svm = LinearSvm::fit(&x, &y, 1e-3, 1000, 0);
        let correct = x.iter().zip(&y).filter(|(p, &l)| svm.predict_one(p) == l).count();
        assert_eq!(correct, 20);
    }
}
