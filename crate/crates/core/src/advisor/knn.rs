//! Feature standardisation and k-nearest neighbours.

/// Per-feature mean and standard deviation from training rows. Constant
/// features keep unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let p = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0; p];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; p];
        for row in x {
            for ((s, v), m) in scale.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Self { mean, scale }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-NN on standardised features. Neighbours are ordered by distance then
/// training index; a tied vote takes the nearest neighbour's label.
#[derive(Debug, Clone)]
pub struct Knn {
    k: usize,
    scaler: Standardizer,
    x: Vec<Vec<f64>>,
    y: Vec<bool>,
}

impl Knn {
    pub fn fit(x: &[Vec<f64>], y: &[bool], k: usize) -> Self {
        let scaler = Standardizer::fit(x);
        Self {
            k: k.max(1),
            x: x.iter().map(|r| scaler.transform(r)).collect(),
            y: y.to_vec(),
            scaler,
        }
    }

    /// Indices of the `k` nearest training rows, nearest first.
    pub fn neighbors(&self, row: &[f64]) -> Vec<usize> {
        let q = self.scaler.transform(row);
        let mut d: Vec<(f64, usize)> = self.x.iter().enumerate().map(|(i, r)| (sq_dist(&q, r), i)).collect();
        let k = self.k.min(d.len());
        d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(k);
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().map(|(_, i)| i).collect()
    }

    pub fn predict_one(&self, row: &[f64]) -> bool {
        let nn = self.neighbors(row);
        let pos = nn.iter().filter(|&&i| self.y[i]).count();
        match (2 * pos).cmp(&nn.len()) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => self.y[nn[0]],
        }
    }
}
