use nalgebra::DMatrix;

use crate::model::SplitPlotSample;

/// Cross Gram matrices `G_{ir} = X_i T_S X_rᵀ` for all group pairs.
///
/// Every bilinear form between within-group differences reduces to four
/// lookups: `Y_{i,p,q}ᵀ T_S Y_{r,s,t} = G_{ps} − G_{pt} − G_{qs} + G_{qt}`.
#[derive(Debug, Clone)]
pub struct GramCache {
    grams: Vec<Vec<DMatrix<f64>>>,
}

impl GramCache {
    pub fn new(sample: &SplitPlotSample, t_sub: &DMatrix<f64>) -> Self {
        let a = sample.group_count();
        let projected: Vec<DMatrix<f64>> = sample.groups().iter().map(|x| x * t_sub).collect();
        let mut grams: Vec<Vec<DMatrix<f64>>> = vec![Vec::with_capacity(a); a];
        for i in 0..a {
            for r in 0..a {
                let g = if r < i {
                    grams[r][i].transpose()
                } else {
                    &projected[i] * sample.group(r).transpose()
                };
                grams[i].push(g);
            }
        }
        Self { grams }
    }

    pub fn groups(&self) -> usize {
        self.grams.len()
    }

    pub fn gram(&self, i: usize, r: usize) -> &DMatrix<f64> {
        &self.grams[i][r]
    }

    /// `(X_{i,p} − X_{i,q})ᵀ T_S (X_{r,s} − X_{r,t})`.
    #[inline]
    pub fn bilinear(&self, i: usize, (p, q): (usize, usize), r: usize, (s, t): (usize, usize)) -> f64 {
        let g = &self.grams[i][r];
        g[(p, s)] - g[(p, t)] - g[(q, s)] + g[(q, t)]
    }
}
