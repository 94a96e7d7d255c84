use crate::{Error, Result};

/// Min-max scaling of inputs and targets into a band inside the sigmoid range.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub in_min: Vec<f64>,
    pub in_max: Vec<f64>,
    pub out_min: Vec<f64>,
    pub out_max: Vec<f64>,
    pub band: (f64, f64),
}

pub const DEFAULT_BAND: (f64, f64) = (0.1, 0.9);

fn bounds<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    let mut any = false;
    for row in rows {
        if row.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
        }
        any = true;
        for k in 0..dim {
            lo[k] = lo[k].min(row[k]);
            hi[k] = hi[k].max(row[k]);
        }
    }
    if !any {
        return Err(Error::validation("cannot fit a scaler to an empty set"));
    }
    // A constant feature still needs a usable range.
    for k in 0..dim {
        if hi[k] - lo[k] <= f64::EPSILON * lo[k].abs().max(1.0) {
            hi[k] = lo[k] + lo[k].abs().max(1.0);
        }
    }
    Ok((lo, hi))
}

impl Scaler {
    pub fn fit<'a>(
        inputs: impl IntoIterator<Item = &'a [f64]>,
        targets: impl IntoIterator<Item = &'a [f64]>,
        n_inputs: usize,
        n_targets: usize,
    ) -> Result<Self> {
        let (in_min, in_max) = bounds(inputs.into_iter(), n_inputs)?;
        let (out_min, out_max) = bounds(targets.into_iter(), n_targets)?;
        Ok(Self { in_min, in_max, out_min, out_max, band: DEFAULT_BAND })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |lo: &[f64], hi: &[f64]| lo.len() == hi.len() && lo.iter().zip(hi).all(|(a, b)| a < b);
        if !ok(&self.in_min, &self.in_max) || !ok(&self.out_min, &self.out_max) {
            return Err(Error::validation("scaler needs min < max in every dimension"));
        }
        if !(self.band.0 < self.band.1) {
            return Err(Error::validation("scaler band must be increasing"));
        }
        Ok(())
    }

    fn forward(&self, x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
        let (a, b) = self.band;
        x.iter()
            .zip(lo.iter().zip(hi))
            .map(|(v, (l, h))| a + (v - l) / (h - l) * (b - a))
            .collect()
    }

    fn inverse(&self, y: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
        let (a, b) = self.band;
        y.iter()
            .zip(lo.iter().zip(hi))
            .map(|(v, (l, h))| l + (v - a) / (b - a) * (h - l))
            .collect()
    }

    pub fn scale_input(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x, &self.in_min, &self.in_max)
    }

    pub fn unscale_input(&self, y: &[f64]) -> Vec<f64> {
        self.inverse(y, &self.in_min, &self.in_max)
    }

    pub fn scale_target(&self, t: &[f64]) -> Vec<f64> {
        self.forward(t, &self.out_min, &self.out_max)
    }

    pub fn unscale_output(&self, y: &[f64]) -> Vec<f64> {
        self.inverse(y, &self.out_min, &self.out_max)
    }

    /// True when every input feature lies within the fitted range.
    pub fn input_within_range(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.in_min.iter().zip(&self.in_max))
            .all(|(v, (l, h))| v >= l && v <= h)
    }
}
