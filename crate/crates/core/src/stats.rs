//! Small numeric kernels shared by the transform engine and the rubric.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty input")]
    EmptyInput,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Linear-interpolation quantile at position `q·(n−1)` of the sorted values.
pub fn quantile(values: &[f64], q: f64) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(StatsError::InvalidParameter(format!("q = {q} outside [0, 1]")));
    }
    let v = sorted(values);
    if v.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    Ok(quantile_sorted(&v, q))
}

pub(crate) fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Tukey fences `(q1 − 1.5·IQR, q3 + 1.5·IQR)`.
pub fn tukey_fences(values: &[f64]) -> Result<(f64, f64), StatsError> {
    let v = sorted(values);
    if v.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let q1 = quantile_sorted(&v, 0.25);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    Ok((q1 - 1.5 * iqr, q3 + 1.5 * iqr))
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

/// Population coefficient of variation; `None` when the mean is zero.
pub fn coefficient_of_variation(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    if m == 0.0 {
        return None;
    }
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    Some(var.sqrt() / m.abs())
}

/// Silverman's rule of thumb. Falls back to whichever spread estimate is
/// positive when the other one vanishes.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64, StatsError> {
    let v = sorted(values);
    if v.len() < 2 || v[0] == v[v.len() - 1] {
        return Err(StatsError::DegenerateInput("need at least two distinct values".into()));
    }
    let sd = std_dev(&v).unwrap_or(0.0);
    let iqr = (quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25)) / 1.34;
    let a = if iqr > 0.0 { sd.min(iqr) } else { sd };
    Ok(0.9 * a * (v.len() as f64).powf(-0.2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityCurve {
    pub fn trapezoid_integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    pub fn max_density(&self) -> f64 {
        self.density.iter().copied().fold(0.0, f64::max)
    }

    pub fn step(&self) -> f64 {
        if self.grid.len() < 2 {
            0.0
        } else {
            self.grid[1] - self.grid[0]
        }
    }
}

pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

pub(crate) fn gaussian(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { hi } else { lo + step * i as f64 }).collect()
}

/// Gaussian kernel density estimate on `grid_n` points spanning
/// `[min − 3h, max + 3h]`, rescaled so its trapezoid integral is one.
pub fn kde(values: &[f64], bandwidth: Option<f64>, grid_n: usize) -> Result<DensityCurve, StatsError> {
    if grid_n < 16 {
        return Err(StatsError::InvalidParameter("grid_n must be at least 16".into()));
    }
    let v = sorted(values);
    if v.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if v[0] == v[v.len() - 1] {
        return Err(StatsError::DegenerateInput("all values are equal".into()));
    }
    let h = match bandwidth {
        Some(h) if h.is_finite() && h > 0.0 => h,
        Some(h) => return Err(StatsError::InvalidParameter(format!("bandwidth {h} must be positive"))),
        None => silverman_bandwidth(&v)?,
    };
    let grid = linspace(v[0] - 3.0 * h, v[v.len() - 1] + 3.0 * h, grid_n);
    let norm = 1.0 / (v.len() as f64 * h);
    let mut density: Vec<f64> = grid
        .iter()
        .map(|x| v.iter().map(|xi| gaussian((x - xi) / h)).sum::<f64>() * norm)
        .collect();
    let total = trapezoid(&grid, &density);
    if total > 0.0 {
        density.iter_mut().for_each(|d| *d /= total);
    }
    Ok(DensityCurve { grid, density, bandwidth: h })
}

/// Local maxima of a sampled profile with their topographic prominence.
/// Plateaus count once, at their midpoint. Endpoints never qualify.
pub fn peaks_with_prominence(ys: &[f64]) -> Vec<(usize, f64)> {
    let n = ys.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if ys[i] > ys[i - 1] {
            let mut j = i;
            while j + 1 < n && ys[j + 1] == ys[i] {
                j += 1;
            }
            if j + 1 < n && ys[j + 1] < ys[i] {
                out.push(((i + j) / 2, ys[i]));
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out.into_iter()
        .map(|(idx, h)| {
            let mut left_min = h;
            for k in (0..idx).rev() {
                if ys[k] > h {
                    break;
                }
                left_min = left_min.min(ys[k]);
            }
            let mut right_min = h;
            for &y in &ys[idx + 1..] {
                if y > h {
                    break;
                }
                right_min = right_min.min(y);
            }
            (idx, h - left_min.max(right_min))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 100.0];
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 100.0);
        assert_eq!(quantile(&v, 0.5).unwrap(), 3.0);
        assert!((quantile(&[1.0, 2.0], 0.25).unwrap() - 1.25).abs() < 1e-12);
        assert_eq!(quantile(&[], 0.5), Err(StatsError::EmptyInput));
    }

    #[test]
    fn fences() {
        assert_eq!(tukey_fences(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap(), (-1.0, 7.0));
    }

    #[test]
    fn kde_rejects_constant_input() {
        assert!(matches!(kde(&[3.0, 3.0, 3.0], None, 64), Err(StatsError::DegenerateInput(_))));
        assert!(matches!(kde(&[1.0, 2.0], None, 8), Err(StatsError::InvalidParameter(_))));
    }

    #[test]
    fn kde_symmetric_pair() {
        let c = kde(&[-1.0, 1.0], Some(0.7), 101).unwrap();
        for i in 0..c.grid.len() {
            let j = c.grid.len() - 1 - i;
            assert!((c.grid[i] + c.grid[j]).abs() < 1e-9);
            assert!((c.density[i] - c.density[j]).abs() < 1e-9);
        }
        assert!((c.trapezoid_integral() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prominence_of_two_humps() {
        let ys = [0.0, 1.0, 3.0, 1.0, 2.0, 0.5, 0.0];
        assert_eq!(peaks_with_prominence(&ys), vec![(2, 3.0), (4, 1.0)]);
        assert_eq!(peaks_with_prominence(&[0.0, 2.0, 2.0, 2.0, 0.0]), vec![(2, 2.0)]);
        assert!(peaks_with_prominence(&[1.0, 2.0, 3.0]).is_empty());
    }

    #[test]
    fn cv() {
        assert_eq!(coefficient_of_variation(&[2.0, 2.0, 2.0]), Some(0.0));
        assert!((coefficient_of_variation(&[1.0, 3.0]).unwrap() - 0.5).abs() < 1e-12);
    }
}
