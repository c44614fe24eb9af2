use ndarray::Array2;

use crate::error::Result;
use crate::grid::ScalarField;
use crate::model::CoefficientPair;

/// Quality of one reconstructed coefficient against its truth.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMetrics {
    pub relative_l2_error: f64,
    pub support_jaccard: f64,
    /// One entry per true inclusion (4-connected component of the true
    /// support). `inf` when the reconstruction has no support at all.
    pub center_of_mass_errors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub sigma: CoefficientMetrics,
    pub mu: CoefficientMetrics,
}

/// A connected set of cells and its center of mass.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub cells: Vec<(usize, usize)>,
    pub center: (f64, f64),
}

/// Background and contrast of a piecewise constant truth: `(min, max - min)`.
pub fn background_and_contrast(truth: &ScalarField) -> (f64, f64) {
    let bg = truth.min();
    (bg, truth.max() - bg)
}

/// Cells strictly above `bg + contrast / 2`. Empty for zero contrast.
pub fn support_mask(q: &ScalarField, bg: f64, contrast: f64) -> Array2<bool> {
    if contrast <= 0.0 {
        return Array2::from_elem(q.values().raw_dim(), false);
    }
    let level = bg + 0.5 * contrast;
    q.values().mapv(|v| v > level)
}

/// Grows a mask by `cells` in the 8-neighbourhood sense.
pub fn dilate(mask: &Array2<bool>, cells: usize) -> Array2<bool> {
    let (nx, ny) = mask.dim();
    let r = cells as isize;
    Array2::from_shape_fn((nx, ny), |(i, j)| {
        (-r..=r).any(|di| {
            (-r..=r).any(|dj| {
                let (a, b) = (i as isize + di, j as isize + dj);
                a >= 0 && b >= 0 && (a as usize) < nx && (b as usize) < ny && mask[[a as usize, b as usize]]
            })
        })
    })
}

pub fn jaccard(a: &Array2<bool>, b: &Array2<bool>) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// 4-connected components of `mask`, each with the center of mass of
/// `weight - bg` over its cells, in order of first cell encountered.
pub fn components(mask: &Array2<bool>, q: &ScalarField, bg: f64) -> Vec<Component> {
    let grid = q.grid();
    let (nx, ny) = mask.dim();
    let mut seen = Array2::from_elem((nx, ny), false);
    let mut out = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if !mask[[i, j]] || seen[[i, j]] {
                continue;
            }
            let mut cells = Vec::new();
            let mut stack = vec![(i, j)];
            seen[[i, j]] = true;
            while let Some((a, b)) = stack.pop() {
                cells.push((a, b));
                let mut push = |c: usize, d: usize| {
                    if mask[[c, d]] && !seen[[c, d]] {
                        seen[[c, d]] = true;
                        stack.push((c, d));
                    }
                };
                if a > 0 {
                    push(a - 1, b);
                }
                if a + 1 < nx {
                    push(a + 1, b);
                }
                if b > 0 {
                    push(a, b - 1);
                }
                if b + 1 < ny {
                    push(a, b + 1);
                }
            }
            cells.sort_unstable_by_key(|&(a, b)| (b, a));
            let (mut w, mut cx, mut cy) = (0.0, 0.0, 0.0);
            for &(a, b) in &cells {
                let m = (q.get(a, b) - bg).max(f64::MIN_POSITIVE);
                let (x, y) = grid.cell_center(a, b);
                w += m;
                cx += m * x;
                cy += m * y;
            }
            out.push(Component {
                cells,
                center: (cx / w, cy / w),
            });
        }
    }
    out
}

/// Support components of `q` measured against the truth's background and
/// contrast.
pub fn reconstructed_components(q: &ScalarField, truth: &ScalarField) -> Vec<Component> {
    let (bg, contrast) = background_and_contrast(truth);
    components(&support_mask(q, bg, contrast), q, bg)
}

/// Largest relative deviation `|q - bg| / bg` over cells outside the true
/// support dilated by `dilation` cells.
pub fn background_deviation(q: &ScalarField, truth: &ScalarField, dilation: usize) -> f64 {
    let (bg, contrast) = background_and_contrast(truth);
    let near = dilate(&support_mask(truth, bg, contrast), dilation);
    q.values()
        .iter()
        .zip(&near)
        .filter(|(_, &inside)| !inside)
        .map(|(&v, _)| (v - bg).abs() / bg)
        .fold(0.0, f64::max)
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

pub fn coefficient_metrics(reconstructed: &ScalarField, truth: &ScalarField) -> Result<CoefficientMetrics> {
    reconstructed.grid().check_same(&truth.grid())?;
    let diff = reconstructed.lincomb(1.0, -1.0, truth);
    let truth_norm = truth.norm();
    let relative_l2_error = if truth_norm > 0.0 {
        diff.norm() / truth_norm
    } else {
        diff.norm()
    };

    let (bg, contrast) = background_and_contrast(truth);
    let true_mask = support_mask(truth, bg, contrast);
    let rec_mask = support_mask(reconstructed, bg, contrast);
    let true_parts = components(&true_mask, truth, bg);
    let rec_parts = components(&rec_mask, reconstructed, bg);
    let center_of_mass_errors = true_parts
        .iter()
        .map(|t| {
            rec_parts
                .iter()
                .map(|r| distance(t.center, r.center))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();

    Ok(CoefficientMetrics {
        relative_l2_error,
        support_jaccard: jaccard(&true_mask, &rec_mask),
        center_of_mass_errors,
    })
}

pub fn compute_metrics(reconstructed: &CoefficientPair, truth: &CoefficientPair) -> Result<Metrics> {
    Ok(Metrics {
        sigma: coefficient_metrics(&reconstructed.sigma, &truth.sigma)?,
        mu: coefficient_metrics(&reconstructed.mu, &truth.mu)?,
    })
}
