use crate::error::{Error, Result};
use crate::grid::{ScalarField, StaggeredGrid};
use crate::model::CoefficientPair;
use crate::regularization::RegConfig;

pub const EXAMPLE_NAMES: [&str; 5] = ["ex1", "ex2_1", "ex2_2", "ex3", "ex4"];

const EDGE_SLACK: f64 = 1e-9;

/// Background value of both coefficients outside the inclusions.
pub const BACKGROUND: f64 = 1.0;
/// Coefficient value inside every inclusion.
pub const INCLUSION_VALUE: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// Axis-aligned square of side `width`.
    Square {
        center: (f64, f64),
        width: f64,
        value: f64,
    },
    /// Square ring: inside the outer square, outside the inner one.
    Ring {
        center: (f64, f64),
        outer: f64,
        inner: f64,
        value: f64,
    },
}

impl Shape {
    pub fn square(cx: f64, cy: f64, width: f64) -> Self {
        Shape::Square {
            center: (cx, cy),
            width,
            value: INCLUSION_VALUE,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        match *self {
            Shape::Square { center, .. } | Shape::Ring { center, .. } => center,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Shape::Square { value, .. } | Shape::Ring { value, .. } => value,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        // closed square; the slack keeps centers lying exactly on an edge
        // inside regardless of round-off
        let inside = |c: (f64, f64), w: f64| {
            let r = 0.5 * w + EDGE_SLACK;
            (x - c.0).abs() <= r && (y - c.1).abs() <= r
        };
        match *self {
            Shape::Square { center, width, .. } => inside(center, width),
            Shape::Ring {
                center, outer, inner, ..
            } => inside(center, outer) && !inside(center, inner),
        }
    }

    fn within_unit_square(&self) -> bool {
        let (c, half) = match *self {
            Shape::Square { center, width, .. } => (center, 0.5 * width),
            Shape::Ring { center, outer, .. } => (center, 0.5 * outer),
        };
        c.0 - half >= 0.0 && c.0 + half <= 1.0 && c.1 - half >= 0.0 && c.1 + half <= 1.0
    }
}

/// `(alpha_sigma, beta_sigma, alpha_mu, beta_mu)`; the `mu` pair is absent
/// when `mu` is known.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegParams {
    pub sigma: (f64, f64),
    pub mu: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExampleSpec {
    pub name: String,
    pub sigma_inclusions: Vec<Shape>,
    pub mu_inclusions: Vec<Shape>,
    pub backgrounds: (f64, f64),
    pub excitation_count: usize,
    pub noise_level: f64,
    pub exact_params: RegParams,
    pub noisy_params: RegParams,
}

impl ExampleSpec {
    /// Rasterizes the media: a cell takes an inclusion's value iff its
    /// center lies inside the shape.
    pub fn rasterize(&self, grid: StaggeredGrid) -> CoefficientPair {
        let paint = |shapes: &[Shape], bg: f64| {
            ScalarField::from_fn(grid, |x, y| {
                shapes
                    .iter()
                    .rev()
                    .find(|s| s.contains(x, y))
                    .map_or(bg, Shape::value)
            })
        };
        CoefficientPair {
            sigma: paint(&self.sigma_inclusions, self.backgrounds.0),
            mu: paint(&self.mu_inclusions, self.backgrounds.1),
        }
    }

    /// Whether `mu` is reconstructed (it is known in examples 2 and 4).
    pub fn reconstructs_mu(&self) -> bool {
        self.exact_params.mu.is_some()
    }

    pub fn params(&self, noisy: bool) -> RegParams {
        if noisy {
            self.noisy_params
        } else {
            self.exact_params
        }
    }

    /// Box bounds `[0.5 bg, 1.5 max inclusion value]`.
    pub fn bounds(&self) -> (f64, f64) {
        let max_value = self
            .sigma_inclusions
            .iter()
            .chain(&self.mu_inclusions)
            .map(Shape::value)
            .fold(self.backgrounds.0.max(self.backgrounds.1), f64::max);
        let bg = self.backgrounds.0.min(self.backgrounds.1);
        (0.5 * bg, 1.5 * max_value)
    }

    /// Regularizers for the chosen noise column.
    pub fn reg_configs(&self, noisy: bool) -> Result<(RegConfig, Option<RegConfig>)> {
        let p = self.params(noisy);
        let (lo, hi) = self.bounds();
        let sigma = RegConfig::new(p.sigma.0, p.sigma.1, lo, hi)?;
        let mu = p.mu.map(|(a, b)| RegConfig::new(a, b, lo, hi)).transpose()?;
        Ok((sigma, mu))
    }

    fn validate(self) -> Self {
        debug_assert!(self
            .sigma_inclusions
            .iter()
            .chain(&self.mu_inclusions)
            .all(|s| s.within_unit_square() && s.value() > 0.0));
        self
    }
}

/// Returns one of the built-in setups: `ex1`, `ex2_1`, `ex2_2`, `ex3`, `ex4`.
pub fn make_example(name: &str) -> Result<ExampleSpec> {
    let bg = (BACKGROUND, BACKGROUND);
    let params = |s: (f64, f64), m: Option<(f64, f64)>| RegParams { sigma: s, mu: m };
    let spec = match name {
        "ex1" => ExampleSpec {
            name: name.into(),
            sigma_inclusions: vec![Shape::square(0.25, 0.65, 0.05)],
            mu_inclusions: vec![Shape::square(0.35, 0.3, 0.05)],
            backgrounds: bg,
            excitation_count: 1,
            noise_level: 0.10,
            exact_params: params((1.0e-2, 2.0e-2), Some((5.0e-4, 5.0e-4))),
            noisy_params: params((1.0e-2, 2.0e-2), Some((5.0e-4, 1.0e-3))),
        },
        "ex2_1" => ExampleSpec {
            name: name.into(),
            sigma_inclusions: vec![Shape::square(0.15, 0.5, 0.05), Shape::square(0.5, 0.85, 0.05)],
            mu_inclusions: vec![],
            backgrounds: bg,
            excitation_count: 1,
            noise_level: 0.20,
            exact_params: params((1.0e-3, 5.0e-3), None),
            noisy_params: params((1.0e-3, 1.0e-2), None),
        },
        "ex2_2" => ExampleSpec {
            name: name.into(),
            sigma_inclusions: vec![Shape::square(0.45, 0.425, 0.1), Shape::square(0.55, 0.575, 0.1)],
            mu_inclusions: vec![],
            backgrounds: bg,
            excitation_count: 1,
            noise_level: 0.02,
            exact_params: params((1.0e-6, 1.0e-3), None),
            noisy_params: params((1.0e-6, 2.0e-3), None),
        },
        "ex3" => ExampleSpec {
            name: name.into(),
            sigma_inclusions: vec![Shape::square(0.5, 0.25, 0.1), Shape::square(0.5, 0.75, 0.1)],
            mu_inclusions: vec![Shape::square(0.25, 0.5, 0.1), Shape::square(0.75, 0.5, 0.1)],
            backgrounds: bg,
            excitation_count: 1,
            noise_level: 0.20,
            exact_params: params((1.0e-3, 1.0e-2), Some((1.0e-2, 5.0e-3))),
            noisy_params: params((1.0e-3, 2.0e-2), Some((1.0e-2, 5.0e-3))),
        },
        "ex4" => ExampleSpec {
            name: name.into(),
            sigma_inclusions: vec![Shape::Ring {
                center: (0.5, 0.6),
                outer: 0.2,
                inner: 0.15,
                value: INCLUSION_VALUE,
            }],
            mu_inclusions: vec![],
            backgrounds: bg,
            excitation_count: 2,
            noise_level: 0.20,
            exact_params: params((1.0e-5, 5.0e-4), None),
            noisy_params: params((1.0e-5, 1.0e-3), None),
        },
        other => return Err(Error::UnknownExample(other.into())),
    };
    Ok(spec.validate())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_one_geometry() {
        let ex = make_example("ex1").unwrap();
        assert_eq!(ex.sigma_inclusions, vec![Shape::square(0.25, 0.65, 0.05)]);
        assert_eq!(ex.mu_inclusions, vec![Shape::square(0.35, 0.3, 0.05)]);
        assert_eq!(ex.sigma_inclusions[0].value(), 20.0);
        assert_eq!(ex.excitation_count, 1);
        assert_eq!(ex.exact_params.sigma, (1.0e-2, 2.0e-2));
        assert_eq!(ex.noisy_params.mu, Some((5.0e-4, 1.0e-3)));
    }

    #[test]
    fn close_pair_and_ring() {
        let ex = make_example("ex2_2").unwrap();
        let centers: Vec<_> = ex.sigma_inclusions.iter().map(Shape::center).collect();
        assert_eq!(centers, vec![(0.45, 0.425), (0.55, 0.575)]);
        assert!(!ex.reconstructs_mu());

        let ring = make_example("ex4").unwrap();
        assert_eq!(ring.excitation_count, 2);
        match ring.sigma_inclusions[0] {
            Shape::Ring { center, outer, inner, .. } => {
                assert_eq!((center, outer, inner), ((0.5, 0.6), 0.2, 0.15));
            }
            _ => panic!("expected a ring"),
        }
        assert!(ring.sigma_inclusions[0].contains(0.5, 0.69));
        assert!(!ring.sigma_inclusions[0].contains(0.5, 0.6));
    }

    #[test]
    fn unknown_names_rejected() {
        assert!(matches!(make_example("ex9"), Err(Error::UnknownExample(_))));
        for name in EXAMPLE_NAMES {
            assert!(make_example(name).is_ok());
        }
    }

    #[test]
    fn rasterization_by_cell_centers() {
        let ex = make_example("ex1").unwrap();
        // centers at (k + 1/2) h; at N = 50 the mu square spans only two rows,
        // at N = 100 the edges pass through centers
        for (n, sigma_cells, mu_cells) in [(50, 9, 6), (100, 36, 36)] {
            let grid = StaggeredGrid::new(n).unwrap();
            let q = ex.rasterize(grid);
            let count = |f: &ScalarField| f.values().iter().filter(|&&v| v == 20.0).count();
            assert_eq!(count(&q.sigma), sigma_cells, "N = {n}");
            assert_eq!(count(&q.mu), mu_cells, "N = {n}");
        }
    }

    #[test]
    fn default_bounds() {
        let ex = make_example("ex3").unwrap();
        assert_eq!(ex.bounds(), (0.5, 30.0));
        let (s, m) = ex.reg_configs(true).unwrap();
        assert_eq!((s.alpha, s.beta), (1.0e-3, 2.0e-2));
        assert_eq!(m.map(|m| (m.alpha, m.beta)), Some((1.0e-2, 5.0e-3)));
    }
}
