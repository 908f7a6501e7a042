//! Margin-loss objectives over geometric transformations, and closed-form
//! test functions with known minima for exercising the optimiser.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{Objective, ObjectiveError};
use crate::error::{Error, Result};
use crate::geometry::{build_matrix, warp, Factor, GrayImage, MatrixMode, TransformParams};
use crate::partition::ParamSpace;

/// `logits[y] - max_{k≠y} logits[k]` on raw logits, `y` zero-based.
pub fn margin_loss(logits: &[f64], y: usize) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::TooFewClasses(logits.len()));
    }
    if y >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label: y,
            classes: logits.len(),
        });
    }
    let other = logits
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != y)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(logits[y] - other)
}

/// Anything that maps a batch of images to a batch of logit vectors.
pub trait Classifier: Sync {
    fn logits(&self, images: &[GrayImage]) -> Result<Vec<Vec<f64>>>;
}

impl Classifier for crate::netfwd::NetSpec {
    fn logits(&self, images: &[GrayImage]) -> Result<Vec<Vec<f64>>> {
        images.iter().map(|img| self.forward_image(img)).collect()
    }
}

/// Box over the transformation factors. Factors with a zero-width range are
/// pinned at that value and left out of the search space.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformSpace {
    base: TransformParams,
    active: Vec<Factor>,
    space: Option<ParamSpace>,
}

impl TransformSpace {
    /// Ranges as `(centre, half_width)` per factor, so the unit-cube centre
    /// maps exactly onto the centres.
    pub fn new(ranges: [(f64, f64); 4]) -> Result<Self> {
        let mut base = TransformParams::IDENTITY;
        let mut active = Vec::new();
        let mut centres = Vec::new();
        let mut halves = Vec::new();
        for (factor, (c, h)) in Factor::ALL.into_iter().zip(ranges) {
            if !(c.is_finite() && h.is_finite() && h >= 0.0) {
                return Err(Error::EmptyRange { lo: c - h, hi: c + h });
            }
            base.set(factor, c);
            if h > 0.0 {
                active.push(factor);
                centres.push(c);
                halves.push(h);
            }
        }
        let space = if active.is_empty() {
            None
        } else {
            Some(ParamSpace::symmetric(&centres, &halves)?)
        };
        Ok(Self { base, active, space })
    }

    /// `R(γ) + S(λ) + T(a, b)`: rotation in `[-γ, γ]` degrees, scale in
    /// `[1-λ, 1+λ]`, translations in `[-a, a] × [-b, b]` pixels.
    pub fn symmetric(rotation: f64, scale: f64, t_hor: f64, t_vrt: f64) -> Result<Self> {
        Self::new([(0.0, rotation), (1.0, scale), (0.0, t_hor), (0.0, t_vrt)])
    }

    pub fn active(&self) -> &[Factor] {
        &self.active
    }

    /// `None` when every factor is pinned.
    pub fn param_space(&self) -> Option<&ParamSpace> {
        self.space.as_ref()
    }

    pub fn base(&self) -> TransformParams {
        self.base
    }

    pub fn to_params(&self, point: &[f64]) -> Result<TransformParams> {
        if point.len() != self.active.len() {
            return Err(Error::DimensionMismatch {
                expected: self.active.len(),
                got: point.len(),
            });
        }
        let mut p = self.base;
        for (&f, &v) in self.active.iter().zip(point) {
            p.set(f, v);
        }
        Ok(p)
    }
}

/// `ℓ(θ) = margin_loss(F(T_θ(x)), y)` for one input.
pub struct MarginObjective<'a, C: Classifier + ?Sized> {
    model: &'a C,
    image: GrayImage,
    label: usize,
    space: TransformSpace,
    mode: MatrixMode,
}

impl<'a, C: Classifier + ?Sized> MarginObjective<'a, C> {
    pub fn new(model: &'a C, image: GrayImage, label: usize, space: TransformSpace) -> Self {
        Self {
            model,
            image,
            label,
            space,
            mode: MatrixMode::default(),
        }
    }

    pub fn with_mode(mut self, mode: MatrixMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn space(&self) -> &TransformSpace {
        &self.space
    }

    pub fn image(&self) -> &GrayImage {
        &self.image
    }

    pub fn label(&self) -> usize {
        self.label
    }

    /// Margin of the untransformed input.
    pub fn clean_margin(&self) -> Result<f64> {
        let logits = self.model.logits(std::slice::from_ref(&self.image))?;
        margin_loss(&logits[0], self.label)
    }

    pub fn margin_at(&self, params: &TransformParams) -> Result<f64> {
        let img = warp(&self.image, &build_matrix(params, self.mode));
        let logits = self.model.logits(std::slice::from_ref(&img))?;
        margin_loss(&logits[0], self.label)
    }

    /// Margins for a batch of points in the active-factor space, index-aligned.
    pub fn margins(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        let images = points
            .iter()
            .map(|p| Ok(warp(&self.image, &build_matrix(&self.space.to_params(p)?, self.mode))))
            .collect::<Result<Vec<_>>>()?;
        let logits = self.model.logits(&images)?;
        if logits.len() != points.len() {
            return Err(Error::MalformedQueryResults {
                expected: points.len(),
                got: logits.len(),
            });
        }
        logits.iter().map(|l| margin_loss(l, self.label)).collect()
    }
}

impl<C: Classifier + ?Sized> Objective for MarginObjective<'_, C> {
    fn evaluate(&self, points: &[Vec<f64>]) -> std::result::Result<Vec<f64>, ObjectiveError> {
        self.margins(points).map_err(|e| ObjectiveError(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Kind {
    Abs,
    Quadratic,
    MultiBasin(MultiBasin),
}

/// Closed-form function with a known Lipschitz constant (Euclidean norm)
/// and known global minimum on its box.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    pub name: String,
    pub bounds: Vec<(f64, f64)>,
    pub lipschitz: f64,
    pub min_value: f64,
    pub argmin: Vec<f64>,
    kind: Kind,
}

pub const TEST_FUNCTIONS: [&str; 4] = ["abs1d", "separable-abs-nd", "quadratic-bowl", "multi-basin"];

/// Default instance: `abs1d` is one-dimensional, the rest two-dimensional.
pub fn test_function(name: &str) -> Result<TestFunction> {
    let dim = if name == "abs1d" { 1 } else { 2 };
    test_function_nd(name, dim)
}

pub fn test_function_nd(name: &str, dim: usize) -> Result<TestFunction> {
    if dim == 0 {
        return Err(Error::EmptySpace);
    }
    let unit = vec![(0.0, 1.0); dim];
    let root_n = (dim as f64).sqrt();
    match name {
        "abs1d" if dim == 1 => Ok(TestFunction {
            name: name.into(),
            bounds: unit,
            lipschitz: 1.0,
            min_value: 0.0,
            argmin: vec![0.3],
            kind: Kind::Abs,
        }),
        "abs1d" => Err(Error::InvalidArgument("abs1d is one-dimensional".into())),
        "separable-abs-nd" => Ok(TestFunction {
            name: name.into(),
            bounds: unit,
            lipschitz: root_n,
            min_value: 0.0,
            argmin: (0..dim).map(|i| if i % 2 == 0 { 0.3 } else { 0.7 }).collect(),
            kind: Kind::Abs,
        }),
        "quadratic-bowl" => Ok(TestFunction {
            name: name.into(),
            bounds: unit,
            // sup ‖2(θ - ½)‖ over the unit cube.
            lipschitz: root_n,
            min_value: 0.0,
            argmin: vec![0.5; dim],
            kind: Kind::Quadratic,
        }),
        "multi-basin" if dim == 2 => Ok(MultiBasin::canonical().into_test_function()),
        "multi-basin" => Err(Error::InvalidArgument("multi-basin is two-dimensional".into())),
        other => Err(Error::UnknownTestFunction(other.into())),
    }
}

impl TestFunction {
    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn param_space(&self) -> ParamSpace {
        ParamSpace::new(&self.bounds).expect("test function bounds are valid")
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        match &self.kind {
            Kind::Abs => p.iter().zip(&self.argmin).map(|(x, m)| (x - m).abs()).sum(),
            Kind::Quadratic => p.iter().zip(&self.argmin).map(|(x, m)| (x - m).powi(2)).sum(),
            Kind::MultiBasin(mb) => mb.eval(p),
        }
    }
}

impl Objective for TestFunction {
    fn evaluate(&self, points: &[Vec<f64>]) -> std::result::Result<Vec<f64>, ObjectiveError> {
        points
            .iter()
            .map(|p| {
                if p.len() == self.dim() {
                    Ok(self.eval(p))
                } else {
                    Err(ObjectiveError(format!("expected {} coordinates, got {}", self.dim(), p.len())))
                }
            })
            .collect()
    }
}

/// `0.1 ‖p - (½, ½)‖² - Σ_k a_k exp(-‖p - m_k‖² / (2 s_k²))` on `[0, 1]²`,
/// with four wells drawn from a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiBasin {
    pub seed: u64,
    pub wells: Vec<Well>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Well {
    pub centre: [f64; 2],
    pub depth: f64,
    pub width: f64,
}

/// Grid minimum of the seed-0 instance on the 1000 × 1000 grid `k / 999`.
pub const MULTI_BASIN_MIN: f64 = -1.803538257858547;
pub const MULTI_BASIN_ARGMIN: [f64; 2] = [0.6706706706706707, 0.4624624624624625];

impl MultiBasin {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wells = (0..4)
            .map(|_| Well {
                centre: [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)],
                depth: rng.gen_range(0.5..1.0),
                width: rng.gen_range(0.06..0.15),
            })
            .collect();
        Self { seed, wells }
    }

    pub fn canonical() -> Self {
        Self::new(0)
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        let bowl = 0.1 * ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2));
        bowl - self
            .wells
            .iter()
            .map(|w| {
                let r2 = (p[0] - w.centre[0]).powi(2) + (p[1] - w.centre[1]).powi(2);
                w.depth * (-r2 / (2.0 * w.width * w.width)).exp()
            })
            .sum::<f64>()
    }

    /// Sum of per-term gradient-norm maxima: `a / (s √e)` per well plus
    /// `0.2 · √2 / 2` for the bowl.
    pub fn lipschitz(&self) -> f64 {
        let wells: f64 = self
            .wells
            .iter()
            .map(|w| w.depth / (w.width * std::f64::consts::E.sqrt()))
            .sum();
        wells + 0.1 * 2f64.sqrt()
    }

    /// Exhaustive minimum over the `points × points` grid with step `1/(points-1)`.
    pub fn grid_minimum(&self, points: usize) -> (f64, [f64; 2]) {
        let step = 1.0 / (points - 1) as f64;
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for i in 0..points {
            for j in 0..points {
                let p = [i as f64 * step, j as f64 * step];
                let v = self.eval(&p);
                if v < best.0 {
                    best = (v, p);
                }
            }
        }
        best
    }

    pub fn into_test_function(self) -> TestFunction {
        let (min_value, argmin) = if self.seed == 0 {
            (MULTI_BASIN_MIN, MULTI_BASIN_ARGMIN)
        } else {
            self.grid_minimum(1000)
        };
        TestFunction {
            name: "multi-basin".into(),
            bounds: vec![(0.0, 1.0); 2],
            lipschitz: self.lipschitz(),
            min_value,
            argmin: argmin.to_vec(),
            kind: Kind::MultiBasin(self),
        }
    }
}
