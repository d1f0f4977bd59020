//! Pixel grids and the discrete differential operators of the TV model.
//!
//! All fields are stored row-major. Multi-class fields put the class index
//! outermost, so class `l` of a [`LabelField`] occupies
//! `data[l * n .. (l + 1) * n]` with `n = width * height`. A [`DualField`]
//! additionally splits each class into two gradient components laid out as
//! `(class, component)` blocks.
//!
//! Gradient component 0 is the forward difference along rows (the `i`
//! index, i.e. `y`), component 1 along columns (`x`). Differences that would
//! leave the grid are zero, and [`divergence`] is the exact negative adjoint
//! of [`gradient`] under that convention.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub(crate) fn check(&self, other: Dims) -> Result<()> {
        if *self == other {
            Ok(())
        } else {
            Err(Error::dims(self, other))
        }
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Gray-level image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    dims: Dims,
    data: Vec<f64>,
    /// Grid spacing `h` used by the difference operators.
    pub spacing: f64,
}

impl GrayImage {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidInput("image must have at least one pixel".into()));
        }
        if data.len() != dims.len() {
            return Err(Error::dims(dims.len(), data.len()));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            dims,
            data,
            spacing: 1.0,
        })
    }

    pub fn filled(dims: Dims, value: f64) -> Result<Self> {
        Self::new(dims, vec![value; dims.len()])
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.len());
        for y in 0..dims.height {
            for x in 0..dims.width {
                data.push(f(x, y));
            }
        }
        Self::new(dims, data)
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.dims.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.dims.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[self.dims.index(x, y)]
    }

    pub fn inverted(&self) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
            spacing: self.spacing,
        }
    }

    /// Copies the `dims`-sized window at `(x0, y0)`, mirroring indices that
    /// fall outside the image.
    pub fn crop_mirrored(&self, x0: usize, y0: usize, dims: Dims) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for y in 0..dims.height {
            let sy = mirror_index((y0 + y) as isize, self.dims.height);
            for x in 0..dims.width {
                let sx = mirror_index((x0 + x) as isize, self.dims.width);
                data.push(self.data[self.dims.index(sx, sy)]);
            }
        }
        Self {
            dims,
            data,
            spacing: self.spacing,
        }
    }
}

/// Reflects `i` into `0..n` (edge pixel not repeated).
pub(crate) fn mirror_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Per-pixel, per-class values with class-major layout.
///
/// Used both for relaxed labelings `u` (each pixel on the unit simplex) and,
/// through [`CostVolume`], for unary costs.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelField {
    dims: Dims,
    classes: usize,
    data: Vec<f64>,
}

impl LabelField {
    pub fn uniform(dims: Dims, classes: usize) -> Self {
        Self {
            dims,
            classes,
            data: vec![1.0 / classes as f64; dims.len() * classes],
        }
    }

    pub fn from_vec(dims: Dims, classes: usize, data: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidInput("at least two classes required".into()));
        }
        if data.len() != dims.len() * classes {
            return Err(Error::dims(dims.len() * classes, data.len()));
        }
        Ok(Self { dims, classes, data })
    }

    /// Hard labeling with `labels[i]` the class of pixel `i`.
    pub fn one_hot(dims: Dims, classes: usize, labels: &[usize]) -> Result<Self> {
        if labels.len() != dims.len() {
            return Err(Error::dims(dims.len(), labels.len()));
        }
        let n = dims.len();
        let mut data = vec![0.0; n * classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(Error::InvalidInput(format!("label {l} out of range")));
            }
            data[l * n + i] = 1.0;
        }
        Self::from_vec(dims, classes, data)
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn class(&self, l: usize) -> &[f64] {
        let n = self.dims.len();
        &self.data[l * n..(l + 1) * n]
    }

    #[inline]
    pub fn class_mut(&mut self, l: usize) -> &mut [f64] {
        let n = self.dims.len();
        &mut self.data[l * n..(l + 1) * n]
    }

    #[inline]
    pub fn get(&self, l: usize, i: usize) -> f64 {
        self.data[l * self.dims.len() + i]
    }

    #[inline]
    pub fn set(&mut self, l: usize, i: usize, v: f64) {
        let n = self.dims.len();
        self.data[l * n + i] = v;
    }

    /// Largest deviation of any pixel from the unit simplex: the worst of
    /// `|sum - 1|` and the most negative entry.
    pub fn simplex_deviation(&self) -> f64 {
        let n = self.dims.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            let mut sum = 0.0;
            for l in 0..self.classes {
                let v = self.data[l * n + i];
                if !v.is_finite() {
                    return f64::INFINITY;
                }
                worst = worst.max(-v);
                sum += v;
            }
            worst = worst.max((sum - 1.0).abs());
        }
        worst
    }

    /// Per-pixel argmax; ties resolve to the highest class index.
    ///
    /// With the (FG, BG) class order this sends ties to background.
    pub fn argmax(&self) -> Vec<usize> {
        let n = self.dims.len();
        (0..n)
            .map(|i| {
                let mut best = 0;
                for l in 1..self.classes {
                    if self.data[l * n + i] >= self.data[best * n + i] {
                        best = l;
                    }
                }
                best
            })
            .collect()
    }
}

/// Unary labeling costs; lower cost means the class is more likely.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume(LabelField);

impl CostVolume {
    pub fn from_vec(dims: Dims, classes: usize, data: Vec<f64>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite cost {v}")));
        }
        LabelField::from_vec(dims, classes, data).map(Self)
    }

    pub fn zeros(dims: Dims, classes: usize) -> Self {
        Self(LabelField {
            dims,
            classes,
            data: vec![0.0; dims.len() * classes],
        })
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.0.dims
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.0.classes
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    #[inline]
    pub fn class(&self, l: usize) -> &[f64] {
        self.0.class(l)
    }

    #[inline]
    pub fn get(&self, l: usize, i: usize) -> f64 {
        self.0.get(l, i)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(LabelField {
            dims: self.0.dims,
            classes: self.0.classes,
            data: self.0.data.iter().map(|v| v * s).collect(),
        })
    }

    /// Copies the `dims`-sized window at `(x0, y0)` with mirrored borders.
    pub fn crop_mirrored(&self, x0: usize, y0: usize, dims: Dims) -> Self {
        let src = self.0.dims;
        let k = self.0.classes;
        let mut data = Vec::with_capacity(dims.len() * k);
        for l in 0..k {
            let class = self.class(l);
            for y in 0..dims.height {
                let sy = mirror_index((y0 + y) as isize, src.height);
                for x in 0..dims.width {
                    let sx = mirror_index((x0 + x) as isize, src.width);
                    data.push(class[src.index(sx, sy)]);
                }
            }
        }
        Self(LabelField { dims, classes: k, data })
    }
}

/// Single-class 2-vector field, component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VecField {
    dims: Dims,
    data: Vec<f64>,
}

impl VecField {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; 2 * dims.len()],
        }
    }

    pub fn from_components(dims: Dims, c0: Vec<f64>, c1: Vec<f64>) -> Result<Self> {
        if c0.len() != dims.len() || c1.len() != dims.len() {
            return Err(Error::dims(dims.len(), c0.len().max(c1.len())));
        }
        let mut data = c0;
        data.extend(c1);
        Ok(Self { dims, data })
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn component(&self, d: usize) -> &[f64] {
        let n = self.dims.len();
        &self.data[d * n..(d + 1) * n]
    }

    #[inline]
    pub fn component_mut(&mut self, d: usize) -> &mut [f64] {
        let n = self.dims.len();
        &mut self.data[d * n..(d + 1) * n]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Dual variable `p`: one 2-vector per pixel and class.
#[derive(Debug, Clone, PartialEq)]
pub struct DualField {
    dims: Dims,
    classes: usize,
    data: Vec<f64>,
}

impl DualField {
    pub fn zeros(dims: Dims, classes: usize) -> Self {
        Self {
            dims,
            classes,
            data: vec![0.0; 2 * classes * dims.len()],
        }
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Component `d` of class `l`.
    #[inline]
    pub fn component(&self, l: usize, d: usize) -> &[f64] {
        let n = self.dims.len();
        let b = (2 * l + d) * n;
        &self.data[b..b + n]
    }

    #[inline]
    pub fn component_mut(&mut self, l: usize, d: usize) -> &mut [f64] {
        let n = self.dims.len();
        let b = (2 * l + d) * n;
        &mut self.data[b..b + n]
    }

    #[inline]
    pub fn get(&self, l: usize, d: usize, i: usize) -> f64 {
        self.data[(2 * l + d) * self.dims.len() + i]
    }

    #[inline]
    pub fn set(&mut self, l: usize, d: usize, i: usize, v: f64) {
        let n = self.dims.len();
        self.data[(2 * l + d) * n + i] = v;
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Forward-difference gradient of `u` with zero difference at the last row
/// and column.
pub fn gradient(u: &[f64], dims: Dims, h: f64) -> VecField {
    let mut out = VecField::zeros(dims);
    gradient_into(u, dims, h, &mut out.data);
    out
}

/// Writes the gradient into a component-major buffer of length `2 * n`.
pub(crate) fn gradient_into(u: &[f64], dims: Dims, h: f64, out: &mut [f64]) {
    let (w, hgt) = (dims.width, dims.height);
    let n = dims.len();
    debug_assert_eq!(u.len(), n);
    let (g0, g1) = out.split_at_mut(n);
    let inv = 1.0 / h;
    for y in 0..hgt {
        let row = y * w;
        for x in 0..w {
            let i = row + x;
            g0[i] = if y + 1 < hgt { (u[i + w] - u[i]) * inv } else { 0.0 };
            g1[i] = if x + 1 < w { (u[i + 1] - u[i]) * inv } else { 0.0 };
        }
    }
}

/// Discrete divergence, the negative adjoint of [`gradient`]:
/// `<grad u, p> + <u, div p> = 0` for every `u`, `p`.
pub fn divergence(p: &VecField, h: f64) -> Vec<f64> {
    let mut out = vec![0.0; p.dims.len()];
    divergence_into(p.component(0), p.component(1), p.dims, h, &mut out);
    out
}

pub(crate) fn divergence_into(p0: &[f64], p1: &[f64], dims: Dims, h: f64, out: &mut [f64]) {
    let (w, hgt) = (dims.width, dims.height);
    let inv = 1.0 / h;
    for y in 0..hgt {
        let row = y * w;
        for x in 0..w {
            let i = row + x;
            let mut d = 0.0;
            if y + 1 < hgt {
                d += p0[i];
            }
            if y > 0 {
                d -= p0[i - w];
            }
            if x + 1 < w {
                d += p1[i];
            }
            if x > 0 {
                d -= p1[i - 1];
            }
            out[i] = d * inv;
        }
    }
}

/// Standard inner product on scalar fields.
pub fn inner_product_primal(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

/// `<p, q>_Y = sum p^1 q^1 + p^2 q^2`.
pub fn inner_product_dual(p: &VecField, q: &VecField) -> Result<f64> {
    p.dims.check(q.dims)?;
    inner_product_primal(&p.data, &q.data)
}
