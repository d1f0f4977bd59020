use crate::error::{Error, Result};
use crate::grid::{mirror_index, Dims, GrayImage, LabelField};

/// Overlapping patch layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchGrid {
    pub width: usize,
    pub height: usize,
    /// Fraction of a patch shared with its neighbour, in `[0, 0.5)`.
    pub overlap: f64,
}

impl Default for PatchGrid {
    fn default() -> Self {
        Self {
            width: 256,
            height: 128,
            overlap: 0.25,
        }
    }
}

/// Top-left corner of a patch in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub x: usize,
    pub y: usize,
}

fn offsets(len: usize, size: usize, stride: usize) -> Vec<usize> {
    if len <= size {
        return vec![0];
    }
    let mut out = Vec::new();
    let mut o = 0;
    while o + size < len {
        out.push(o);
        o += stride;
    }
    out.push(len - size);
    out
}

impl PatchGrid {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::Config("patch dimensions must be at least 2".into()));
        }
        if !(0.0..0.5).contains(&self.overlap) {
            return Err(Error::Config("overlap must lie in [0, 0.5)".into()));
        }
        Ok(())
    }

    pub fn patch_dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    /// `(horizontal, vertical)` stride.
    pub fn strides(&self) -> (usize, usize) {
        let s = |size: usize| (((size as f64) * (1.0 - self.overlap)).round() as usize).max(1);
        (s(self.width), s(self.height))
    }

    /// Row-major patch origins covering `dims`. The last patch in each
    /// direction is aligned to the border; an image smaller than a patch
    /// gets a single, mirror-padded patch in that direction.
    pub fn layout(&self, dims: Dims) -> Vec<Patch> {
        let (sx, sy) = self.strides();
        let xs = offsets(dims.width, self.width, sx);
        let ys = offsets(dims.height, self.height, sy);
        ys.iter()
            .flat_map(|&y| xs.iter().map(move |&x| Patch { x, y }))
            .collect()
    }
}

pub fn extract_patches(img: &GrayImage, grid: &PatchGrid) -> Result<Vec<(Patch, GrayImage)>> {
    grid.validate()?;
    Ok(grid
        .layout(img.dims())
        .into_iter()
        .map(|p| (p, img.crop_mirrored(p.x, p.y, grid.patch_dims())))
        .collect())
}

/// Mirror-padded crop of a per-pixel scalar field.
pub(crate) fn crop_field(data: &[f64], src: Dims, x0: usize, y0: usize, dims: Dims) -> Vec<f64> {
    let mut out = Vec::with_capacity(dims.len());
    for y in 0..dims.height {
        let sy = mirror_index((y0 + y) as isize, src.height);
        for x in 0..dims.width {
            let sx = mirror_index((x0 + x) as isize, src.width);
            out.push(data[src.index(sx, sy)]);
        }
    }
    out
}

/// Averages overlapping patch scores and renormalises each pixel onto the
/// simplex. Patch pixels outside `dims` are ignored.
pub fn stitch_patches(patches: &[(Patch, LabelField)], dims: Dims) -> Result<LabelField> {
    let k = patches
        .first()
        .map(|(_, f)| f.classes())
        .ok_or(Error::Uncovered { x: 0, y: 0 })?;
    let n = dims.len();
    let mut acc = vec![0.0; k * n];
    let mut count = vec![0usize; n];
    for (p, field) in patches {
        if field.classes() != k {
            return Err(Error::dims(k, field.classes()));
        }
        if p.x >= dims.width || p.y >= dims.height {
            return Err(Error::InvalidInput(format!("patch origin ({}, {}) outside image", p.x, p.y)));
        }
        let pd = field.dims();
        for py in 0..pd.height.min(dims.height - p.y) {
            for px in 0..pd.width.min(dims.width - p.x) {
                let i = dims.index(p.x + px, p.y + py);
                let j = pd.index(px, py);
                count[i] += 1;
                for l in 0..k {
                    acc[l * n + i] += field.get(l, j);
                }
            }
        }
    }
    for i in 0..n {
        if count[i] == 0 {
            return Err(Error::Uncovered {
                x: i % dims.width,
                y: i / dims.width,
            });
        }
        let mut sum = 0.0;
        for l in 0..k {
            acc[l * n + i] /= count[i] as f64;
            sum += acc[l * n + i];
        }
        for l in 0..k {
            acc[l * n + i] /= sum;
        }
    }
    LabelField::from_vec(dims, k, acc)
}
