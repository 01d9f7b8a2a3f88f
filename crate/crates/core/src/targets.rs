//! Network inputs and per-disc Gaussian target heatmaps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ndat, Tensor};

/// Number of discs labeled per subject unless configured otherwise.
pub const DEFAULT_NUM_DISCS: usize = 11;
/// Truncation radius of each target bump, in pixels.
pub const DEFAULT_TARGET_RADIUS: usize = 10;

/// A 2D image with per-disc annotations. Absent annotations mark discs that
/// must not influence training or evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCase {
    /// `[H, W]`, values in `[0, 1]` once normalized.
    pub image: Tensor<f32>,
    /// Physical size of one pixel along (rows, cols), in millimetres.
    pub spacing_mm: (f64, f64),
    /// Pixel position `(row, col)` of each disc, superior to inferior.
    pub discs: Vec<Option<(f64, f64)>>,
}

impl LabeledCase {
    pub fn num_discs(&self) -> usize {
        self.discs.len()
    }

    pub fn visibility(&self) -> Vec<bool> {
        self.discs.iter().map(Option::is_some).collect()
    }

    pub fn rows(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.rank() != 2 {
            return Err(Error::Shape(format!(
                "case image must be 2D, got {:?}",
                self.image.shape()
            )));
        }
        let (rows, cols) = (self.rows(), self.cols());
        for (disc, p) in self.discs.iter().enumerate() {
            if let Some((r, c)) = *p {
                if !(r >= 0.0 && c >= 0.0 && r <= (rows - 1) as f64 && c <= (cols - 1) as f64) {
                    return Err(Error::AnnotationOutOfBounds {
                        disc,
                        row: r,
                        col: c,
                        rows,
                        cols,
                    });
                }
            }
        }
        Ok(())
    }
}

/// V target maps plus the visibility flag of each.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    /// `[V, H, W]`.
    pub maps: Tensor<f32>,
    pub visibility: Vec<bool>,
}

impl HeatmapStack {
    pub fn num_discs(&self) -> usize {
        self.visibility.len()
    }
}

/// Mean of `count` consecutive slices of a `[S, H, W]` volume centred on
/// `center`. The window is shifted inward at the volume borders and shrunk
/// to the whole volume when it has fewer than `count` slices.
pub fn average_slices(volume: &Tensor<f32>, center: usize, count: usize) -> Result<Tensor<f32>> {
    let &[slices, h, w] = volume.shape() else {
        return Err(Error::Shape(format!(
            "slice averaging needs a [S, H, W] volume, got {:?}",
            volume.shape()
        )));
    };
    if count == 0 {
        return Err(Error::Config("slice count must be at least 1".into()));
    }
    let count = count.min(slices);
    let start = center.saturating_sub(count / 2).min(slices - count);
    let mut acc = vec![0.0f64; h * w];
    for s in start..start + count {
        for (a, &v) in acc.iter_mut().zip(volume.slice0(s)) {
            *a += v as f64;
        }
    }
    let data = acc.into_iter().map(|v| (v / count as f64) as f32).collect();
    Tensor::new(vec![h, w], data)
}

/// Min-max rescale to `[0, 1]`. Constant images map to all zeros.
pub fn normalize01(image: &Tensor<f32>) -> Tensor<f32> {
    let (lo, hi) = (image.min_value(), image.max_value());
    let range = hi - lo;
    let mut out = image.clone();
    if !(range > 0.0) {
        out.data_mut().fill(0.0);
        return out;
    }
    for v in out.data_mut() {
        *v = ((*v - lo) / range).clamp(0.0, 1.0);
    }
    out
}

/// Parameters of the target bump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetParams {
    pub radius: usize,
    /// Gaussian standard deviation in pixels; `None` means `radius / 3`.
    pub sigma: Option<f64>,
}

impl Default for TargetParams {
    fn default() -> Self {
        Self {
            radius: DEFAULT_TARGET_RADIUS,
            sigma: None,
        }
    }
}

impl TargetParams {
    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(self.radius as f64 / 3.0)
    }
}

/// Builds one unit-peak Gaussian bump per visible disc, centred on the
/// annotated pixel and truncated beyond `radius`. Invisible discs get an
/// all-zero channel.
pub fn make_target(case: &LabeledCase, params: &TargetParams) -> Result<HeatmapStack> {
    case.validate()?;
    let (rows, cols) = (case.rows(), case.cols());
    let v = case.num_discs();
    let sigma = params.sigma();
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("target sigma must be positive, got {sigma}")));
    }
    let r2max = (params.radius * params.radius) as f64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut maps = Tensor::zeros(vec![v, rows, cols]);
    let plane = rows * cols;
    for (i, p) in case.discs.iter().enumerate() {
        let Some((r, c)) = *p else { continue };
        let (cr, cc) = (r.round() as isize, c.round() as isize);
        let rad = params.radius as isize;
        let ch = &mut maps.data_mut()[i * plane..(i + 1) * plane];
        for y in (cr - rad).max(0)..=(cr + rad).min(rows as isize - 1) {
            for x in (cc - rad).max(0)..=(cc + rad).min(cols as isize - 1) {
                let d2 = ((y - cr) * (y - cr) + (x - cc) * (x - cc)) as f64;
                if d2 <= r2max {
                    ch[y as usize * cols + x as usize] = (-d2 * inv).exp() as f32;
                }
            }
        }
    }
    Ok(HeatmapStack {
        maps,
        visibility: case.visibility(),
    })
}

/// Bilinear resampling of a `[H, W]` image (pixel centres aligned).
pub fn resize_bilinear(image: &Tensor<f32>, out_rows: usize, out_cols: usize) -> Result<Tensor<f32>> {
    let &[h, w] = image.shape() else {
        return Err(Error::Shape(format!("resize needs a 2D image, got {:?}", image.shape())));
    };
    if (h, w) == (out_rows, out_cols) {
        return Ok(image.clone());
    }
    let src = image.data();
    let sy = h as f64 / out_rows as f64;
    let sx = w as f64 / out_cols as f64;
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for oy in 0..out_rows {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_cols {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * w + x0] as f64 * (1.0 - tx) + src[y0 * w + x1] as f64 * tx;
            let bot = src[y1 * w + x0] as f64 * (1.0 - tx) + src[y1 * w + x1] as f64 * tx;
            out.push((top * (1.0 - ty) + bot * ty) as f32);
        }
    }
    Tensor::new(vec![out_rows, out_cols], out)
}

/// Resizes a case to `(rows, cols)`, scaling annotations and pixel spacing
/// so that physical distances are preserved.
pub fn resize_case(case: &LabeledCase, rows: usize, cols: usize) -> Result<LabeledCase> {
    let (h, w) = (case.rows() as f64, case.cols() as f64);
    let (fy, fx) = (rows as f64 / h, cols as f64 / w);
    let discs = case
        .discs
        .iter()
        .map(|p| {
            p.map(|(r, c)| {
                (
                    ((r + 0.5) * fy - 0.5).clamp(0.0, rows as f64 - 1.0),
                    ((c + 0.5) * fx - 0.5).clamp(0.0, cols as f64 - 1.0),
                )
            })
        })
        .collect();
    Ok(LabeledCase {
        image: resize_bilinear(&case.image, rows, cols)?,
        spacing_mm: (case.spacing_mm.0 / fy, case.spacing_mm.1 / fx),
        discs,
    })
}

/// JSON sidecar stored next to each case image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    pub spacing_mm: [f64; 2],
    pub discs: Vec<Option<[f64; 2]>>,
}

impl From<&LabeledCase> for Annotations {
    fn from(c: &LabeledCase) -> Self {
        Self {
            spacing_mm: [c.spacing_mm.0, c.spacing_mm.1],
            discs: c.discs.iter().map(|p| p.map(|(r, c)| [r, c])).collect(),
        }
    }
}

/// Writes `<stem>.ndat` and `<stem>.json` into `dir`; returns both file names.
pub fn save_case(dir: &Path, stem: &str, case: &LabeledCase) -> Result<(String, String)> {
    let image = format!("{stem}.ndat");
    let ann = format!("{stem}.json");
    ndat::write(&dir.join(&image), &case.image)?;
    crate::io::write_json(&dir.join(&ann), &Annotations::from(case))?;
    Ok((image, ann))
}

pub fn load_case(image: &Path, annotations: &Path) -> Result<LabeledCase> {
    let img = ndat::read(image)?;
    let ann: Annotations = crate::io::read_json(annotations)?;
    if !(ann.spacing_mm[0] > 0.0 && ann.spacing_mm[1] > 0.0) {
        return Err(Error::Config(format!(
            "{}: spacing_mm must be positive",
            annotations.display()
        )));
    }
    let case = LabeledCase {
        image: img,
        spacing_mm: (ann.spacing_mm[0], ann.spacing_mm[1]),
        discs: ann.discs.iter().map(|p| p.map(|[r, c]| (r, c))).collect(),
    };
    case.validate()?;
    Ok(case)
}
