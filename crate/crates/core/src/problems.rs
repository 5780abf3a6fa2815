//! Problem instances: random sparse-recovery ℓ1-ℓ2 problems, the discrete
//! ROF denoising model, synthetic test images and PGM input/output.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

/// `min (ρ/2)‖x‖² + ‖x‖₁ s.t. Ax = b`.
#[derive(Clone, Debug)]
pub struct L1L2Instance {
    pub a: CsrMatrix,
    pub b: Vec<f64>,
    pub rho: f64,
    pub seed: u64,
    pub x_true: Option<Vec<f64>>,
}

/// Random instance with standard-normal `A`, a planted sparse `x_true` with
/// `⌈sparsity·n⌉` standard-normal nonzeros and `b = A x_true`.
pub fn gen_l1l2(m: usize, n: usize, rho: f64, sparsity: f64, seed: u64) -> Result<L1L2Instance> {
    if m == 0 || m >= n {
        return Err(Error::InvalidParameter(format!("need 0 < m < n, got m={m}, n={n}")));
    }
    if !(sparsity > 0.0 && sparsity < 1.0) {
        return Err(Error::InvalidParameter(format!("sparsity {sparsity} not in (0, 1)")));
    }
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!("rho {rho} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut row_ptr = Vec::with_capacity(m + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::with_capacity(m * n);
    let mut vals = Vec::with_capacity(m * n);
    for _ in 0..m {
        for j in 0..n {
            col_idx.push(j);
            vals.push(StandardNormal.sample(&mut rng));
        }
        row_ptr.push(col_idx.len());
    }
    let a = CsrMatrix::from_raw(m, n, row_ptr, col_idx, vals)?;
    let k = ((sparsity * n as f64).ceil() as usize).clamp(1, n);
    let mut x_true = vec![0.0; n];
    for j in sample(&mut rng, n, k) {
        x_true[j] = StandardNormal.sample(&mut rng);
    }
    let b = a.spmv(&x_true)?;
    Ok(L1L2Instance {
        a,
        b,
        rho,
        seed,
        x_true: Some(x_true),
    })
}

/// A grayscale image stored row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::DimensionMismatch {
                context: "image pixels",
                expected: height * width,
                got: pixels.len(),
            });
        }
        Ok(Self { height, width, pixels })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pixels[i * self.width + j]
    }

    /// Column-major vectorization: entry `(i, j)` goes to `i + j·height`.
    pub fn vectorize(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.pixels.len()];
        for i in 0..self.height {
            for j in 0..self.width {
                v[i + j * self.height] = self.get(i, j);
            }
        }
        v
    }

    pub fn from_vectorized(height: usize, width: usize, v: &[f64]) -> Result<Self> {
        if v.len() != height * width {
            return Err(Error::DimensionMismatch {
                context: "vectorized image",
                expected: height * width,
                got: v.len(),
            });
        }
        let mut pixels = vec![0.0; v.len()];
        for i in 0..height {
            for j in 0..width {
                pixels[i * width + j] = v[i + j * height];
            }
        }
        Ok(Self { height, width, pixels })
    }
}

/// Forward-difference gradient of an `m×n` image (`m` rows), as a `2mn × mn`
/// matrix acting on column-major vectors. The first `mn` rows hold
/// differences along columns (`U[i+1,j] − U[i,j]`), the last `mn` along rows
/// (`U[i,j+1] − U[i,j]`); differences leaving the image are zero rows.
pub fn discrete_gradient(m: usize, n: usize) -> CsrMatrix {
    let mn = m * n;
    let mut t = Vec::with_capacity(4 * mn);
    for j in 0..n {
        for i in 0..m {
            let k = i + j * m;
            if i + 1 < m {
                t.push((k, k + 1, 1.0));
                t.push((k, k, -1.0));
            }
            if j + 1 < n {
                t.push((mn + k, k + m, 1.0));
                t.push((mn + k, k, -1.0));
            }
        }
    }
    CsrMatrix::from_triplets(2 * mn, mn, &t).expect("indices in range")
}

/// Constraint matrix `(−A_grad, I)` of the split ROF model acting on
/// `X = (u, p)`.
pub fn rof_constraint(a_grad: &CsrMatrix) -> CsrMatrix {
    let (r, c) = (a_grad.n_rows(), a_grad.n_cols());
    let mut t = Vec::with_capacity(a_grad.nnz() + r);
    for i in 0..r {
        let (cols, vals) = a_grad.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            t.push((i, j, -v));
        }
        t.push((i, c + i, 1.0));
    }
    CsrMatrix::from_triplets(r, c + r, &t).expect("indices in range")
}

/// Adds `sigma`-scaled standard-normal noise to every pixel.
pub fn add_noise(image: &GrayImage, sigma: f64, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = image
        .pixels
        .iter()
        .map(|&p| {
            let e: f64 = StandardNormal.sample(&mut rng);
            p + sigma * e
        })
        .collect();
    GrayImage {
        height: image.height,
        width: image.width,
        pixels,
    }
}

/// Synthetic test image: two rectangles and a disk on a dark background, with
/// a smooth horizontal ramp and vertical ripple added everywhere.
/// Intensities in `[0, 255]`.
pub fn shapes(height: usize, width: usize) -> GrayImage {
    let (h, w) = (height as f64, width as f64);
    let mut pixels = vec![0.0; height * width];
    for i in 0..height {
        for j in 0..width {
            let (y, x) = ((i as f64 + 0.5) / h, (j as f64 + 0.5) / w);
            let mut v = 30.0;
            if (0.1..0.45).contains(&y) && (0.1..0.6).contains(&x) {
                v = 170.0;
            }
            if (0.55..0.9).contains(&y) && (0.15..0.4).contains(&x) {
                v = 110.0;
            }
            if (y - 0.6).powi(2) + (x - 0.7).powi(2) < 0.2f64.powi(2) {
                v = 160.0;
            }
            pixels[i * width + j] = (v + 60.0 * x + 40.0 * (6.0 * y).sin()).clamp(0.0, 255.0);
        }
    }
    GrayImage {
        height,
        width,
        pixels,
    }
}

/// Pixel values are stored on `[0, 255]`; the ROF data term works on `[0, 1]`.
pub const INTENSITY_MAX: f64 = 255.0;

/// Discrete ROF model `min (ρ/2)‖u − ξ‖² + ‖A_grad u‖_{2,1}`.
#[derive(Clone, Debug)]
pub struct RofInstance {
    pub height: usize,
    pub width: usize,
    /// Column-major noisy image, intensities divided by [`INTENSITY_MAX`].
    pub xi: Vec<f64>,
    pub rho: f64,
    pub a_grad: CsrMatrix,
    pub seed: u64,
}

impl RofInstance {
    pub fn new(noisy: &GrayImage, rho: f64, seed: u64) -> Result<Self> {
        if noisy.height < 2 || noisy.width < 2 {
            return Err(Error::InvalidParameter("image must be at least 2×2".into()));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidParameter(format!("rho {rho} must be positive")));
        }
        Ok(Self {
            height: noisy.height,
            width: noisy.width,
            xi: noisy.vectorize().iter().map(|v| v / INTENSITY_MAX).collect(),
            rho,
            a_grad: discrete_gradient(noisy.height, noisy.width),
            seed,
        })
    }

    /// Noisy synthetic shapes image.
    pub fn shapes(height: usize, width: usize, rho: f64, noise: f64, seed: u64) -> Result<Self> {
        Self::new(&add_noise(&shapes(height, width), noise, seed), rho, seed)
    }

    pub fn npix(&self) -> usize {
        self.xi.len()
    }

    /// Image on the `[0, 255]` scale from a vectorized solution.
    pub fn to_image(&self, u: &[f64]) -> Result<GrayImage> {
        let v: Vec<f64> = u.iter().map(|x| x * INTENSITY_MAX).collect();
        GrayImage::from_vectorized(self.height, self.width, &v)
    }
}

/// Raw PGM raster with its declared maximum value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

impl Pgm {
    /// Intensities rescaled to `[0, 255]`.
    pub fn to_image(&self) -> GrayImage {
        let s = 255.0 / self.maxval as f64;
        GrayImage {
            height: self.height,
            width: self.width,
            pixels: self.data.iter().map(|&v| v as f64 * s).collect(),
        }
    }

    /// 8-bit raster from an image, rounding and clamping to `[0, 255]`.
    pub fn from_image(img: &GrayImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            maxval: 255,
            data: img.pixels.iter().map(|v| v.round().clamp(0.0, 255.0) as u16).collect(),
        }
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = header_token(bytes, &mut pos)?;
        let binary = match magic.as_str() {
            "P2" => false,
            "P5" => true,
            other => return Err(Error::Pgm(format!("unsupported magic {other:?}"))),
        };
        let width = header_number(bytes, &mut pos, "width")?;
        let height = header_number(bytes, &mut pos, "height")?;
        let maxval = header_number(bytes, &mut pos, "maxval")?;
        if width == 0 || height == 0 {
            return Err(Error::Pgm("zero dimension".into()));
        }
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Pgm(format!("maxval {maxval} out of range")));
        }
        let count = width * height;
        let mut data = Vec::with_capacity(count);
        if binary {
            // exactly one whitespace byte separates the header from the raster
            if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
                return Err(Error::Pgm("missing raster separator".into()));
            }
            pos += 1;
            let bpp = if maxval < 256 { 1 } else { 2 };
            let raster = &bytes[pos..];
            if raster.len() < count * bpp {
                return Err(Error::Pgm(format!(
                    "truncated raster: need {} bytes, have {}",
                    count * bpp,
                    raster.len()
                )));
            }
            for k in 0..count {
                let v = if bpp == 1 {
                    raster[k] as u16
                } else {
                    u16::from_be_bytes([raster[2 * k], raster[2 * k + 1]])
                };
                data.push(v);
            }
        } else {
            for _ in 0..count {
                let v = header_number(bytes, &mut pos, "pixel").map_err(|_| Error::Pgm("truncated ASCII raster".into()))?;
                data.push(v as u16);
            }
        }
        if data.iter().any(|&v| v as usize > maxval) {
            return Err(Error::Pgm("pixel exceeds maxval".into()));
        }
        Ok(Self {
            width,
            height,
            maxval: maxval as u16,
            data,
        })
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n{}\n", self.width, self.height, self.maxval)?;
        if self.maxval < 256 {
            w.write_all(&self.data.iter().map(|&v| v as u8).collect::<Vec<_>>())?;
        } else {
            for &v in &self.data {
                w.write_all(&v.to_be_bytes())?;
            }
        }
        Ok(())
    }

    pub fn write_ascii<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "P2\n{} {}\n{}", self.width, self.height, self.maxval)?;
        for row in self.data.chunks(self.width) {
            let line: Vec<String> = row.iter().map(u16::to_string).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        if bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else if bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        } else {
            break;
        }
    }
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Pgm("unexpected end of header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| Error::Pgm(format!("bad {what} {tok:?}")))
}

pub fn pgm_read(path: impl AsRef<Path>) -> Result<Pgm> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Pgm::parse(&bytes)
}

/// Writes a binary (P5) PGM.
pub fn pgm_write(path: impl AsRef<Path>, pgm: &Pgm) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    pgm.write_binary(f)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceKind {
    L1l2,
    Rof,
}

/// Serialized instance description; the data are regenerated from the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    pub kind: InstanceKind,
    pub m: usize,
    pub n: usize,
    pub rho: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<f64>,
    /// Noise amplitude for ROF instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    /// PGM file to denoise instead of the synthetic shapes image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

pub const DEFAULT_SPARSITY: f64 = 0.25;
pub const DEFAULT_NOISE: f64 = 40.0;

impl InstanceSpec {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }

    pub fn build_l1l2(&self) -> Result<L1L2Instance> {
        if self.kind != InstanceKind::L1l2 {
            return Err(Error::InvalidParameter("instance is not l1l2".into()));
        }
        gen_l1l2(self.m, self.n, self.rho, self.sparsity.unwrap_or(DEFAULT_SPARSITY), self.seed)
    }

    /// Builds the ROF instance; `m` is the image height and `n` its width.
    pub fn build_rof(&self) -> Result<RofInstance> {
        if self.kind != InstanceKind::Rof {
            return Err(Error::InvalidParameter("instance is not rof".into()));
        }
        let noise = self.noise.unwrap_or(DEFAULT_NOISE);
        let clean = match &self.image {
            Some(path) => {
                let img = pgm_read(path)?.to_image();
                if img.height != self.m || img.width != self.n {
                    return Err(Error::InvalidParameter(format!(
                        "image is {}×{}, instance says {}×{}",
                        img.height, img.width, self.m, self.n
                    )));
                }
                img
            }
            None => shapes(self.m, self.n),
        };
        RofInstance::new(&add_noise(&clean, noise, self.seed), self.rho, self.seed)
    }
}
