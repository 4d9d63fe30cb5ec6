//! Datasets: synthetic translated periodic pictures and MNIST.
//!
//! Pictures are 64x64 samplings of periodic functions on [-pi, pi)^2; a
//! translation dataset holds every integer cyclic shift of one base
//! picture on a G x G grid, affinely rescaled to [0, 1]. Pixels are
//! quantized to f32 on construction so that the in-memory values and the
//! container file contents are the same numbers exactly.

use std::f64::consts::{PI, TAU};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::substream;

pub const PICTURE_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PictureMode {
    /// cos(theta) + cos(phi): only the lowest Fourier components.
    Simple,
    /// Re(sum gamma^(|k|+|l|-1) a_kl exp(i k theta + i l phi)) with a_kl
    /// i.i.d. standard complex Gaussian.
    RandomFourier,
}

/// Recipe for a base picture; random coefficients are reproducible from the
/// seed.
#[derive(Debug, Clone)]
pub struct PictureSpec {
    pub mode: PictureMode,
    pub cutoff: usize,
    pub discount: f64,
    pub seed: u64,
}

impl PictureSpec {
    pub fn simple() -> Self {
        PictureSpec {
            mode: PictureMode::Simple,
            cutoff: 1,
            discount: 1.0,
            seed: 0,
        }
    }

    pub fn random_fourier(cutoff: usize, discount: f64, seed: u64) -> Result<Self> {
        if cutoff == 0 {
            return Err(Error::InvalidConfig("cutoff must be at least 1".into()));
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "discount must be in (0, 1], got {discount}"
            )));
        }
        Ok(PictureSpec {
            mode: PictureMode::RandomFourier,
            cutoff,
            discount,
            seed,
        })
    }

    /// The complex coefficient matrix a_kl, materialized from the seed in
    /// row-major (k, l) order over [-N, N]^2.
    fn coefficients(&self) -> Vec<(f64, f64)> {
        let side = 2 * self.cutoff + 1;
        let mut rng = substream(self.seed, 0);
        (0..side * side)
            .map(|_| (rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect()
    }
}

/// Sample the spec's picture on the uniform 64-grid of [-pi, pi)^2, native
/// (unscaled) range. Pixel (i, j) is the value at theta_i = -pi + 2 pi i/64,
/// phi_j likewise.
pub fn gen_picture(spec: &PictureSpec) -> Array2<f64> {
    let g = PICTURE_SIZE;
    let angle = |i: usize| -PI + TAU * i as f64 / g as f64;
    match spec.mode {
        PictureMode::Simple => {
            Array2::from_shape_fn((g, g), |(i, j)| angle(i).cos() + angle(j).cos())
        }
        PictureMode::RandomFourier => {
            let n = spec.cutoff as i64;
            let side = (2 * n + 1) as usize;
            let coef = spec.coefficients();
            Array2::from_shape_fn((g, g), |(i, j)| {
                let theta = angle(i);
                let phi = angle(j);
                let mut acc = 0.0;
                for k in -n..=n {
                    for l in -n..=n {
                        let (re, im) =
                            coef[((k + n) as usize) * side + (l + n) as usize];
                        let weight = spec.discount.powi((k.abs() + l.abs() - 1) as i32);
                        let arg = k as f64 * theta + l as f64 * phi;
                        // Re((re + i im) e^(i arg))
                        acc += weight * (re * arg.cos() - im * arg.sin());
                    }
                }
                acc
            })
        }
    }
}

/// The affine map used to bring a picture into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelScale {
    pub min: f64,
    pub max: f64,
}

impl PixelScale {
    pub fn apply(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.5
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }
}

/// All G x G cyclic translations of one periodic picture, pixels in [0, 1].
#[derive(Debug, Clone)]
pub struct TranslationDataset {
    /// (G*G, 64*64) pixel matrix; record g*i + j is the base picture rolled
    /// by (i, j).
    pub pixels: Array2<f64>,
    /// Shift pair per record.
    pub shifts: Vec<(u32, u32)>,
    pub grid: usize,
    pub scale: PixelScale,
    /// Provenance recorded into the container metadata.
    pub meta: String,
}

impl TranslationDataset {
    pub fn len(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cyclically roll `base` by (si, sj): out[x][y] = base[(x - si) mod 64][(y - sj) mod 64].
pub fn roll(base: &Array2<f64>, si: usize, sj: usize) -> Array2<f64> {
    let (h, w) = base.dim();
    Array2::from_shape_fn((h, w), |(x, y)| {
        base[[(x + h - si % h) % h, (y + w - sj % w) % w]]
    })
}

/// Build the translation dataset of `pic` on a G x G shift grid (G must
/// divide 64). Pixels are scaled to [0, 1] with the base picture's native
/// range and quantized to f32.
pub fn translate_dataset(pic: &Array2<f64>, grid: usize, meta: String) -> Result<TranslationDataset> {
    let g = PICTURE_SIZE;
    if pic.dim() != (g, g) {
        return Err(Error::ShapeMismatch(format!(
            "picture is {:?}, expected ({g}, {g})",
            pic.dim()
        )));
    }
    if grid == 0 || g % grid != 0 {
        return Err(Error::BadGrid {
            grid,
            picture: g,
        });
    }
    let stride = g / grid;
    let lo = pic.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = pic.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = PixelScale { min: lo, max: hi };
    let mut pixels = Array2::zeros((grid * grid, g * g));
    let mut shifts = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        for j in 0..grid {
            let rolled = roll(pic, i * stride, j * stride);
            let row = grid * i + j;
            for (p, v) in rolled.iter().enumerate() {
                pixels[[row, p]] = scale.apply(*v) as f32 as f64;
            }
            shifts.push(((i * stride) as u32, (j * stride) as u32));
        }
    }
    Ok(TranslationDataset {
        pixels,
        shifts,
        grid,
        scale,
        meta,
    })
}

const DS_MAGIC: &[u8; 8] = b"DVAEDS1\0";

/// Write the dataset container: magic, LE u32 count/height/width, f32
/// pixels record-major, u32 shift pairs, then a length-prefixed UTF-8
/// metadata block.
pub fn write_dataset(path: &Path, ds: &TranslationDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DS_MAGIC)?;
    let count = ds.len() as u32;
    let side = PICTURE_SIZE as u32;
    w.write_all(&count.to_le_bytes())?;
    w.write_all(&side.to_le_bytes())?;
    w.write_all(&side.to_le_bytes())?;
    for v in ds.pixels.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    for (i, j) in &ds.shifts {
        w.write_all(&i.to_le_bytes())?;
        w.write_all(&j.to_le_bytes())?;
    }
    let meta = format!(
        "{}\ngrid = {}\nscale_min = {:e}\nscale_max = {:e}\n",
        ds.meta, ds.grid, ds.scale.min, ds.scale.max
    );
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(meta.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<TranslationDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let need = |n: usize, at: usize| -> Result<()> {
        if buf.len() < at + n {
            Err(Error::TruncatedFile {
                path: path.display().to_string(),
                needed: at + n,
                had: buf.len(),
            })
        } else {
            Ok(())
        }
    };
    need(8, 0)?;
    if &buf[..8] != DS_MAGIC {
        return Err(Error::BadMagic {
            path: path.display().to_string(),
            expected: u32::from_be_bytes(DS_MAGIC[..4].try_into().unwrap()),
            got: u32::from_be_bytes(buf[..4.min(buf.len())].try_into().unwrap_or([0; 4])),
        });
    }
    let mut at = 8;
    let u32_at = |at: &mut usize| -> Result<u32> {
        need(4, *at)?;
        let v = u32::from_le_bytes(buf[*at..*at + 4].try_into().unwrap());
        *at += 4;
        Ok(v)
    };
    let count = u32_at(&mut at)? as usize;
    let height = u32_at(&mut at)? as usize;
    let width = u32_at(&mut at)? as usize;
    if height != PICTURE_SIZE || width != PICTURE_SIZE {
        return Err(Error::InvalidConfig(format!(
            "container pictures are {height}x{width}, expected 64x64"
        )));
    }
    let pix_n = count * height * width;
    need(4 * pix_n, at)?;
    let mut pixels = Array2::zeros((count, height * width));
    for (p, slot) in pixels.iter_mut().enumerate() {
        let off = at + 4 * p;
        *slot = f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as f64;
    }
    at += 4 * pix_n;
    let mut shifts = Vec::with_capacity(count);
    for _ in 0..count {
        let i = u32_at(&mut at)?;
        let j = u32_at(&mut at)?;
        shifts.push((i, j));
    }
    let meta_len = u32_at(&mut at)? as usize;
    need(meta_len, at)?;
    let meta_full = String::from_utf8(buf[at..at + meta_len].to_vec())
        .map_err(|e| Error::InvalidConfig(format!("metadata is not UTF-8: {e}")))?;
    // recover grid and scale from the metadata block
    let mut grid = (count as f64).sqrt().round() as usize;
    let mut scale = PixelScale { min: 0.0, max: 1.0 };
    let mut meta_head = Vec::new();
    for line in meta_full.lines() {
        let mut parts = line.splitn(2, '=');
        let key = parts.next().unwrap_or("").trim();
        let value = parts.next().unwrap_or("").trim();
        match key {
            "grid" => grid = value.parse().unwrap_or(grid),
            "scale_min" => scale.min = value.parse().unwrap_or(0.0),
            "scale_max" => scale.max = value.parse().unwrap_or(1.0),
            _ => meta_head.push(line.to_string()),
        }
    }
    Ok(TranslationDataset {
        pixels,
        shifts,
        grid,
        scale,
        meta: meta_head.join("\n"),
    })
}

/// MNIST-style image set, pixels scaled to [0, 1].
#[derive(Debug, Clone)]
pub struct MnistSet {
    pub images: Array2<f64>, // (count, 28*28)
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Parse the big-endian IDX pair (images + labels), dividing pixels by 255.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<MnistSet> {
    let img_buf = std::fs::read(images_path)?;
    let lab_buf = std::fs::read(labels_path)?;
    let be = |buf: &[u8], at: usize, path: &Path| -> Result<u32> {
        if buf.len() < at + 4 {
            return Err(Error::TruncatedFile {
                path: path.display().to_string(),
                needed: at + 4,
                had: buf.len(),
            });
        }
        Ok(u32::from_be_bytes(buf[at..at + 4].try_into().unwrap()))
    };
    let magic = be(&img_buf, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.display().to_string(),
            expected: IDX_IMAGES_MAGIC,
            got: magic,
        });
    }
    let count = be(&img_buf, 4, images_path)? as usize;
    let rows = be(&img_buf, 8, images_path)? as usize;
    let cols = be(&img_buf, 12, images_path)? as usize;
    let pix_n = count * rows * cols;
    if img_buf.len() < 16 + pix_n {
        return Err(Error::TruncatedFile {
            path: images_path.display().to_string(),
            needed: 16 + pix_n,
            had: img_buf.len(),
        });
    }
    let magic = be(&lab_buf, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.display().to_string(),
            expected: IDX_LABELS_MAGIC,
            got: magic,
        });
    }
    let lab_count = be(&lab_buf, 4, labels_path)? as usize;
    if lab_buf.len() < 8 + lab_count {
        return Err(Error::TruncatedFile {
            path: labels_path.display().to_string(),
            needed: 8 + lab_count,
            had: lab_buf.len(),
        });
    }
    if lab_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: lab_count,
        });
    }
    let mut images = Array2::zeros((count, rows * cols));
    for (p, slot) in images.iter_mut().enumerate() {
        *slot = img_buf[16 + p] as f64 / 255.0;
    }
    Ok(MnistSet {
        images,
        labels: lab_buf[8..8 + count].to_vec(),
        rows,
        cols,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinarizeMode {
    /// Bernoulli(pixel) per draw, seeded.
    Stochastic,
    /// 1 iff pixel >= 0.5.
    Threshold,
}

/// Binarize a [0, 1] image set to {0, 1} pixels.
pub fn binarize(set: &MnistSet, seed: u64, mode: BinarizeMode) -> MnistSet {
    let mut rng = substream(seed, 1);
    let images = set.images.mapv(|p| match mode {
        BinarizeMode::Stochastic => {
            if rng.gen::<f64>() < p {
                1.0
            } else {
                0.0
            }
        }
        BinarizeMode::Threshold => {
            if p >= 0.5 {
                1.0
            } else {
                0.0
            }
        }
    });
    MnistSet {
        images,
        labels: set.labels.clone(),
        rows: set.rows,
        cols: set.cols,
    }
}
