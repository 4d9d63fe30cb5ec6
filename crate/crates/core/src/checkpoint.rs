//! Model checkpoint file format.
//!
//! Layout (all integers and floats little-endian):
//! magic `DVAE-CKPT`, format version, manifold descriptor, likelihood and
//! KL mode tags, walk config, time bounds, the dense layers (shapes,
//! activations, f64 parameters), optional optimizer state, and the noise
//! seed/counter. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::manifold::Manifold;
use crate::model::{DvaeModel, KlMode, Likelihood};
use crate::nets::{Activation, AdamHyper, AdamState, DenseLayer, EncoderHead, MlpNetwork};
use crate::rng::NoiseSequencer;

const MAGIC: &[u8; 9] = b"DVAE-CKPT";
const VERSION: u32 = 1;

/// Optimizer state saved alongside the model, one entry per dense layer in
/// [`DvaeModel::layers`] order.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub hyper: AdamHyper,
    pub step: u64,
    pub per_layer: Vec<AdamState>,
}

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        self.inner.write_all(&[v])?;
        Ok(())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }
    fn f64_slice(&mut self, vs: &[f64]) -> Result<()> {
        for v in vs {
            self.f64(*v)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inner: R,
    path: String,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|_| Error::TruncatedFile {
            path: self.path.clone(),
            needed: n,
            had: 0,
        })?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Relu => 1,
        Activation::Tanh => 2,
        Activation::Sigmoid => 3,
    }
}

fn activation_from(tag: u8) -> Result<Activation> {
    Ok(match tag {
        0 => Activation::Identity,
        1 => Activation::Relu,
        2 => Activation::Tanh,
        3 => Activation::Sigmoid,
        t => return Err(Error::BadCheckpoint(format!("unknown activation tag {t}"))),
    })
}

fn write_layer<W: Write>(w: &mut Writer<W>, layer: &DenseLayer) -> Result<()> {
    w.u32(layer.out_dim() as u32)?;
    w.u32(layer.in_dim() as u32)?;
    w.u8(activation_tag(layer.activation))?;
    w.f64_slice(layer.weights.as_slice().expect("weights are contiguous"))?;
    w.f64_slice(layer.bias.as_slice().expect("bias is contiguous"))?;
    Ok(())
}

fn read_layer<R: Read>(r: &mut Reader<R>) -> Result<DenseLayer> {
    let out = r.u32()? as usize;
    let inp = r.u32()? as usize;
    let activation = activation_from(r.u8()?)?;
    let weights = Array2::from_shape_vec((out, inp), r.f64_vec(out * inp)?)
        .map_err(|e| Error::BadCheckpoint(e.to_string()))?;
    let bias = Array1::from_vec(r.f64_vec(out)?);
    Ok(DenseLayer {
        weights,
        bias,
        activation,
    })
}

fn write_manifold<W: Write>(w: &mut Writer<W>, m: &Manifold) -> Result<()> {
    match m {
        Manifold::Sphere { dim } => {
            w.u8(0)?;
            w.u32(*dim as u32)
        }
        Manifold::FlatTorus2 => w.u8(1),
        Manifold::EmbeddedTorus { major, minor } => {
            w.u8(2)?;
            w.f64(*major)?;
            w.f64(*minor)
        }
        Manifold::ProjectiveSphere { dim } => {
            w.u8(3)?;
            w.u32(*dim as u32)
        }
        Manifold::Euclidean { dim } => {
            w.u8(4)?;
            w.u32(*dim as u32)
        }
    }
}

fn read_manifold<R: Read>(r: &mut Reader<R>) -> Result<Manifold> {
    Ok(match r.u8()? {
        0 => Manifold::sphere(r.u32()? as usize)?,
        1 => Manifold::flat_torus2(),
        2 => {
            let major = r.f64()?;
            let minor = r.f64()?;
            Manifold::embedded_torus(major, minor)?
        }
        3 => Manifold::projective_sphere(r.u32()? as usize)?,
        4 => Manifold::euclidean(r.u32()? as usize)?,
        t => return Err(Error::BadCheckpoint(format!("unknown manifold tag {t}"))),
    })
}

/// Write a model (and optionally its optimizer state) to `path`.
pub fn save(path: &Path, model: &DvaeModel, optimizer: Option<&OptimizerState>) -> Result<()> {
    let mut w = Writer {
        inner: BufWriter::new(File::create(path)?),
    };
    w.inner.write_all(MAGIC)?;
    w.u32(VERSION)?;
    write_manifold(&mut w, &model.manifold)?;
    w.u8(match model.likelihood {
        Likelihood::Gaussian => 0,
        Likelihood::Bernoulli => 1,
    })?;
    w.u8(match model.kl_mode {
        KlMode::Asymptotic => 0,
        KlMode::Numeric => 1,
        KlMode::Gaussian => 2,
    })?;
    w.u32(model.walk.steps as u32)?;
    w.u64(model.walk.seed)?;
    w.f64(model.head.t_min)?;
    w.f64(model.head.t_max)?;

    w.u32(model.trunk.layers.len() as u32)?;
    for layer in &model.trunk.layers {
        write_layer(&mut w, layer)?;
    }
    write_layer(&mut w, &model.head.ambient)?;
    write_layer(&mut w, &model.head.time)?;
    w.u32(model.decoder.layers.len() as u32)?;
    for layer in &model.decoder.layers {
        write_layer(&mut w, layer)?;
    }

    match optimizer {
        Some(opt) => {
            w.u8(1)?;
            w.f64(opt.hyper.lr)?;
            w.f64(opt.hyper.beta1)?;
            w.f64(opt.hyper.beta2)?;
            w.f64(opt.hyper.eps)?;
            w.u64(opt.step)?;
            w.u32(opt.per_layer.len() as u32)?;
            for st in &opt.per_layer {
                w.f64_slice(st.m_weights.as_slice().unwrap())?;
                w.f64_slice(st.v_weights.as_slice().unwrap())?;
                w.f64_slice(st.m_bias.as_slice().unwrap())?;
                w.f64_slice(st.v_bias.as_slice().unwrap())?;
            }
        }
        None => w.u8(0)?,
    }
    w.u64(model.noise.seed)?;
    w.u64(model.noise.counter)?;
    w.inner.flush()?;
    Ok(())
}

/// Read a model back from `path`.
pub fn load(path: &Path) -> Result<(DvaeModel, Option<OptimizerState>)> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
        path: path.display().to_string(),
    };
    let magic = r.bytes(MAGIC.len())?;
    if magic != MAGIC {
        return Err(Error::BadCheckpoint(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::BadCheckpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let manifold = read_manifold(&mut r)?;
    let likelihood = match r.u8()? {
        0 => Likelihood::Gaussian,
        1 => Likelihood::Bernoulli,
        t => return Err(Error::BadCheckpoint(format!("unknown likelihood tag {t}"))),
    };
    let kl_mode = match r.u8()? {
        0 => KlMode::Asymptotic,
        1 => KlMode::Numeric,
        2 => KlMode::Gaussian,
        t => return Err(Error::BadCheckpoint(format!("unknown KL tag {t}"))),
    };
    let steps = r.u32()? as usize;
    let walk_seed = r.u64()?;
    let t_min = r.f64()?;
    let t_max = r.f64()?;

    let trunk_n = r.u32()? as usize;
    let mut trunk_layers = Vec::with_capacity(trunk_n);
    for _ in 0..trunk_n {
        trunk_layers.push(read_layer(&mut r)?);
    }
    let ambient = read_layer(&mut r)?;
    let time = read_layer(&mut r)?;
    let dec_n = r.u32()? as usize;
    let mut dec_layers = Vec::with_capacity(dec_n);
    for _ in 0..dec_n {
        dec_layers.push(read_layer(&mut r)?);
    }

    let optimizer = if r.u8()? == 1 {
        let hyper = AdamHyper {
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
        };
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let shapes: Vec<(usize, usize)> = trunk_layers
            .iter()
            .chain([&ambient, &time])
            .chain(dec_layers.iter())
            .map(|l| (l.out_dim(), l.in_dim()))
            .collect();
        if count != shapes.len() {
            return Err(Error::BadCheckpoint(format!(
                "optimizer covers {count} layers, model has {}",
                shapes.len()
            )));
        }
        let mut per_layer = Vec::with_capacity(count);
        for (out, inp) in shapes {
            per_layer.push(AdamState {
                m_weights: Array2::from_shape_vec((out, inp), r.f64_vec(out * inp)?)
                    .map_err(|e| Error::BadCheckpoint(e.to_string()))?,
                v_weights: Array2::from_shape_vec((out, inp), r.f64_vec(out * inp)?)
                    .map_err(|e| Error::BadCheckpoint(e.to_string()))?,
                m_bias: Array1::from_vec(r.f64_vec(out)?),
                v_bias: Array1::from_vec(r.f64_vec(out)?),
            });
        }
        Some(OptimizerState {
            hyper,
            step,
            per_layer,
        })
    } else {
        None
    };
    let noise_seed = r.u64()?;
    let noise_counter = r.u64()?;

    let model = DvaeModel {
        manifold,
        trunk: MlpNetwork::new(trunk_layers)?,
        head: EncoderHead::new(ambient, time, t_min, t_max)?,
        decoder: MlpNetwork::new(dec_layers)?,
        walk: crate::diffusion::RandomWalkConfig::new(steps, walk_seed)?,
        likelihood,
        kl_mode,
        noise: NoiseSequencer::with_counter(noise_seed, noise_counter),
    };
    Ok((model, optimizer))
}
