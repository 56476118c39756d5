//! Model bundle: everything needed to run inference, bit-exact.
//!
//! ```text
//! "SPDM" | version u32 | config text (len u32, UTF-8) | data shape
//! | selection transform | network | heads | classifier | parameter_count u64
//! | crc32 u32
//! ```
//!
//! Matrices are `rows u32 | cols u32 | rows·cols f64`, column-major. Every
//! decoded piece goes through the same validated constructors used in
//! training, and the stored parameter count must match the rebuilt model.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::bytes::{append_checksum, verify_checksum, Reader};
use super::IoError;
use crate::classifier::{ClassifierShape, TangentClassifier};
use crate::layers::{BiMapLayer, ManifoldNetwork, RbnLayer, ReEigLayer};
use crate::select::{MbtHeads, SelectionTransform};
use crate::spd::SpdMatrix;
use crate::train::{DataShape, Model, TrainConfig};

pub const MODEL_MAGIC: &[u8; 4] = b"SPDM";
pub const MODEL_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, vs: &[f64]) {
        self.u32(vs.len());
        for &v in vs {
            self.f64(v);
        }
    }

    fn matrix(&mut self, m: &DMatrix<f64>) {
        self.u32(m.nrows());
        self.u32(m.ncols());
        for &v in m.iter() {
            self.f64(v);
        }
    }
}

fn malformed(what: &str, e: impl std::fmt::Display) -> IoError {
    IoError::Malformed(format!("{what}: {e}"))
}

impl Reader<'_> {
    fn usize(&mut self) -> Result<usize, IoError> {
        Ok(self.u32()? as usize)
    }

    fn finite(&mut self) -> Result<f64, IoError> {
        let v = self.f64()?;
        if !v.is_finite() {
            return Err(IoError::Malformed("non-finite parameter".into()));
        }
        Ok(v)
    }

    /// Checks that `count` values of `width` bytes remain before allocating.
    fn reserve(&self, count: usize, width: usize) -> Result<(), IoError> {
        match count.checked_mul(width) {
            Some(n) if n <= self.remaining() => Ok(()),
            _ => Err(IoError::Malformed(format!(
                "{count} values exceed the remaining payload"
            ))),
        }
    }

    fn f64s(&mut self) -> Result<Vec<f64>, IoError> {
        let n = self.usize()?;
        self.reserve(n, 8)?;
        (0..n).map(|_| self.finite()).collect()
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>, IoError> {
        let (rows, cols) = (self.usize()?, self.usize()?);
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| IoError::Malformed(format!("{rows}x{cols} matrix")))?;
        self.reserve(n, 8)?;
        let values = (0..n).map(|_| self.finite()).collect::<Result<Vec<_>, _>>()?;
        Ok(DMatrix::from_vec(rows, cols, values))
    }

    fn shaped(&mut self, what: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>, IoError> {
        let m = self.matrix()?;
        if m.shape() != (rows, cols) {
            return Err(IoError::Malformed(format!(
                "{what} is {:?}, expected {:?}",
                m.shape(),
                (rows, cols)
            )));
        }
        Ok(m)
    }

    fn vector(&mut self, what: &str, len: usize) -> Result<DVector<f64>, IoError> {
        let m = self.shaped(what, len, 1)?;
        Ok(DVector::from_column_slice(m.as_slice()))
    }
}

fn write_selection(w: &mut Writer, s: &SelectionTransform) {
    w.matrix(&s.w_hat);
    w.u32(s.selected_channels.len());
    for &c in &s.selected_channels {
        w.u32(c);
    }
    w.matrix(&s.l_matrix);
    w.matrix(&s.gamma_g);
    w.matrix(&s.gamma_d);
    w.u32(s.iterations_run);
    w.u32(s.converged as usize);
    w.f64s(&s.objective_trace);
    w.f64s(&s.stress_trace);
    w.u32(s.safeguarded_steps);
}

fn read_selection(r: &mut Reader, channels: usize, m: usize) -> Result<SelectionTransform, IoError> {
    let w_hat = r.shaped("selection transform", channels, m)?;
    let n = r.usize()?;
    if n != m {
        return Err(IoError::Malformed(format!("{n} selected channels, expected {m}")));
    }
    let selected_channels = (0..n)
        .map(|_| {
            let c = r.usize()?;
            if c >= channels {
                return Err(IoError::Malformed(format!("selected channel {c} out of range")));
            }
            Ok(c)
        })
        .collect::<Result<_, _>>()?;
    let l_matrix = r.shaped("L matrix", channels, channels)?;
    let gamma_g = r.matrix()?;
    let gamma_d = r.shaped("gamma_d", gamma_g.nrows(), gamma_g.ncols())?;
    let iterations_run = r.usize()?;
    let converged = match r.u32()? {
        0 => false,
        1 => true,
        v => return Err(IoError::Malformed(format!("converged flag {v}"))),
    };
    Ok(SelectionTransform {
        w_hat,
        selected_channels,
        l_matrix,
        gamma_g,
        gamma_d,
        iterations_run,
        converged,
        objective_trace: r.f64s()?,
        stress_trace: r.f64s()?,
        safeguarded_steps: r.usize()?,
    })
}

fn write_network(w: &mut Writer, net: &ManifoldNetwork) {
    w.u32(net.bimaps().len());
    for b in net.bimaps() {
        w.u32(b.enforces_orthonormal() as usize);
        w.matrix(b.weight());
    }
    w.f64(net.reeig_epsilon());
    w.u32(net.rbn().len());
    for layer in net.rbn() {
        w.u32(layer.karcher_iterations());
        w.f64(layer.momentum());
        w.matrix(layer.running_mean());
        match layer.log_bias() {
            Some(b) => {
                w.u32(1);
                w.matrix(b);
            }
            None => w.u32(0),
        }
    }
}

fn read_network(r: &mut Reader, channels: usize, bands: usize) -> Result<ManifoldNetwork, IoError> {
    let n = r.usize()?;
    r.reserve(n, 12)?;
    let bimaps = (0..n)
        .map(|_| {
            let enforce = r.u32()? == 1;
            BiMapLayer::new(r.matrix()?, enforce).map_err(|e| malformed("bimap", e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let reeig = ReEigLayer::new(r.f64()?).map_err(|e| malformed("reeig", e))?;
    let n_rbn = r.usize()?;
    if n_rbn != bands {
        return Err(IoError::Malformed(format!(
            "{n_rbn} normalization layers for {bands} bands"
        )));
    }
    let dim = bimaps.last().map_or(channels, BiMapLayer::output_dim);
    let rbn = (0..n_rbn)
        .map(|_| {
            let iterations = r.usize()?;
            let momentum = r.f64()?;
            let mean = SpdMatrix::new(r.shaped("running mean", dim, dim)?).map_err(|e| malformed("running mean", e))?;
            let bias = match r.u32()? {
                0 => None,
                1 => Some(r.shaped("log bias", dim, dim)?),
                v => return Err(IoError::Malformed(format!("bias flag {v}"))),
            };
            let mut layer =
                RbnLayer::new(dim, iterations, momentum, bias.is_some()).map_err(|e| malformed("rbn", e))?;
            layer.set_running_mean(mean).map_err(|e| malformed("rbn", e))?;
            layer.set_log_bias(bias);
            Ok(layer)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if bimaps.first().is_some_and(|b| b.input_dim() != channels) {
        return Err(IoError::Malformed(
            "first bimap does not match the channel count".into(),
        ));
    }
    ManifoldNetwork::from_parts(bimaps, reeig, rbn).map_err(|e| malformed("network", e))
}

pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MODEL_MAGIC);
    w.u32(MODEL_VERSION as usize);
    let config = model.config.to_text();
    w.u32(config.len());
    w.0.extend_from_slice(config.as_bytes());

    let s = &model.shape;
    w.u32(s.channels);
    w.u32(s.classes);
    w.u32(s.samples_per_trial);
    w.0.extend_from_slice(&s.sample_rate_hz.to_le_bytes());
    w.u32(s.windows);
    w.u32(s.bands);

    write_selection(&mut w, &model.selection);
    write_network(&mut w, &model.network);

    w.u32(model.heads.frozen());
    w.u32(model.heads.k());
    for h in model.heads.heads() {
        w.matrix(h);
    }

    let c = &model.classifier;
    let cs = &c.shape;
    for v in [cs.bands, cs.windows, cs.heads, cs.m, cs.conv_maps, cs.classes] {
        w.u32(v);
    }
    w.matrix(&c.conv_kernel);
    w.matrix(&DMatrix::from_column_slice(
        c.conv_bias.len(),
        1,
        c.conv_bias.as_slice(),
    ));
    w.matrix(&c.omega1);
    w.matrix(&c.omega2);
    w.matrix(&c.head_weight);
    w.matrix(&DMatrix::from_column_slice(
        c.head_bias.len(),
        1,
        c.head_bias.as_slice(),
    ));

    w.0.extend_from_slice(&(model.num_parameters() as u64).to_le_bytes());
    append_checksum(w.0)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model, IoError> {
    if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
        return Err(IoError::MalformedHeader("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(IoError::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let body = verify_checksum(bytes)?;
    let mut r = Reader::new(&body[8..]);

    let len = r.usize()?;
    let text = std::str::from_utf8(r.take(len)?).map_err(|e| malformed("config", e))?;
    let config = TrainConfig::parse(text).map_err(|e| malformed("config", e))?;

    let shape = DataShape {
        channels: r.usize()?,
        classes: r.usize()?,
        samples_per_trial: r.usize()?,
        sample_rate_hz: r.f32()?,
        windows: r.usize()?,
        bands: r.usize()?,
    };
    if !(shape.sample_rate_hz.is_finite() && shape.sample_rate_hz > 0.0)
        || shape.channels == 0
        || shape.classes < 2
        || shape.bands != config.bands.len()
        || shape.windows == 0
        || shape.windows != shape.samples_per_trial / config.window_len
        || config.m > shape.channels
    {
        return Err(IoError::Malformed(format!("inconsistent data shape {shape:?}")));
    }

    let selection = read_selection(&mut r, shape.channels, config.m)?;
    let network = read_network(&mut r, shape.channels, shape.bands)?;
    let dim = network.output_dim().unwrap_or(shape.channels);

    let frozen = r.usize()?;
    let k = r.usize()?;
    if k != config.heads {
        return Err(IoError::Malformed(format!("{k} heads, config says {}", config.heads)));
    }
    r.reserve(k, 8)?;
    let heads = (0..k)
        .map(|_| r.shaped("head", dim, config.m))
        .collect::<Result<Vec<_>, _>>()?;
    let heads = MbtHeads::from_heads(heads, frozen).map_err(|e| malformed("heads", e))?;

    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.usize()?;
    }
    let cs = ClassifierShape {
        bands: dims[0],
        windows: dims[1],
        heads: dims[2],
        m: dims[3],
        conv_maps: dims[4],
        classes: dims[5],
    };
    let expected = (
        shape.bands,
        shape.windows,
        config.heads,
        config.m,
        config.conv_maps,
        shape.classes,
    );
    if (cs.bands, cs.windows, cs.heads, cs.m, cs.conv_maps, cs.classes) != expected {
        return Err(IoError::Malformed(format!(
            "classifier shape {cs:?} does not match the model"
        )));
    }
    let h = cs.hidden();
    let classifier = TangentClassifier {
        conv_kernel: r.shaped("conv kernel", cs.conv_maps, cs.kernel_len())?,
        conv_bias: r.vector("conv bias", cs.conv_maps)?,
        omega1: r.shaped("omega1", cs.bands, h)?,
        omega2: r.shaped("omega2", h, cs.bands)?,
        head_weight: r.shaped("head weight", cs.classes, cs.bands * cs.conv_maps)?,
        head_bias: r.vector("head bias", cs.classes)?,
        shape: cs,
    };
    classifier.validate().map_err(|e| malformed("classifier", e))?;

    let stored = r.u64()?;
    if r.remaining() != 0 {
        return Err(IoError::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    let model = Model {
        config,
        shape,
        selection,
        network,
        heads,
        classifier,
    };
    if stored != model.num_parameters() as u64 {
        return Err(IoError::Malformed(format!(
            "stored parameter count {stored}, model has {}",
            model.num_parameters()
        )));
    }
    Ok(model)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<(), IoError> {
    std::fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, IoError> {
    model_from_bytes(&std::fs::read(path)?)
}
