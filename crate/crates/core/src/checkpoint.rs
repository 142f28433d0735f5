//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "S2PD" | version u16 | kind u8 | config u32 × n
//! section_count u32
//! repeated: name_len u32 | name (UTF-8) | rank u32 | dims u32 × rank | f32 × Π dims
//! ```
//!
//! The teacher config block is `L, H, d_u, d_m, N_T, K, d_ff`; the student
//! block is `d_u, d_h, d_z`. Sections follow each model's `named_params`
//! order, so saving the same model twice yields identical bytes.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::student::{StudentConfig, StudentModel};
use crate::teacher::{TeacherConfig, TeacherModel};

pub const MAGIC: &[u8; 4] = b"S2PD";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ModelKind {
    Teacher = 1,
    Student = 2,
}

impl ModelKind {
    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(Self::Teacher),
            2 => Ok(Self::Student),
            t => Err(Error::Format(format!("unknown model kind tag {t}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Teacher(TeacherModel),
    Student(StudentModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Teacher(_) => ModelKind::Teacher,
            Model::Student(_) => ModelKind::Student,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Model::Teacher(t) => t.param_count(),
            Model::Student(s) => s.count_params(),
        }
    }

    pub fn into_teacher(self) -> Result<TeacherModel> {
        match self {
            Model::Teacher(t) => Ok(t),
            Model::Student(_) => Err(Error::Usage("expected a teacher checkpoint, found a student".into())),
        }
    }

    pub fn into_student(self) -> Result<StudentModel> {
        match self {
            Model::Student(s) => Ok(s),
            Model::Teacher(_) => Err(Error::Usage("expected a student checkpoint, found a teacher".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Leave the student's embedding head out of the loaded model.
    pub skip_embed_head: bool,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn encode(kind: ModelKind, config: &[usize], params: &[(String, &Tensor)]) -> Result<Vec<u8>> {
    let payload: usize = params.iter().map(|(_, t)| 4 * t.numel()).sum();
    let mut buf = Vec::with_capacity(64 + payload);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(kind as u8);
    for &c in config {
        put_u32(&mut buf, c)?;
    }
    put_u32(&mut buf, params.len())?;
    for (name, t) in params {
        put_u32(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, t.rank())?;
        for &d in t.shape() {
            put_u32(&mut buf, d)?;
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn teacher_to_bytes(model: &TeacherModel) -> Result<Vec<u8>> {
    let c = model.config();
    let config = [c.history, c.horizon, c.input_dim, c.model_dim, c.layers, c.heads, c.ff_dim];
    encode(ModelKind::Teacher, &config, &model.named_params())
}

pub fn student_to_bytes(model: &StudentModel) -> Result<Vec<u8>> {
    let c = model.config();
    encode(
        ModelKind::Student,
        &[c.input_dim, c.hidden_dim, c.embed_dim],
        &model.named_params(),
    )
}

pub fn model_to_bytes(model: &Model) -> Result<Vec<u8>> {
    match model {
        Model::Teacher(t) => teacher_to_bytes(t),
        Model::Student(s) => student_to_bytes(s),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Decodes a checkpoint image.
pub fn from_bytes(bytes: &[u8], opts: LoadOptions) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, not a checkpoint".into()));
    }
    let v = r.take(2)?;
    let version = u16::from_le_bytes([v[0], v[1]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let kind = ModelKind::from_tag(r.take(1)?[0])?;
    let n_config = match kind {
        ModelKind::Teacher => 7,
        ModelKind::Student => 3,
    };
    let config: Vec<usize> = (0..n_config).map(|_| r.u32()).collect::<Result<_>>()?;

    let count = r.u32()?;
    let mut sections = HashMap::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("section name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32()).collect::<Result<_>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("section `{name}` is too large")))?;
        let data = r
            .take(numel)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if sections.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Format(format!("duplicate section `{name}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last section",
            bytes.len() - r.pos
        )));
    }

    let model = match kind {
        ModelKind::Teacher => {
            let cfg = TeacherConfig {
                history: config[0],
                horizon: config[1],
                input_dim: config[2],
                model_dim: config[3],
                layers: config[4],
                heads: config[5],
                ff_dim: config[6],
            };
            cfg.validate().map_err(|e| Error::Format(format!("bad teacher config block: {e}")))?;
            Model::Teacher(TeacherModel::from_named(cfg, |name| sections.remove(name))?)
        }
        ModelKind::Student => {
            let cfg = StudentConfig {
                input_dim: config[0],
                hidden_dim: config[1],
                embed_dim: config[2],
            };
            cfg.validate().map_err(|e| Error::Format(format!("bad student config block: {e}")))?;
            let has_embed = sections.contains_key("embed_head.weight");
            let model = StudentModel::from_named(cfg, has_embed && !opts.skip_embed_head, |name| {
                sections.remove(name)
            })?;
            if opts.skip_embed_head {
                sections.remove("embed_head.weight");
                sections.remove("embed_head.bias");
            }
            Model::Student(model)
        }
    };
    if let Some(extra) = sections.keys().min() {
        return Err(Error::Format(format!("unexpected section `{extra}`")));
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn save_teacher(model: &TeacherModel, path: &Path) -> Result<()> {
    std::fs::write(path, teacher_to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn save_student(model: &StudentModel, path: &Path) -> Result<()> {
    std::fs::write(path, student_to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, opts: LoadOptions) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, opts).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
