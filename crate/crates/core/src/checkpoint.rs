//! Checkpoint files: a text header of `key = value` lines terminated by
//! `end_header`, followed by the declared arrays as little-endian `f64`.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};

use crate::baselines::RegressorModel;
use crate::error::{Error, Result};
use crate::net::{Activation, AdamWConfig, AdamWState, DenseStack, EmbeddingConfig, MlpModel, ModelConfig};

pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "beamid-checkpoint";

/// Header metadata plus named parameter arrays in declaration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub header: BTreeMap<String, String>,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.header.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.header
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing header key {key:?}")))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse().map_err(|_| Error::Checkpoint(format!("cannot parse {key} = {raw:?}")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let raw = self.get(key)?;
        crate::field::parse_f64(raw).map_err(|_| Error::Checkpoint(format!("cannot parse {key} = {raw:?}")))
    }

    pub fn push_array(&mut self, name: &str, values: Vec<f64>) {
        self.arrays.push((name.to_string(), values));
    }

    pub fn array(&self, name: &str) -> Result<&[f64]> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Checkpoint(format!("missing array {name:?}")))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{MAGIC} {SCHEMA_VERSION}")?;
        for (k, v) in &self.header {
            if k.contains(['=', '\n']) || v.contains('\n') || k.starts_with("array.") {
                return Err(Error::Checkpoint(format!("header entry {k:?} cannot be encoded")));
            }
            writeln!(w, "{k} = {v}")?;
        }
        for (name, vals) in &self.arrays {
            writeln!(w, "array.{name} = {}", vals.len())?;
        }
        writeln!(w, "end_header")?;
        for (_, vals) in &self.arrays {
            for v in vals {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = std::io::BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let version = line
            .trim_end()
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| Error::Checkpoint("not a checkpoint file".into()))?;
        if version != SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!("schema version {version}, expected {SCHEMA_VERSION}")));
        }
        let mut ck = Checkpoint::default();
        let mut layout = Vec::new();
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Checkpoint("header is not terminated".into()));
            }
            let l = line.trim_end_matches('\n');
            if l == "end_header" {
                break;
            }
            let (k, v) = l
                .split_once(" = ")
                .ok_or_else(|| Error::Checkpoint(format!("malformed header line {l:?}")))?;
            match k.strip_prefix("array.") {
                Some(name) => {
                    let len = v.parse::<usize>().map_err(|_| Error::Checkpoint(format!("bad length for {name}")))?;
                    layout.push((name.to_string(), len));
                }
                None => {
                    ck.header.insert(k.to_string(), v.to_string());
                }
            }
        }
        let mut buf = [0u8; 8];
        for (name, len) in layout {
            let mut vals = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::Checkpoint(format!("array {name} is truncated")))?;
                vals.push(f64::from_le_bytes(buf));
            }
            ck.arrays.push((name, vals));
        }
        if r.read(&mut buf)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after declared arrays".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}

fn dims_string(d: &[usize]) -> String {
    d.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| Error::Checkpoint(format!("bad layer dims {s:?}"))))
        .collect()
}

/// Writes a dense stack's layout under `prefix` and its weights as array `prefix`.
pub fn put_stack(ck: &mut Checkpoint, prefix: &str, stack: &DenseStack) {
    ck.set(&format!("{prefix}.dims"), dims_string(stack.dims()));
    ck.set(&format!("{prefix}.activation"), stack.hidden().name());
    ck.push_array(prefix, stack.params().to_vec());
}

pub fn take_stack(ck: &Checkpoint, prefix: &str) -> Result<DenseStack> {
    let dims = parse_dims(ck.get(&format!("{prefix}.dims"))?)?;
    let act = Activation::parse(ck.get(&format!("{prefix}.activation"))?)?;
    DenseStack::from_params(&dims, act, ck.array(prefix)?.to_vec())
}

pub fn put_optimizer(ck: &mut Checkpoint, opt: &AdamWState) {
    let c = opt.config;
    ck.set("optimizer", "adamw");
    ck.set("optimizer.lr", crate::field::fmt_f64(c.lr));
    ck.set("optimizer.beta1", crate::field::fmt_f64(c.beta1));
    ck.set("optimizer.beta2", crate::field::fmt_f64(c.beta2));
    ck.set("optimizer.eps", crate::field::fmt_f64(c.eps));
    ck.set("optimizer.weight_decay", crate::field::fmt_f64(c.weight_decay));
    ck.set("optimizer.step", opt.step);
    ck.push_array("adam_m", opt.m.clone());
    ck.push_array("adam_v", opt.v.clone());
}

pub fn take_optimizer(ck: &Checkpoint) -> Result<AdamWState> {
    let config = AdamWConfig {
        lr: ck.get_f64("optimizer.lr")?,
        beta1: ck.get_f64("optimizer.beta1")?,
        beta2: ck.get_f64("optimizer.beta2")?,
        eps: ck.get_f64("optimizer.eps")?,
        weight_decay: ck.get_f64("optimizer.weight_decay")?,
    };
    let m = ck.array("adam_m")?.to_vec();
    let v = ck.array("adam_v")?.to_vec();
    if m.len() != v.len() {
        return Err(Error::Checkpoint("moment arrays differ in length".into()));
    }
    Ok(AdamWState { config, step: ck.get_parsed("optimizer.step")?, m, v })
}

/// Checkpoint of a parameter network and its optimiser state.
pub fn model_checkpoint(model: &MlpModel, opt: &AdamWState) -> Checkpoint {
    let mut ck = Checkpoint::default();
    let c = model.config();
    ck.set("kind", "neuralsi");
    ck.set("embedding.dim", c.embedding.dim);
    ck.set("embedding.base", crate::field::fmt_f64(c.embedding.base));
    ck.set("embedding.lowest_frequency", crate::field::fmt_f64(c.embedding.lowest_frequency));
    ck.set("p_min", crate::field::fmt_f64(c.p_min));
    ck.set("p_max", crate::field::fmt_f64(c.p_max));
    ck.set("p_gain", crate::field::fmt_f64(c.p_gain));
    ck.set("c_scale", crate::field::fmt_f64(c.c_scale));
    ck.set("zero_output_init", c.zero_output_init);
    put_stack(&mut ck, "p_head", model.p_head());
    put_stack(&mut ck, "c_head", model.c_head());
    put_optimizer(&mut ck, opt);
    ck
}

pub fn restore_model(ck: &Checkpoint) -> Result<(MlpModel, AdamWState)> {
    if ck.get("kind")? != "neuralsi" {
        return Err(Error::Checkpoint(format!("checkpoint holds a {} model", ck.get("kind")?)));
    }
    let p_head = take_stack(ck, "p_head")?;
    let c_head = take_stack(ck, "c_head")?;
    let dims = p_head.dims();
    let config = ModelConfig {
        embedding: EmbeddingConfig {
            dim: ck.get_parsed("embedding.dim")?,
            base: ck.get_f64("embedding.base")?,
            lowest_frequency: ck.get_f64("embedding.lowest_frequency")?,
        },
        n_layers: dims.len() - 1,
        hidden: if dims.len() > 2 { dims[1] } else { 1 },
        activation: p_head.hidden(),
        p_min: ck.get_f64("p_min")?,
        p_max: ck.get_f64("p_max")?,
        p_gain: ck.get_f64("p_gain")?,
        c_scale: ck.get_f64("c_scale")?,
        zero_output_init: ck.get_parsed("zero_output_init")?,
    };
    let model = MlpModel::from_heads(config, p_head, c_head)?;
    let opt = take_optimizer(ck)?;
    if opt.m.len() != model.n_params() {
        return Err(Error::Checkpoint("optimizer moments do not match the model".into()));
    }
    Ok((model, opt))
}

/// Checkpoint of a displacement regressor; `kind` is `dnn` or `pinn`.
pub fn regressor_checkpoint(model: &RegressorModel, kind: &str) -> Result<Checkpoint> {
    if !matches!(kind, "dnn" | "pinn") {
        return Err(Error::Invalid(format!("unknown regressor kind {kind:?}")));
    }
    let mut ck = Checkpoint::default();
    ck.set("kind", kind);
    ck.set("length", crate::field::fmt_f64(model.length()));
    ck.set("t_scale", crate::field::fmt_f64(model.t_scale()));
    ck.set("u_scale", crate::field::fmt_f64(model.u_scale()));
    ck.set("hard_boundary", model.hard_boundary());
    put_stack(&mut ck, "regressor", model.stack());
    Ok(ck)
}

/// Returns the regressor and its kind.
pub fn restore_regressor(ck: &Checkpoint) -> Result<(RegressorModel, String)> {
    let kind = ck.get("kind")?;
    if !matches!(kind, "dnn" | "pinn") {
        return Err(Error::Checkpoint(format!("checkpoint holds a {kind} model")));
    }
    let model = RegressorModel::from_parts(
        take_stack(ck, "regressor")?,
        ck.get_f64("length")?,
        ck.get_f64("t_scale")?,
        ck.get_f64("u_scale")?,
        ck.get_parsed("hard_boundary")?,
    )?;
    Ok((model, kind.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trip_is_bit_exact() {
        let model = MlpModel::new(ModelConfig::default(), 5).unwrap();
        let mut opt = AdamWState::new(model.n_params(), AdamWConfig::default());
        let mut params = model.to_flat();
        let grads: Vec<f64> = (0..params.len()).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        opt.update(&mut params, &grads).unwrap();
        let mut model = model;
        model.load_flat(&params).unwrap();

        let mut buf = Vec::new();
        model_checkpoint(&model, &opt).write(&mut buf).unwrap();
        let (m2, o2) = restore_model(&Checkpoint::read(buf.as_slice()).unwrap()).unwrap();
        assert_eq!(m2, model);
        assert_eq!(o2, opt);
        let mut again = Vec::new();
        model_checkpoint(&m2, &o2).write(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let model = MlpModel::new(ModelConfig { n_layers: 2, hidden: 4, ..Default::default() }, 1).unwrap();
        let opt = AdamWState::new(model.n_params(), AdamWConfig::default());
        let mut buf = Vec::new();
        model_checkpoint(&model, &opt).write(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(Checkpoint::read(buf.as_slice()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn regressor_round_trip_is_bit_exact() {
        let cfg = crate::baselines::BaselineConfig { width: 6, n_layers: 3, hard_boundary: true, ..Default::default() };
        let model = RegressorModel::new(&cfg, 0.4, 0.045, 3.7e-3).unwrap();
        let mut buf = Vec::new();
        regressor_checkpoint(&model, "pinn").unwrap().write(&mut buf).unwrap();
        let ck = Checkpoint::read(buf.as_slice()).unwrap();
        let (back, kind) = restore_regressor(&ck).unwrap();
        assert_eq!(kind, "pinn");
        assert_eq!(back.stack(), model.stack());
        assert_eq!(back.u_scale().to_bits(), model.u_scale().to_bits());
        assert!(back.hard_boundary());
        assert!(restore_model(&ck).is_err());
    }

    #[test]
    fn foreign_files_are_rejected() {
        assert!(Checkpoint::read("time,node_1\n".as_bytes()).is_err());
        assert!(Checkpoint::read("beamid-checkpoint 9\nend_header\n".as_bytes()).is_err());
    }
}
