//! Checkpoint and weight files (`LFRP`) and the loss-history CSV.
//!
//! Layout: magic `LFRP`, `u32` version, `u32` kind (hypernetwork mode id, or
//! [`MAIN_NET_KIND`] for a bare main network), then a [`NamedTensors`] block.

use std::io::{self, Read, Write};

use ndarray::{Array1, Array2};

use crate::hypernet::{HyperConfig, HyperMode, HyperNetParams, SpectralCodecConfig};
use crate::nets::{Activation, Architecture, LayerWeights, MainNetWeights};
use crate::rng::SeedTree;
use crate::tensors::{invalid, read_u32, NamedTensors};

use super::optim::Adam;
use super::TrainError;

const MAGIC: &[u8; 4] = b"LFRP";
const VERSION: u32 = 1;
/// Kind tag of a file holding main-network weights only.
pub const MAIN_NET_KIND: u32 = 100;

fn scalar(v: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), v)
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row")
}

fn activation_index(a: Activation) -> f64 {
    Activation::ALL
        .iter()
        .position(|&b| b == a)
        .expect("listed") as f64
}

fn activation_from(v: f64) -> Result<Activation, TrainError> {
    Activation::ALL
        .get(v as usize)
        .copied()
        .filter(|_| v >= 0.0 && v.fract() == 0.0)
        .ok_or_else(|| corrupt("activation id"))
}

fn corrupt(what: &str) -> TrainError {
    TrainError::Format(format!("checkpoint field `{what}` is missing or malformed"))
}

/// Raw file contents: kind tag plus tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamFile {
    pub kind: u32,
    pub tensors: NamedTensors,
}

impl ParamFile {
    pub fn write_to<W: Write>(&self, out: &mut W) -> io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&self.kind.to_le_bytes())?;
        self.tensors.write_to(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to memory");
        v
    }

    pub fn read_from<R: Read>(input: &mut R) -> io::Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(invalid("not a parameter file (bad magic)"));
        }
        let version = read_u32(input)?;
        if version != VERSION {
            return Err(invalid(&format!(
                "unsupported parameter file version {version}"
            )));
        }
        let kind = read_u32(input)?;
        let tensors = NamedTensors::read_from(input)?;
        Ok(Self { kind, tensors })
    }

    pub fn load(path: &std::path::Path) -> io::Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

/// Everything needed to resume pre-training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: HyperNetParams,
    pub adam: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub activation: Activation,
}

impl Checkpoint {
    pub fn to_file(&self) -> ParamFile {
        let p = &self.params;
        let mut t = NamedTensors::default();
        let a = &p.arch;
        t.push(
            "meta.arch",
            row(&[
                a.input_dim as f64,
                a.width as f64,
                a.hidden_layers as f64,
                a.output_dim as f64,
            ]),
        );
        t.push(
            "meta.hyper",
            row(&[
                p.hyper.width as f64,
                p.hyper.hidden_layers as f64,
                p.input_dim() as f64,
                p.hyper.init_std,
            ]),
        );
        t.push(
            "meta.activation",
            row(&[
                activation_index(self.activation),
                activation_index(p.hyper.activation),
            ]),
        );
        t.push(
            "meta.truncations",
            row(&p.truncations.iter().map(|&v| v as f64).collect::<Vec<_>>()),
        );
        t.push("state.epoch", scalar(self.epoch as f64));
        t.push("state.step", scalar(self.adam.step as f64));
        let theta = p.to_tensors();
        t.extend_prefixed("theta.", &theta);
        for (prefix, moments) in [("adam.m.", &self.adam.m), ("adam.v.", &self.adam.v)] {
            for ((name, _), m) in theta.iter().zip(moments) {
                t.push(format!("{prefix}{name}"), m.clone());
            }
        }
        ParamFile {
            kind: p.mode.id(),
            tensors: t,
        }
    }

    pub fn from_file(file: &ParamFile) -> Result<Self, TrainError> {
        let mode = HyperMode::from_id(file.kind).ok_or_else(|| {
            TrainError::Format(format!("file kind {} is not a checkpoint", file.kind))
        })?;
        let t = &file.tensors;
        let get = |name: &str| t.get(name).ok_or_else(|| corrupt(name));
        let ints = |name: &str| -> Result<Vec<usize>, TrainError> {
            get(name)?
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
                        Ok(v as usize)
                    } else {
                        Err(corrupt(name))
                    }
                })
                .collect()
        };
        let arch_v = ints("meta.arch")?;
        let [input_dim, width, hidden_layers, output_dim] = arch_v[..] else {
            return Err(corrupt("meta.arch"));
        };
        let arch = Architecture {
            input_dim,
            width,
            hidden_layers,
            output_dim,
        };
        let h = get("meta.hyper")?;
        if h.len() != 4 {
            return Err(corrupt("meta.hyper"));
        }
        let acts = get("meta.activation")?;
        if acts.len() != 2 {
            return Err(corrupt("meta.activation"));
        }
        let hyper = HyperConfig {
            width: h[[0, 0]] as usize,
            hidden_layers: h[[0, 1]] as usize,
            activation: activation_from(acts[[0, 1]])?,
            init_std: h[[0, 3]],
        };
        let m = h[[0, 2]] as usize;
        let truncations = ints("meta.truncations")?;
        let n_layers = arch.n_layers();
        if truncations.len() != n_layers || n_layers < 2 {
            return Err(corrupt("meta.truncations"));
        }
        let codec = SpectralCodecConfig {
            p_input: truncations[0],
            p_hidden: if n_layers > 2 {
                truncations[1]
            } else {
                truncations[0]
            },
            p_output: truncations[n_layers - 1],
        };
        if codec
            .truncations(&arch)
            .map_err(|e| TrainError::Format(e.to_string()))?
            != truncations
        {
            return Err(corrupt("meta.truncations"));
        }
        let mut params = HyperNetParams::init(
            mode,
            arch,
            codec,
            hyper,
            m,
            &mut SeedTree::new(0).stream("template", 0),
        )
        .map_err(|e| TrainError::Format(e.to_string()))?;
        params
            .load_tensors(&t.strip_prefix("theta."))
            .map_err(|e| TrainError::Format(e.to_string()))?;
        let names: Vec<String> = params
            .to_tensors()
            .iter()
            .map(|(n, _)| n.to_string())
            .collect();
        let mut adam = Adam::new(
            &params
                .to_tensors()
                .iter()
                .map(|(_, v)| v.clone())
                .collect::<Vec<_>>(),
        );
        for (i, name) in names.iter().enumerate() {
            for (prefix, dst) in [("adam.m.", &mut adam.m), ("adam.v.", &mut adam.v)] {
                let src = get(&format!("{prefix}{name}"))?;
                if src.dim() != dst[i].dim() {
                    return Err(corrupt(&format!("{prefix}{name}")));
                }
                dst[i] = src.clone();
            }
        }
        adam.step = ints("state.step")?[0] as u64;
        let epoch = ints("state.epoch")?[0];
        Ok(Self {
            params,
            adam,
            epoch,
            activation: activation_from(acts[[0, 0]])?,
        })
    }
}

/// Main-network weights with their activation.
pub fn weights_to_file(weights: &MainNetWeights, act: Activation) -> ParamFile {
    let mut t = NamedTensors::default();
    t.push("meta.activation", scalar(activation_index(act)));
    for (i, l) in weights.layers.iter().enumerate() {
        t.push(format!("layer{i}.w"), l.w.clone());
        if let Some(b) = &l.b {
            t.push(
                format!("layer{i}.b"),
                b.clone().insert_axis(ndarray::Axis(1)),
            );
        }
    }
    ParamFile {
        kind: MAIN_NET_KIND,
        tensors: t,
    }
}

pub fn weights_from_file(file: &ParamFile) -> Result<(MainNetWeights, Activation), TrainError> {
    if file.kind != MAIN_NET_KIND {
        return Err(TrainError::Format(format!(
            "file kind {} does not hold main-network weights",
            file.kind
        )));
    }
    let act = activation_from(
        file.tensors
            .get("meta.activation")
            .ok_or_else(|| corrupt("meta.activation"))?[[0, 0]],
    )?;
    let mut layers = Vec::new();
    while let Some(w) = file.tensors.get(&format!("layer{}.w", layers.len())) {
        let b = file
            .tensors
            .get(&format!("layer{}.b", layers.len()))
            .map(|b| Array1::from(b.iter().copied().collect::<Vec<_>>()));
        layers.push(LayerWeights { w: w.clone(), b });
    }
    let weights = MainNetWeights { layers };
    weights
        .validate()
        .map_err(|e| TrainError::Format(e.to_string()))?;
    Ok((weights, act))
}

/// One optimizer step of the loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub loss_r: f64,
    pub loss_bc: f64,
    pub loss_ic: f64,
}

pub fn write_history_csv<W: Write>(mut out: W, rows: &[HistoryRow]) -> io::Result<()> {
    writeln!(out, "step,lr,loss,loss_r,loss_bc,loss_ic")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.lr, r.loss, r.loss_r, r.loss_bc, r.loss_ic
        )?;
    }
    Ok(())
}
