use rand::Rng;

use super::attention::attention_hidden;
use super::conv::DW_KERNEL;
use super::params::{DType, ModelParams};
use super::NnError;

pub const CLASS_COUNT: usize = 10;

/// One inverted residual block: expansion width, output width, attention and pooling flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub expand: usize,
    pub out: usize,
    pub use_ca: bool,
    pub pool: bool,
}

impl BlockSpec {
    pub const fn new(expand: usize, out: usize, use_ca: bool, pool: bool) -> Self {
        Self {
            expand,
            out,
            use_ca,
            pool,
        }
    }
}

/// Two-pathway network layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    /// `(height, width, channels)` of the input feature.
    pub input: (usize, usize, usize),
    /// Blocks of each pathway; both pathways share this structure but not weights.
    pub pathway: Vec<BlockSpec>,
    pub trunk: BlockSpec,
    /// Channel-attention reduction ratio `r`.
    pub reduction: usize,
    pub classes: usize,
}

pub const PATHWAYS: [&str; 2] = ["low", "high"];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Zeros,
    Ones,
    Glorot { fan_in: usize, fan_out: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

impl NetworkConfig {
    /// Full-scale layout: three attention blocks per pathway, pooling after each, one trunk block.
    pub fn full() -> Self {
        Self {
            input: (128, 423, 3),
            pathway: vec![
                BlockSpec::new(16, 16, true, true),
                BlockSpec::new(32, 24, true, true),
                BlockSpec::new(48, 32, true, true),
            ],
            trunk: BlockSpec::new(64, 48, true, false),
            reduction: 4,
            classes: CLASS_COUNT,
        }
    }

    /// Small layout for tests: 8x16x3 input, one 4-channel block per pathway.
    pub fn tiny() -> Self {
        Self::tiny_with_input(8, 16)
    }

    pub fn tiny_with_input(height: usize, width: usize) -> Self {
        Self {
            input: (height, width, 3),
            pathway: vec![BlockSpec::new(4, 4, true, true)],
            trunk: BlockSpec::new(8, 8, true, false),
            reduction: 2,
            classes: CLASS_COUNT,
        }
    }

    pub fn preset(name: &str, height: usize, width: usize) -> Result<Self, NnError> {
        match name {
            "paper" => {
                let mut c = Self::full();
                c.input = (height, width, 3);
                c.validate()?;
                Ok(c)
            }
            "tiny" => {
                let c = Self::tiny_with_input(height, width);
                c.validate()?;
                Ok(c)
            }
            other => Err(NnError::Config(format!("unknown network preset {other:?}"))),
        }
    }

    /// Output shape of every block and pooling stage, in forward order.
    pub fn trace_shapes(&self) -> Result<Vec<(String, (usize, usize, usize))>, NnError> {
        if self.classes != CLASS_COUNT {
            return Err(NnError::Config(format!(
                "class count must be {CLASS_COUNT}, got {}",
                self.classes
            )));
        }
        let (h, w, c) = self.input;
        if h == 0 || w == 0 || c == 0 {
            return Err(NnError::Config("input dimensions must be positive".into()));
        }
        if h % 2 != 0 {
            return Err(NnError::Config(format!("input height {h} cannot be split in half")));
        }
        let mut trace = Vec::new();
        let step = |shape: (usize, usize, usize), spec: &BlockSpec, name: String| {
            if spec.expand == 0 || spec.out == 0 {
                return Err(NnError::Config(format!("{name}: zero channel width")));
            }
            if spec.use_ca {
                attention_hidden(spec.out, self.reduction)
                    .map_err(|e| NnError::Config(format!("{name}: {e}")))?;
            }
            let (mut h, mut w) = (shape.0, shape.1);
            if spec.pool {
                if h < 2 || w < 2 {
                    return Err(NnError::Config(format!(
                        "{name}: cannot pool a {h}x{w} map"
                    )));
                }
                h /= 2;
                w /= 2;
            }
            Ok((h, w, spec.out))
        };
        let mut shape = (h / 2, w, c);
        for (i, spec) in self.pathway.iter().enumerate() {
            shape = step(shape, spec, format!("pathway.b{i}"))?;
            trace.push((format!("pathway.b{i}"), shape));
        }
        let (ph, pw, pc) = shape;
        let joined = (2 * ph, pw, pc);
        trace.push(("concat".to_string(), joined));
        if joined.0 < 2 || joined.1 < 2 {
            return Err(NnError::Config(format!(
                "cannot pool the {}x{} concatenated map",
                joined.0, joined.1
            )));
        }
        let pooled = (joined.0 / 2, joined.1 / 2, joined.2);
        trace.push(("pool".to_string(), pooled));
        let out = step(pooled, &self.trunk, "trunk".to_string())?;
        trace.push(("trunk".to_string(), out));
        Ok(trace)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        self.trace_shapes().map(|_| ())
    }

    fn block_specs(&self, prefix: &str, cin: usize, spec: &BlockSpec, out: &mut Vec<ParamSpec>) {
        let mut push = |suffix: &str, shape: Vec<usize>, init: Init| {
            out.push(ParamSpec {
                name: format!("{prefix}.{suffix}"),
                shape,
                init,
            })
        };
        let bn = |push: &mut dyn FnMut(&str, Vec<usize>, Init), tag: &str, c: usize| {
            push(&format!("{tag}.gamma"), vec![c], Init::Ones);
            push(&format!("{tag}.beta"), vec![c], Init::Zeros);
            push(&format!("{tag}.mean"), vec![c], Init::Zeros);
            push(&format!("{tag}.var"), vec![c], Init::Ones);
        };
        let (e, o) = (spec.expand, spec.out);
        push("expand.w", vec![1, 1, cin, e], Init::Glorot { fan_in: cin, fan_out: e });
        push("expand.b", vec![e], Init::Zeros);
        bn(&mut push, "bn1", e);
        let taps = DW_KERNEL * DW_KERNEL;
        push("dw.w", vec![DW_KERNEL, DW_KERNEL, e], Init::Glorot { fan_in: taps, fan_out: taps });
        push("dw.b", vec![e], Init::Zeros);
        bn(&mut push, "bn2", e);
        push("project.w", vec![1, 1, e, o], Init::Glorot { fan_in: e, fan_out: o });
        push("project.b", vec![o], Init::Zeros);
        bn(&mut push, "bn3", o);
        if spec.use_ca {
            let hd = o / self.reduction;
            push("ca.w1", vec![o, hd], Init::Glorot { fan_in: o, fan_out: hd });
            push("ca.b1", vec![hd], Init::Zeros);
            push("ca.w2", vec![hd, o], Init::Glorot { fan_in: hd, fan_out: o });
            push("ca.b2", vec![o], Init::Zeros);
        }
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for path in PATHWAYS {
            let mut cin = self.input.2;
            for (i, b) in self.pathway.iter().enumerate() {
                self.block_specs(&format!("{path}.b{i}"), cin, b, &mut specs);
                cin = b.out;
            }
        }
        let cin = self.pathway.last().map_or(self.input.2, |b| b.out);
        self.block_specs("trunk", cin, &self.trunk, &mut specs);
        let c = self.trunk.out;
        specs.push(ParamSpec {
            name: "dense.w".into(),
            shape: vec![c, self.classes],
            init: Init::Glorot {
                fan_in: c,
                fan_out: self.classes,
            },
        });
        specs.push(ParamSpec {
            name: "dense.b".into(),
            shape: vec![self.classes],
            init: Init::Zeros,
        });
        specs
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.param_specs()
            .into_iter()
            .map(|s| (s.name, s.shape))
            .collect()
    }

    /// Glorot-uniform weights, unit BN scale, zero biases and shifts, running stats (0, 1).
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ModelParams, NnError> {
        self.validate()?;
        let mut params = ModelParams::new();
        for spec in self.param_specs() {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Glorot { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..n)
                        .map(|_| rng.random_range(-limit..limit) as f32 as f64)
                        .collect()
                }
            };
            params.insert(spec.name, spec.shape, data, DType::F32)?;
        }
        Ok(params)
    }

    /// Every expected tensor is present with the expected shape.
    pub fn check_params(&self, params: &ModelParams) -> Result<(), NnError> {
        let specs = self.param_specs();
        for spec in &specs {
            let t = params.get(&spec.name)?;
            if t.shape != spec.shape {
                return Err(NnError::Config(format!(
                    "{}: expected shape {:?}, found {:?}",
                    spec.name, spec.shape, t.shape
                )));
            }
        }
        if params.len() != specs.len() {
            return Err(NnError::Config(format!(
                "model has {} tensors, layout expects {}",
                params.len(),
                specs.len()
            )));
        }
        Ok(())
    }
}
