//! Parameter sources: Xavier initialisation, loading from a [`WeightStore`],
//! and all-zero parameters. Network modules are built against the
//! [`ParamSource`] trait so one constructor serves all three.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::ConvSpec;
use crate::tensor::Tensor;
use crate::weights::WeightStore;

/// Declared geometry of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: (usize, usize),
    pub bias: bool,
}

impl ConvShape {
    /// Square odd kernel, stride 1, "same" padding, with bias.
    pub fn same(c_in: usize, c_out: usize, k: usize) -> Self {
        Self::rect(c_in, c_out, (k, k))
    }

    pub fn rect(c_in: usize, c_out: usize, kernel: (usize, usize)) -> Self {
        ConvShape {
            c_in,
            c_out,
            kernel,
            stride: 1,
            padding: (kernel.0 / 2, kernel.1 / 2),
            bias: true,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.kernel.0, self.kernel.1]
    }

    pub fn fan_in(&self) -> usize {
        self.c_in * self.kernel.0 * self.kernel.1
    }

    pub fn fan_out(&self) -> usize {
        self.c_out * self.kernel.0 * self.kernel.1
    }

    /// Xavier-uniform bound `sqrt(6 / (fan_in + fan_out))`.
    pub fn xavier_bound(&self) -> f64 {
        (6.0 / (self.fan_in() + self.fan_out()) as f64).sqrt()
    }
}

pub trait ParamSource {
    fn conv(&mut self, path: &str, shape: ConvShape) -> Result<ConvSpec>;
}

fn spec_from(shape: ConvShape, kernel: Tensor, bias: Option<Vec<f32>>) -> Result<ConvSpec> {
    ConvSpec::new(kernel, bias, shape.stride, shape.padding)
}

/// Draws kernels uniformly within the Xavier bound; biases start at zero.
/// Every created parameter is recorded in [`XavierInit::store`].
pub struct XavierInit {
    rng: ChaCha8Rng,
    pub store: WeightStore,
}

impl XavierInit {
    pub fn new(seed: u64) -> Self {
        XavierInit {
            rng: ChaCha8Rng::seed_from_u64(seed),
            store: WeightStore::new(),
        }
    }

    pub fn into_store(self) -> WeightStore {
        self.store
    }
}

impl ParamSource for XavierInit {
    fn conv(&mut self, path: &str, shape: ConvShape) -> Result<ConvSpec> {
        let bound = shape.xavier_bound() as f32;
        let dims = shape.kernel_shape();
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect();
        let kernel = Tensor::from_vec(dims, data)?;
        self.store.insert(format!("{path}/kernel"), kernel.clone())?;
        let bias = if shape.bias {
            let b = vec![0.0; shape.c_out];
            self.store.insert(
                format!("{path}/bias"),
                Tensor::from_vec([1, 1, 1, shape.c_out], b.clone())?,
            )?;
            Some(b)
        } else {
            None
        };
        spec_from(shape, kernel, bias)
    }
}

/// Reads parameters out of an existing store, validating every shape.
pub struct StoreLoader<'a> {
    store: &'a WeightStore,
}

impl<'a> StoreLoader<'a> {
    pub fn new(store: &'a WeightStore) -> Self {
        StoreLoader { store }
    }
}

impl ParamSource for StoreLoader<'_> {
    fn conv(&mut self, path: &str, shape: ConvShape) -> Result<ConvSpec> {
        let kpath = format!("{path}/kernel");
        let kernel = self.store.require(&kpath)?;
        if kernel.shape() != shape.kernel_shape() {
            return Err(Error::invalid(
                "weights",
                format!(
                    "{kpath}: stored shape {:?}, architecture expects {:?}",
                    kernel.shape(),
                    shape.kernel_shape()
                ),
            ));
        }
        let bias = if shape.bias {
            let bpath = format!("{path}/bias");
            let b = self.store.require(&bpath)?;
            if b.len() != shape.c_out {
                return Err(Error::invalid(
                    "weights",
                    format!("{bpath}: {} values for {} output channels", b.len(), shape.c_out),
                ));
            }
            Some(b.data().to_vec())
        } else {
            None
        };
        spec_from(shape, kernel.clone(), bias)
    }
}

/// All parameters zero.
pub struct ZeroInit;

impl ParamSource for ZeroInit {
    fn conv(&mut self, _path: &str, shape: ConvShape) -> Result<ConvSpec> {
        spec_from(
            shape,
            Tensor::zeros(shape.kernel_shape()),
            shape.bias.then(|| vec![0.0; shape.c_out]),
        )
    }
}

/// Layer widths and counts of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    /// Feature width used throughout (features, ResB stacks, recurrent state).
    pub feat: usize,
    /// Growth rate inside each residual dense block.
    pub growth: usize,
    pub rdb_blocks: usize,
    pub rdb_layers: usize,
    /// DownShuffle/UpShuffle factor.
    pub shuffle: usize,
    /// Blocks per ResB cascade (FAC-FB encoder, both decoders).
    pub resb: usize,
    /// Refine-module U-Net widths per level.
    pub rm_widths: [usize; 3],
    pub fac_gate_hidden: usize,
    /// Biases on the correlation projections.
    pub fac_bias: bool,
    pub mixer_width: usize,
    pub delta_hidden: usize,
    /// Whether the recursive-boosting stage is part of the network.
    pub boost: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            feat: 64,
            growth: 32,
            rdb_blocks: 12,
            rdb_layers: 4,
            shuffle: 2,
            resb: 5,
            rm_widths: [64, 128, 256],
            fac_gate_hidden: 64,
            fac_bias: false,
            mixer_width: 64,
            delta_hidden: 64,
            boost: true,
        }
    }
}

impl ArchConfig {
    pub fn baseline() -> Self {
        ArchConfig {
            boost: false,
            ..Self::default()
        }
    }

    pub fn boosted() -> Self {
        Self::default()
    }

    /// A narrow configuration for quick experiments and tests.
    pub fn tiny(boost: bool) -> Self {
        ArchConfig {
            feat: 8,
            growth: 4,
            rdb_blocks: 2,
            rdb_layers: 2,
            shuffle: 2,
            resb: 2,
            rm_widths: [8, 8, 8],
            fac_gate_hidden: 4,
            fac_bias: false,
            mixer_width: 8,
            delta_hidden: 8,
            boost,
        }
    }

    /// Channels emitted by the backbone: two feature maps, two flows, one logit.
    pub fn backbone_channels(&self) -> usize {
        2 * self.feat + 2 * 2 + 1
    }

    /// Channels of the refine-module input `[F0b, Ft, F1b, f_t0, f_t1, o_t0, f01, f10]`.
    pub fn agg1_channels(&self) -> usize {
        3 * self.feat + 2 * 4 + 1
    }

    /// Spatial sizes must be multiples of this: the backbone shuffles by
    /// `shuffle` and the refine U-Net halves twice.
    pub fn size_multiple(&self) -> usize {
        let (mut a, mut b) = (4usize, self.shuffle.max(1));
        while b != 0 {
            (a, b) = (b, a % b);
        }
        4 * self.shuffle.max(1) / a
    }

    const FIELDS: usize = 14;

    /// Encodes the configuration as a tensor stored under `meta/arch`.
    pub fn to_tensor(&self) -> Tensor {
        let v = [
            self.feat,
            self.growth,
            self.rdb_blocks,
            self.rdb_layers,
            self.shuffle,
            self.resb,
            self.rm_widths[0],
            self.rm_widths[1],
            self.rm_widths[2],
            self.fac_gate_hidden,
            self.fac_bias as usize,
            self.mixer_width,
            self.delta_hidden,
            self.boost as usize,
        ];
        Tensor::from_vec([1, 1, 1, Self::FIELDS], v.iter().map(|&x| x as f32).collect()).expect("fixed length")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.len() != Self::FIELDS {
            return Err(Error::invalid(
                "weights",
                format!("meta/arch holds {} values, expected {}", t.len(), Self::FIELDS),
            ));
        }
        let v: Vec<usize> = t.data().iter().map(|&x| x as usize).collect();
        Ok(ArchConfig {
            feat: v[0],
            growth: v[1],
            rdb_blocks: v[2],
            rdb_layers: v[3],
            shuffle: v[4],
            resb: v[5],
            rm_widths: [v[6], v[7], v[8]],
            fac_gate_hidden: v[9],
            fac_bias: v[10] != 0,
            mixer_width: v[11],
            delta_hidden: v[12],
            boost: v[13] != 0,
        })
    }
}
