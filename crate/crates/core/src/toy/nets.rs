//! Tiny networks for the toy domains. Every network takes `[1, c, s, s]`
//! images with `s` divisible by 8.

use rand::Rng;

use crate::tensor::{Result, Tensor};

const SLOPE: f64 = 0.2;

/// 3x3 convolution layer with He-uniform init.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv {
    pub fn new<R: Rng>(cin: usize, cout: usize, rng: &mut R) -> Conv {
        let s = (6.0 / (cin * 9) as f64).sqrt();
        let w = (0..cout * cin * 9).map(|_| rng.random_range(-s..s)).collect();
        Conv {
            weight: Tensor::param(w, &[cout, cin, 3, 3]).expect("shape"),
            bias: Tensor::param(vec![0.0; cout], &[cout]).expect("shape"),
        }
    }

    pub fn zeros(cin: usize, cout: usize) -> Conv {
        Conv {
            weight: Tensor::param(vec![0.0; cout * cin * 9], &[cout, cin, 3, 3]).expect("shape"),
            bias: Tensor::param(vec![0.0; cout], &[cout]).expect("shape"),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.weight, Some(&self.bias))
    }

    fn params(&self) -> [Tensor; 2] {
        [self.weight.clone(), self.bias.clone()]
    }
}

/// Four convolutions with a residual skip from input to output. The last
/// layer starts at zero, so the untrained generator is the identity.
#[derive(Debug, Clone)]
pub struct Generator {
    pub layers: [Conv; 4],
}

pub struct GeneratorOutput {
    pub image: Tensor,
    /// Activations used as PatchNCE features.
    pub features: Vec<Tensor>,
}

impl Generator {
    pub fn new<R: Rng>(width: usize, rng: &mut R) -> Generator {
        Generator {
            layers: [Conv::new(3, width, rng), Conv::new(width, width, rng), Conv::new(width, width, rng), Conv::zeros(width, 3)],
        }
    }

    /// Activations of the first two layers.
    pub fn encode(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let h1 = self.layers[0].forward(x)?.leaky_relu(SLOPE);
        let h2 = self.layers[1].forward(&h1)?.leaky_relu(SLOPE);
        Ok(vec![h1, h2])
    }

    pub fn forward(&self, x: &Tensor) -> Result<GeneratorOutput> {
        let features = self.encode(x)?;
        let h3 = self.layers[2].forward(&features[1])?.leaky_relu(SLOPE);
        let image = x.add(&self.layers[3].forward(&h3)?)?;
        Ok(GeneratorOutput { image, features })
    }

    pub fn feature_channels(&self) -> Vec<usize> {
        vec![self.layers[0].bias.numel(), self.layers[1].bias.numel()]
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(Conv::params).collect()
    }
}

/// Three-layer patch classifier; one score per 4x4 block.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub layers: [Conv; 3],
}

impl Discriminator {
    pub fn new<R: Rng>(width: usize, rng: &mut R) -> Discriminator {
        Discriminator { layers: [Conv::new(3, width, rng), Conv::new(width, 2 * width, rng), Conv::new(2 * width, 1, rng)] }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.layers[0].forward(x)?.leaky_relu(SLOPE).downsample2x()?;
        let h = self.layers[1].forward(&h)?.leaky_relu(SLOPE).downsample2x()?;
        self.layers[2].forward(&h)
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(Conv::params).collect()
    }
}

/// Encoder-decoder with three 2x downsamplings, three upsamplings and
/// additive skips. Outputs foreground probabilities `[1, 1, s, s]`.
#[derive(Debug, Clone)]
pub struct Segmenter {
    pub down: [Conv; 4],
    pub up: [Conv; 3],
    pub head: Conv,
}

impl Segmenter {
    /// The output bias starts at the logit of `prior`, the expected
    /// foreground fraction, so the untrained net predicts background.
    pub fn new<R: Rng>(width: usize, prior: f64, rng: &mut R) -> Segmenter {
        let w2 = 2 * width;
        let head = Conv::new(width, 1, rng);
        head.bias.set_data(&[(prior / (1.0 - prior)).ln()]).expect("one value");
        Segmenter {
            down: [Conv::new(3, width, rng), Conv::new(width, w2, rng), Conv::new(w2, w2, rng), Conv::new(w2, w2, rng)],
            up: [Conv::new(w2, w2, rng), Conv::new(w2, w2, rng), Conv::new(w2, width, rng)],
            head,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let e1 = self.down[0].forward(x)?.leaky_relu(SLOPE);
        let e2 = self.down[1].forward(&e1.downsample2x()?)?.leaky_relu(SLOPE);
        let e3 = self.down[2].forward(&e2.downsample2x()?)?.leaky_relu(SLOPE);
        let b = self.down[3].forward(&e3.downsample2x()?)?.leaky_relu(SLOPE);
        let d3 = self.up[0].forward(&b.upsample2x()?)?.leaky_relu(SLOPE).add(&e3)?;
        let d2 = self.up[1].forward(&d3.upsample2x()?)?.leaky_relu(SLOPE).add(&e2)?;
        let d1 = self.up[2].forward(&d2.upsample2x()?)?.leaky_relu(SLOPE).add(&e1)?;
        Ok(self.head.forward(&d1)?.sigmoid())
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.down.iter().chain(&self.up).chain([&self.head]).flat_map(Conv::params).collect()
    }
}
