//! Convolution, pixel shuffling and activations on a feature map.

use std::time::Instant;

use deblur_mfi::nn::{conv2d, pixel_shuffle_down, pixel_shuffle_up, relu, ConvSpec};
use deblur_mfi::Tensor;

fn main() -> deblur_mfi::Result<()> {
    let x = Tensor::from_fn([1, 64, 64, 64], |_, c, y, x| {
        ((c * 7 + y * 3 + x) % 19) as f32 / 19.0 - 0.5
    });
    let kernel = Tensor::from_fn([64, 64, 3, 3], |o, i, ky, kx| {
        (((o + 2 * i + ky * 3 + kx) % 11) as f32 - 5.0) * 0.01
    });
    let conv = ConvSpec::new(kernel, Some(vec![0.01; 64]), 1, (1, 1))?;

    let start = Instant::now();
    let y = relu(&conv2d(&x, &conv)?);
    println!(
        "3x3 conv 64->64 on 64x64: {:.2?}, output {:?}",
        start.elapsed(),
        y.shape()
    );

    let down = pixel_shuffle_down(&x, 4)?;
    let back = pixel_shuffle_up(&down, 4)?;
    println!(
        "shuffle {:?} -> {:?} -> {:?}, round trip exact: {}",
        x.shape(),
        down.shape(),
        back.shape(),
        back == x
    );

    let strided = ConvSpec::new(Tensor::full([8, 64, 3, 3], 1.0 / 576.0), None, 2, (1, 1))?;
    println!("stride-2 conv: {:?}", conv2d(&x, &strided)?.shape());
    Ok(())
}
