//! Measures the polynomial degree of the fusion and of each decoder stage by
//! finite differences along random rays.
//!
//! cargo run --release --example degree

use polyvid::decoder::{prodpoly_block, u_block, init_decoder, DecoderConfig, Mode};
use polyvid::embedding::EmbedConfig;
use polyvid::fusion::{hmf, init_fusion};
use polyvid::params::{ParamBuilder, ParamStore};
use polyvid::tensor::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smallest `d` whose `(d+1)`-th forward difference vanishes for every output.
fn degree(f: impl Fn(f64) -> Vec<f64>, max: usize) -> Option<usize> {
    let ys: Vec<Vec<f64>> = (0..=max + 1).map(|i| f(0.5 * i as f64)).collect();
    (0..=max).find(|&d| {
        (0..ys[0].len()).all(|c| {
            let mut col: Vec<f64> = ys[..=d + 1].iter().map(|y| y[c]).collect();
            let scale = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for _ in 0..=d {
                col = col.windows(2).map(|w| w[1] - w[0]).collect();
            }
            col[0].abs() <= 1e-9 * scale
        })
    })
}

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn along(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

fn main() -> polyvid::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let embed = EmbedConfig::with_width(4);
    let k = embed.k;
    let dec = DecoderConfig::desk();
    let store: ParamStore = {
        let mut init = ChaCha8Rng::seed_from_u64(1);
        let mut b = ParamBuilder::new(&mut init);
        init_fusion(&mut b, &embed);
        init_decoder(&mut b, &dec, k);
        b.finish()?
    };

    let (u, v) = (random(&mut rng, k), random(&mut rng, k));
    let d = degree(
        |s| {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape).unwrap();
            let t = tape.constant([1, k], u.iter().map(|x| s * x).collect()).unwrap();
            let x = tape.constant([1, k], v.iter().map(|x| s * x).collect()).unwrap();
            let y = hmf(&mut tape, t, x, &p).unwrap();
            tape.value(y).unwrap().to_vec()
        },
        6,
    );
    println!("fusion                        degree {d:?}");

    let (z0, dz) = (random(&mut rng, k), random(&mut rng, k));
    let d = degree(
        |s| {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape).unwrap();
            let z = tape.constant([1, k], along(&z0, &dz, s)).unwrap();
            let y = u_block(&mut tape, z, &p, &dec).unwrap();
            tape.value(y).unwrap().to_vec()
        },
        6,
    );
    println!("lift from z                   degree {d:?}");

    let (h0, w0) = dec.seed;
    let [s1, s2, _] = dec.upscales;
    let shapes = [
        [dec.u_channels, h0, w0],
        [dec.channels[1], h0 * s1 * s2, w0 * s1 * s2],
        [dec.channels[3], h0 * s1 * s2 * dec.upscales[2], w0 * s1 * s2 * dec.upscales[2]],
    ];
    for (r, shape) in (1..=3).zip(shapes) {
        let n: usize = shape.iter().product();
        let (x0, dx) = (random(&mut rng, n), random(&mut rng, n));
        let block = |x: Vec<f64>, z: Vec<f64>| {
            let mut tape = Tape::new();
            let p = store.bind(&mut tape).unwrap();
            let vx = tape.constant(shape, x).unwrap();
            let vz = tape.constant([1, k], z).unwrap();
            let y = prodpoly_block(&mut tape, vx, vz, &p, &dec, r, Mode::Probe).unwrap();
            tape.value(y).unwrap().to_vec()
        };
        let in_x = degree(|s| block(along(&x0, &dx, s), z0.clone()), 6);
        let in_z = degree(|s| block(x0.clone(), along(&z0, &dz, s)), 6);
        println!("product block {r}: in its input {in_x:?}, in z {in_z:?}");
    }
    println!("structural degree of the decoder: {}", dec.structural_degree());
    Ok(())
}
