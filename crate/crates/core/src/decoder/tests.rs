use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck;
use crate::params::{Param, ParamStore};

const K: usize = 6;

fn tiny() -> DecoderConfig {
    DecoderConfig {
        seed: (2, 2),
        upscales: [2, 1, 2],
        u_channels: 4,
        f11_mid: 2,
        channels: [4, 3, 4, 2, 3, 2],
        activation: true,
    }
}

fn decoder_store(cfg: &DecoderConfig, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ParamBuilder::new(&mut rng);
    init_decoder(&mut b, cfg, K);
    b.finish().unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Adds extra named tensors (inputs under test) to a parameter store.
fn with_inputs(store: &ParamStore, extra: &[(&str, Vec<usize>, Vec<f64>)]) -> ParamStore {
    let mut params = store.params().to_vec();
    for (path, shape, data) in extra {
        params.push(Param {
            path: path.to_string(),
            shape: shape.clone(),
            kind: ParamKind::Embedding,
            data: data.clone(),
        });
    }
    ParamStore::from_params(params).unwrap()
}

fn run_decode(store: &ParamStore, cfg: &DecoderConfig, z: &[f64], mode: Mode) -> Vec<f64> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape).unwrap();
    let vz = tape.constant([1, z.len()], z.to_vec()).unwrap();
    let y = decode(&mut tape, vz, &p, cfg, mode).unwrap();
    tape.value(y).unwrap().to_vec()
}

fn ncp_store(d: usize, rank: usize, out: usize, order: usize, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ParamBuilder::new(&mut rng);
    init_ncp(&mut b, d, rank, out, order);
    b.finish().unwrap()
}

fn run_ncp(store: &ParamStore, z: &[f64], order: usize, act: bool) -> Vec<f64> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape).unwrap();
    let vz = tape.constant([1, z.len()], z.to_vec()).unwrap();
    let y = ncp_forward(&mut tape, vz, &p, order, act).unwrap();
    tape.value(y).unwrap().to_vec()
}

fn nth_difference(f: &[f64], order: usize) -> f64 {
    let mut d = f.to_vec();
    for _ in 0..order {
        d = d.windows(2).map(|w| w[1] - w[0]).collect();
    }
    d[0]
}

#[test]
fn presets_are_consistent() {
    let desk = DecoderConfig::desk();
    desk.validate().unwrap();
    assert_eq!(desk.patch_size(), (16, 16));
    assert_eq!(DecoderConfig::full().patch_size(), (320, 180));
    let count = decoder_store(&desk, 0).count();
    assert!(count < 150_000, "{count}");
    assert_eq!(desk.structural_degree(), 45);
}

#[test]
fn ncp_examples() {
    let mut st = ncp_store(3, 4, 2, 3, 1);
    for n in 1..=3 {
        st.get_mut(&format!("ncp.b{n}")).unwrap().data.fill(0.0);
    }
    st.get_mut("ncp.q").unwrap().data = vec![0.25, -1.5];
    assert_eq!(run_ncp(&st, &[0.0; 3], 3, false), vec![0.25, -1.5]);

    let mut one = ncp_store(1, 1, 1, 1, 2);
    for (path, v) in [("ncp.a1", 1.0), ("ncp.b1", 1.0), ("ncp.c", 1.0), ("ncp.q", 0.0)] {
        one.get_mut(path).unwrap().data = vec![v];
    }
    for z in [-2.0, 0.3, 5.0] {
        assert_eq!(run_ncp(&one, &[z], 1, false), vec![z]);
    }
}

#[test]
fn ncp_rejects_order_zero() {
    let st = ncp_store(2, 2, 1, 1, 0);
    let mut tape = Tape::new();
    let p = st.bind(&mut tape).unwrap();
    let z = tape.constant([1, 2], vec![0.0; 2]).unwrap();
    assert!(ncp_forward(&mut tape, z, &p, 0, false).is_err());
}

#[test]
fn ncp_is_cubic_along_rays() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut st = ncp_store(5, 6, 3, 3, 4);
    for p in st.params_mut() {
        p.data = random_vec(&mut rng, p.data.len(), 1.0);
    }
    for _ in 0..5 {
        let u = random_vec(&mut rng, 5, 1.0);
        let samples: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                let z: Vec<f64> = u.iter().map(|x| x * i as f64 * 0.5).collect();
                run_ncp(&st, &z, 3, false)
            })
            .collect();
        for c in 0..3 {
            let f: Vec<f64> = samples.iter().map(|y| y[c]).collect();
            let scale = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(nth_difference(&f, 4).abs() <= 1e-9 * scale);
            assert!(nth_difference(&f[..4], 3).abs() > 1e-3 * scale);
        }
    }
}

#[test]
fn u_block_zero_and_shape() {
    let cfg = tiny();
    let st = decoder_store(&cfg, 5);
    let mut tape = Tape::new();
    let p = st.bind(&mut tape).unwrap();
    let z0 = tape.constant([1, K], vec![0.0; K]).unwrap();
    let u0 = u_block(&mut tape, z0, &p, &cfg).unwrap();
    assert!(tape.value(u0).unwrap().iter().all(|&v| v == 0.0));
    let z = tape.constant([1, K], vec![0.3; K]).unwrap();
    let u = u_block(&mut tape, z, &p, &cfg).unwrap();
    assert_eq!(tape.shape(u).unwrap(), &[4, 2, 2]);
}

#[test]
fn u_block_gradients() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let st = with_inputs(&decoder_store(&cfg, 6), &[("input.z", vec![1, K], random_vec(&mut rng, K, 1.0))]);
    let rep = gradcheck::check_store(&st, 6, |tape, p| {
        let z = p.var("input.z")?;
        u_block(tape, z, p, &cfg)
    })
    .unwrap();
    assert!(rep.max_rel_err < 1e-4, "{rep:?}");
}

fn adain_store(ch: usize, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ParamBuilder::new(&mut rng);
    b.scope("f", |b| adain_params(b, K, ch));
    b.finish().unwrap()
}

#[test]
fn adain_neutral_and_constant_channel() {
    let mut st = adain_store(2, 7);
    st.get_mut("f.adain.scale.weight").unwrap().data.fill(0.0);
    st.get_mut("f.adain.shift.weight").unwrap().data.fill(0.0);
    let x = vec![1.0, 2.0, 3.0, 6.0, 0.5, 0.5, 0.5, 0.5];
    let mut tape = Tape::new();
    let p = st.bind(&mut tape).unwrap();
    let vx = tape.constant([2, 2, 2], x.clone()).unwrap();
    let z = tape.constant([1, K], vec![0.7; K]).unwrap();
    let y = adain(&mut tape, vx, z, &p, "f.adain").unwrap();
    let n = tape.instance_norm(vx, NORM_EPS).unwrap();
    assert_eq!(tape.value(y).unwrap(), tape.value(n).unwrap());

    let st = adain_store(2, 8);
    let mut tape = Tape::new();
    let p = st.bind(&mut tape).unwrap();
    let vx = tape.constant([2, 2, 2], x).unwrap();
    let z = tape.constant([1, K], vec![0.7; K]).unwrap();
    let y = adain(&mut tape, vx, z, &p, "f.adain").unwrap();
    let shift = lin_vec(&mut tape, &p, "f.adain.shift", z).unwrap();
    let s1 = tape.value(shift).unwrap()[1];
    for &v in &tape.value(y).unwrap()[4..] {
        assert!((v - s1).abs() < 1e-12);
    }
}

#[test]
fn adain_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let st = with_inputs(
        &adain_store(3, 9),
        &[
            ("input.x", vec![3, 3, 2], random_vec(&mut rng, 18, 1.0)),
            ("input.z", vec![1, K], random_vec(&mut rng, K, 1.0)),
        ],
    );
    let rep = gradcheck::check_store(&st, 18, |tape, p| {
        adain(tape, p.var("input.x")?, p.var("input.z")?, p, "f.adain")
    })
    .unwrap();
    assert!(rep.max_rel_err < 1e-4, "{rep:?}");
}

fn f_store(cin: usize, cout: usize, s: usize, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ParamBuilder::new(&mut rng);
    b.scope("f", |b| {
        adain_params(b, K, cin);
        conv(b, "conv", cin, cout * s * s, 3);
    });
    b.finish().unwrap()
}

#[test]
fn f_block_identity_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut st = adain_store(2, 10);
    st.get_mut("f.adain.scale.weight").unwrap().data.fill(0.0);
    st.get_mut("f.adain.shift.weight").unwrap().data.fill(0.0);
    let mut params = st.params().to_vec();
    params.push(Param {
        path: "f.conv.weight".into(),
        shape: vec![2, 2, 1, 1],
        kind: ParamKind::Weight,
        data: vec![1.0, 0.0, 0.0, 1.0],
    });
    params.push(Param {
        path: "f.conv.bias".into(),
        shape: vec![2],
        kind: ParamKind::Bias,
        data: vec![0.0; 2],
    });
    let st = ParamStore::from_params(params).unwrap();

    // an already normalized input passes the neutral AdaIN unchanged
    let raw = random_vec(&mut rng, 2 * 3 * 3, 1.0);
    let mut tape = Tape::new();
    let vx = tape.constant([2, 3, 3], raw).unwrap();
    let xn = tape.instance_norm(vx, 0.0).unwrap();
    let xn = tape.value(xn).unwrap().to_vec();

    let mut tape = Tape::new();
    let p = st.bind(&mut tape).unwrap();
    let x = tape.constant([2, 3, 3], xn.clone()).unwrap();
    let z = tape.constant([1, K], vec![0.2; K]).unwrap();
    let y = f_block(&mut tape, x, z, &p, "f", 1, true).unwrap();
    let g = tape.gelu(x).unwrap();
    let (y, g) = (tape.value(y).unwrap(), tape.value(g).unwrap());
    for (a, b) in y.iter().zip(g) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn f_block_shape_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let st = with_inputs(
        &f_store(2, 3, 2, 11),
        &[
            ("input.x", vec![2, 3, 3], random_vec(&mut rng, 18, 1.0)),
            ("input.z", vec![1, K], random_vec(&mut rng, K, 1.0)),
        ],
    );
    let mut tape = Tape::new();
    let p = st.bind(&mut tape).unwrap();
    let x = p.var("input.x").unwrap();
    let z = p.var("input.z").unwrap();
    let y = f_block(&mut tape, x, z, &p, "f", 2, true).unwrap();
    assert_eq!(tape.shape(y).unwrap(), &[3, 6, 6]);

    let rep = gradcheck::check_store(&st, 12, |tape, p| {
        f_block(tape, p.var("input.x")?, p.var("input.z")?, p, "f", 2, true)
    })
    .unwrap();
    assert!(rep.max_rel_err < 1e-4, "{rep:?}");
}

fn block1_input(cfg: &DecoderConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    random_vec(rng, cfg.u_channels * cfg.seed.0 * cfg.seed.1, 1.0)
}

fn run_block(store: &ParamStore, cfg: &DecoderConfig, x: &[f64], z: &[f64], mode: Mode) -> Vec<f64> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape).unwrap();
    let vx = tape
        .constant([cfg.u_channels, cfg.seed.0, cfg.seed.1], x.to_vec())
        .unwrap();
    let vz = tape.constant([1, K], z.to_vec()).unwrap();
    let y = prodpoly_block(&mut tape, vx, vz, &p, cfg, 1, mode).unwrap();
    tape.value(y).unwrap().to_vec()
}

#[test]
fn prodpoly_gates() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = block1_input(&cfg, &mut rng);
    let z = random_vec(&mut rng, K, 1.0);

    let mut zeroed = decoder_store(&cfg, 12);
    for path in ["psi1", "psi2"] {
        for part in ["weight", "bias"] {
            zeroed.get_mut(&format!("decoder.b1.{path}.{part}")).unwrap().data.fill(0.0);
        }
    }
    assert!(run_block(&zeroed, &cfg, &x, &z, Mode::Standard).iter().all(|&v| v == 0.0));

    let mut ones = decoder_store(&cfg, 12);
    for path in ["psi1", "psi2"] {
        ones.get_mut(&format!("decoder.b1.{path}.weight")).unwrap().data.fill(0.0);
        ones.get_mut(&format!("decoder.b1.{path}.bias")).unwrap().data.fill(1.0);
    }
    let gated = run_block(&ones, &cfg, &x, &z, Mode::Standard);
    let mut tape = Tape::new();
    let p = ones.bind(&mut tape).unwrap();
    let vx = tape.constant([4, 2, 2], x.clone()).unwrap();
    let vz = tape.constant([1, K], z.clone()).unwrap();
    let f1 = f_block(&mut tape, vx, vz, &p, "decoder.b1.f1", 2, true).unwrap();
    let f2 = f_block(&mut tape, f1, vz, &p, "decoder.b1.f2", 1, true).unwrap();
    assert_eq!(gated, tape.value(f2).unwrap());
}

#[test]
fn prodpoly_block1_is_quadratic_in_z() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let st = decoder_store(&cfg, 13);
    let x = block1_input(&cfg, &mut rng);
    let z0 = random_vec(&mut rng, K, 1.0);
    let u = random_vec(&mut rng, K, 1.0);
    let samples: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            let z: Vec<f64> = z0.iter().zip(&u).map(|(a, b)| a + b * i as f64).collect();
            run_block(&st, &cfg, &x, &z, Mode::Probe)
        })
        .collect();
    let mut some_quadratic = false;
    for c in 0..samples[0].len() {
        let f: Vec<f64> = samples.iter().map(|y| y[c]).collect();
        let scale = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(nth_difference(&f, 3).abs() <= 1e-9 * scale);
        some_quadratic |= nth_difference(&f, 2).abs() > 1e-3 * scale;
    }
    assert!(some_quadratic);
}

#[test]
fn decode_shape_and_degenerate_output() {
    let cfg = tiny();
    let st = decoder_store(&cfg, 14);
    let y = run_decode(&st, &cfg, &[0.1; K], Mode::Standard);
    assert_eq!(y.len(), 3 * 8 * 8);
    assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));

    let mut zero = st.clone();
    for p in zero.params_mut() {
        p.data.fill(0.0);
    }
    let mut tape = Tape::new();
    let p = zero.bind(&mut tape).unwrap();
    let z = tape.constant([1, K], vec![0.4; K]).unwrap();
    let out = decode_patch(&mut tape, z, &p, &cfg).unwrap();
    assert_eq!(tape.shape(out).unwrap(), &[3, 8, 8]);
    assert!(tape.value(out).unwrap().iter().all(|&v| v == 0.5));
}

#[test]
fn decode_is_bit_stable() {
    let cfg = DecoderConfig::desk();
    let st = decoder_store(&cfg, 15);
    let z: Vec<f64> = (0..K).map(|i| (i as f64 * 0.37).sin()).collect();
    assert_eq!(
        run_decode(&st, &cfg, &z, Mode::Standard),
        run_decode(&st, &cfg, &z, Mode::Standard)
    );
}

#[test]
fn decode_gradients() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let st = with_inputs(&decoder_store(&cfg, 16), &[("input.z", vec![1, K], random_vec(&mut rng, K, 1.0))]);
    let rep = gradcheck::check_store(&st, 2, |tape, p| decode_patch(tape, p.var("input.z")?, p, &cfg))
        .unwrap();
    assert!(rep.max_rel_err < 1e-3, "{rep:?}");
}

/// Smallest `d` such that every coordinate of `f` has a vanishing
/// `(d+1)`-th forward difference along the sample points `0, 1, …`, checked
/// together with a non-vanishing `d`-th difference for at least one coordinate.
fn measured_degree(f: impl Fn(f64) -> Vec<f64>, max: usize) -> usize {
    let samples: Vec<Vec<f64>> = (0..=max + 1).map(|i| f(0.5 * i as f64)).collect();
    let diff = |c: usize, order: usize| {
        let col: Vec<f64> = samples[..=order].iter().map(|y| y[c]).collect();
        let scale = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        (nth_difference(&col, order).abs(), scale)
    };
    let coords = samples[0].len();
    for d in 0..=max {
        let vanishes = (0..coords).all(|c| {
            let (v, scale) = diff(c, d + 1);
            v <= 1e-9 * scale
        });
        if vanishes {
            assert!((0..coords).any(|c| {
                let (v, scale) = diff(c, d);
                v > 1e-3 * scale
            }));
            return d;
        }
    }
    panic!("degree exceeds {max}");
}

fn block_input_shape(cfg: &DecoderConfig, r: usize) -> [usize; 3] {
    let (h0, w0) = cfg.seed;
    let [s1, s2, s3] = cfg.upscales;
    match r {
        1 => [cfg.u_channels, h0, w0],
        2 => [cfg.channels[1], h0 * s1 * s2, w0 * s1 * s2],
        _ => [cfg.channels[3], h0 * s1 * s2 * s3, w0 * s1 * s2 * s3],
    }
}

fn probe_block(st: &ParamStore, cfg: &DecoderConfig, r: usize, x: &[f64], z: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let p = st.bind(&mut tape).unwrap();
    let vx = tape.constant(block_input_shape(cfg, r), x.to_vec()).unwrap();
    let vz = tape.constant([1, K], z.to_vec()).unwrap();
    let y = prodpoly_block(&mut tape, vx, vz, &p, cfg, r, Mode::Probe).unwrap();
    tape.value(y).unwrap().to_vec()
}

fn along(base: &[f64], dir: &[f64], s: f64) -> Vec<f64> {
    base.iter().zip(dir).map(|(a, b)| a + s * b).collect()
}

#[test]
fn probe_degree_matches_structure() {
    let cfg = DecoderConfig::desk();
    let st = decoder_store(&cfg, 17);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let z0 = random_vec(&mut rng, K, 1.0);
    let dz = random_vec(&mut rng, K, 1.0);

    let u_deg = measured_degree(
        |s| {
            let mut tape = Tape::new();
            let p = st.bind(&mut tape).unwrap();
            let z = tape.constant([1, K], along(&z0, &dz, s)).unwrap();
            let u = u_block(&mut tape, z, &p, &cfg).unwrap();
            tape.value(u).unwrap().to_vec()
        },
        6,
    );

    let mut block_deg = Vec::new();
    for r in 1..=3 {
        let n: usize = block_input_shape(&cfg, r).iter().product();
        let x0 = random_vec(&mut rng, n, 1.0);
        let dx = random_vec(&mut rng, n, 1.0);
        let in_x = measured_degree(|s| probe_block(&st, &cfg, r, &along(&x0, &dx, s), &z0), 6);
        let in_z = measured_degree(|s| probe_block(&st, &cfg, r, &x0, &along(&z0, &dz, s)), 6);
        block_deg.push((in_x, in_z));
    }
    assert_eq!(u_deg, 3);
    assert_eq!(block_deg, vec![(1, 2), (3, 0), (3, 0)]);

    let mut degree = u_deg;
    for (in_x, in_z) in block_deg {
        degree = in_x * degree + in_z;
    }
    assert_eq!(degree, cfg.structural_degree());
}
