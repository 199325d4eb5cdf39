//! Fusion of the frame-index and patch embeddings into the decoder input.
//!
//! The default is a third-order multiplicative recursion without biases:
//!
//! ```text
//! x1 = A1sᵀ s + A1tᵀ t
//! xn = (Antᵀ t + Ansᵀ s) ⊙ x(n-1) + x(n-1)      n = 2, 3
//! ```
//!
//! where `t` is the frame-index embedding and `s` the patch embedding. The
//! time-aware spatial embedding is added to the result. Three single-layer
//! alternatives are kept for comparison experiments.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::embedding::EmbedConfig;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamBuilder, ParamKind};
use crate::tensor::{Tape, Var};

/// Number of multiplicative stages.
pub const ORDER: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum FusionMode {
    ConcatLinear,
    LinearAdd,
    LinearHadamard,
    #[default]
    Hmf,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [
        FusionMode::ConcatLinear,
        FusionMode::LinearAdd,
        FusionMode::LinearHadamard,
        FusionMode::Hmf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::ConcatLinear => "concat_linear",
            FusionMode::LinearAdd => "linear_add",
            FusionMode::LinearHadamard => "linear_hadamard",
            FusionMode::Hmf => "hmf",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown fusion mode `{s}`")))
    }
}

/// Registers the parameters used by `cfg.fusion` under `fusion.`.
pub fn init_fusion<R: Rng>(b: &mut ParamBuilder<R>, cfg: &EmbedConfig) {
    let w = 2 * cfg.l;
    let k = cfg.k;
    b.scope("fusion", |b| match cfg.fusion {
        FusionMode::Hmf => {
            for n in 1..=ORDER {
                b.uniform(&format!("t{n}"), &[w, k], w, ParamKind::Weight);
                b.uniform(&format!("s{n}"), &[k, k], k, ParamKind::Weight);
            }
        }
        FusionMode::ConcatLinear => {
            b.uniform("concat.weight", &[w + k, k], w + k, ParamKind::Weight);
            b.uniform("concat.bias", &[k], w + k, ParamKind::Bias);
        }
        FusionMode::LinearAdd | FusionMode::LinearHadamard => {
            b.uniform("t1", &[w, k], w, ParamKind::Weight);
            b.uniform("s1", &[k, k], k, ParamKind::Weight);
        }
    });
}

/// Multiplicative fusion of `[1, 2l]` time and `[1, k]` patch embeddings.
pub fn hmf(tape: &mut Tape, t: Var, s: Var, p: &Bound) -> Result<Var> {
    let mut x: Option<Var> = None;
    for n in 1..=ORDER {
        let at = tape.matmul(t, p.var(&format!("fusion.t{n}"))?)?;
        let as_ = tape.matmul(s, p.var(&format!("fusion.s{n}"))?)?;
        let lin = tape.add(at, as_)?;
        x = Some(match x {
            None => lin,
            Some(prev) => {
                let prod = tape.hadamard(lin, prev)?;
                tape.add(prod, prev)?
            }
        });
    }
    Ok(x.expect("ORDER >= 1"))
}

/// `z = tse + fused`.
pub fn fuse(tape: &mut Tape, tse: Var, fused: Var) -> Result<Var> {
    tape.add(tse, fused)
}

/// Fuses time and patch embeddings with the given strategy.
pub fn fusion_ablation(
    tape: &mut Tape,
    mode: FusionMode,
    t: Var,
    s: Var,
    p: &Bound,
) -> Result<Var> {
    match mode {
        FusionMode::Hmf => hmf(tape, t, s, p),
        FusionMode::ConcatLinear => {
            let (wt, ws) = (tape.shape(t)?[1], tape.shape(s)?[1]);
            let ft = tape.reshape(t, [wt])?;
            let fs = tape.reshape(s, [ws])?;
            let cat = tape.concat(&[ft, fs])?;
            let cat = tape.reshape(cat, [1, wt + ws])?;
            let y = tape.matmul(cat, p.var("fusion.concat.weight")?)?;
            tape.add_bias(y, p.var("fusion.concat.bias")?)
        }
        FusionMode::LinearAdd | FusionMode::LinearHadamard => {
            let at = tape.matmul(t, p.var("fusion.t1")?)?;
            let as_ = tape.matmul(s, p.var("fusion.s1")?)?;
            if mode == FusionMode::LinearAdd {
                tape.add(at, as_)
            } else {
                tape.hadamard(at, as_)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::gradcheck;
    use crate::params::ParamStore;

    fn store(mode: FusionMode, l: usize, seed: u64) -> ParamStore {
        let mut cfg = EmbedConfig::with_width(l);
        cfg.fusion = mode;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ParamBuilder::new(&mut rng);
        init_fusion(&mut b, &cfg);
        b.finish().unwrap()
    }

    fn eval(store: &ParamStore, mode: FusionMode, t: &[f64], s: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape).unwrap();
        let vt = tape.constant([1, t.len()], t.to_vec()).unwrap();
        let vs = tape.constant([1, s.len()], s.to_vec()).unwrap();
        let y = fusion_ablation(&mut tape, mode, vt, vs, &p).unwrap();
        tape.value(y).unwrap().to_vec()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn mode_names_round_trip() {
        for m in FusionMode::ALL {
            assert_eq!(m.name().parse::<FusionMode>().unwrap(), m);
        }
        assert!("bilinear".parse::<FusionMode>().is_err());
    }

    #[test]
    fn zero_inputs_give_zero() {
        let st = store(FusionMode::Hmf, 3, 0);
        assert_eq!(eval(&st, FusionMode::Hmf, &[0.0; 6], &[0.0; 6]), vec![0.0; 6]);
    }

    #[test]
    fn scalar_all_ones() {
        let mut st = store(FusionMode::Hmf, 1, 0);
        // width 2 -> use a 1-wide projection by zeroing all but the first entries
        for p in st.params_mut() {
            p.data.fill(0.0);
            p.data[0] = 1.0;
        }
        let y = eval(&st, FusionMode::Hmf, &[1.0, 0.0], &[1.0, 0.0]);
        assert_eq!(y[0], 18.0);
        let (a, b) = (0.3, -0.7);
        let y = eval(&st, FusionMode::Hmf, &[a, 0.0], &[b, 0.0]);
        let want = (a + b + 1.0f64).powi(2) * (a + b);
        assert!((y[0] - want).abs() < 1e-15);
    }

    fn forward_differences(f: &[f64], order: usize) -> f64 {
        let mut d = f.to_vec();
        for _ in 0..order {
            d = d.windows(2).map(|w| w[1] - w[0]).collect();
        }
        d[0]
    }

    #[test]
    fn hmf_is_cubic_along_rays() {
        let mut st = store(FusionMode::Hmf, 4, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for p in st.params_mut() {
            p.data = random_vec(&mut rng, p.data.len());
        }
        for _ in 0..5 {
            let u = random_vec(&mut rng, 8);
            let v = random_vec(&mut rng, 8);
            let samples: Vec<Vec<f64>> = (0..5)
                .map(|i| {
                    let s = 0.5 * i as f64;
                    let t: Vec<f64> = u.iter().map(|x| s * x).collect();
                    let p: Vec<f64> = v.iter().map(|x| s * x).collect();
                    eval(&st, FusionMode::Hmf, &t, &p)
                })
                .collect();
            for c in 0..8 {
                let f: Vec<f64> = samples.iter().map(|y| y[c]).collect();
                let scale = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                assert!(forward_differences(&f, 4).abs() <= 1e-9 * scale);
                let d3 = forward_differences(&f[..4], 3).abs();
                assert!(d3 > 1e-3 * scale, "{d3} {scale}");
            }
        }
    }

    #[test]
    fn hmf_is_not_symmetric() {
        let st = store(FusionMode::Hmf, 3, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_vec(&mut rng, 6);
        let b = random_vec(&mut rng, 6);
        let ab = eval(&st, FusionMode::Hmf, &a, &b);
        let ba = eval(&st, FusionMode::Hmf, &b, &a);
        assert!(ab.iter().zip(&ba).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    fn identity(p: &mut crate::params::Param) {
        let n = p.shape[0];
        p.data.fill(0.0);
        for i in 0..n {
            p.data[i * n + i] = 1.0;
        }
    }

    #[test]
    fn linear_baselines_with_identity_maps() {
        for mode in [FusionMode::LinearAdd, FusionMode::LinearHadamard] {
            let mut st = store(mode, 2, 1);
            identity(st.get_mut("fusion.t1").unwrap());
            identity(st.get_mut("fusion.s1").unwrap());
            let a = [1.0, 2.0, -3.0, 0.5];
            let b = [4.0, -1.0, 2.0, 2.0];
            let y = eval(&st, mode, &a, &b);
            let want: Vec<f64> = a
                .iter()
                .zip(&b)
                .map(|(x, y)| if mode == FusionMode::LinearAdd { x + y } else { x * y })
                .collect();
            assert_eq!(y, want);
        }
        let st = store(FusionMode::ConcatLinear, 2, 1);
        assert_eq!(eval(&st, FusionMode::ConcatLinear, &[0.1; 4], &[0.2; 4]).len(), 4);
    }

    #[test]
    fn fuse_adds() {
        let mut tape = Tape::new();
        let a = tape.constant([1, 2], vec![1.0, 2.0]).unwrap();
        let b = tape.constant([1, 2], vec![3.0, 4.0]).unwrap();
        let z = fuse(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(z).unwrap(), &[4.0, 6.0]);
        let zr = fuse(&mut tape, b, a).unwrap();
        assert_eq!(tape.value(zr).unwrap(), &[4.0, 6.0]);
        let c = tape.constant([1, 3], vec![0.0; 3]).unwrap();
        assert!(fuse(&mut tape, a, c).is_err());
    }

    #[test]
    fn fusion_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random_vec(&mut rng, 6);
        let s = random_vec(&mut rng, 6);
        for mode in FusionMode::ALL {
            let st = store(mode, 3, 12);
            let rep = gradcheck::check_store(&st, 36, |tape, p| {
                let vt = tape.constant([1, 6], t.clone())?;
                let vs = tape.constant([1, 6], s.clone())?;
                fusion_ablation(tape, mode, vt, vs, p)
            })
            .unwrap();
            assert!(rep.max_rel_err < 1e-4, "{mode}: {rep:?}");
        }
    }
}
