//! Run configuration as `key = value` text with `[section]` headers.
//!
//! ```text
//! [patch]    m, n, k, l and optionally frames, height, width
//! [embed]    nu, l, beta, l_tse, k, fusion
//! [decoder]  seed_h, seed_w, upscales, u_channels, f11_mid, channels, activation
//! [train]    gamma, epochs, batch_size, lr0, seed, precision, log_every,
//!            blur, blur_ksize, blur_sigma
//! ```
//!
//! Lists are comma separated. Every key is required except the three video
//! dimensions, which default to those of the video being trained on.

use std::fmt::{Display, Write};
use std::path::Path;
use std::str::FromStr;

use ini::Ini;

use crate::decoder::DecoderConfig;
use crate::embedding::EmbedConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::sampling::PatchSpec;
use crate::tensor::Precision;
use crate::training::{BlurConfig, TrainConfig};

/// Patch layout; the video dimensions may be left to the input video.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchLayout {
    pub frames: Option<usize>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub l: usize,
}

impl PatchLayout {
    /// Resolves against a video of the given shape. Dimensions given in the
    /// config must agree with it.
    pub fn resolve(&self, frames: usize, height: usize, width: usize) -> Result<PatchSpec> {
        for (name, cfg, actual) in [
            ("frames", self.frames, frames),
            ("height", self.height, height),
            ("width", self.width, width),
        ] {
            if cfg.is_some_and(|c| c != actual) {
                return Err(Error::invalid(format!(
                    "config sets patch.{name} = {} but the video has {actual}",
                    cfg.unwrap()
                )));
            }
        }
        PatchSpec::new(frames, height, width, (self.m, self.n), (self.k, self.l))
    }

    /// The full spec, if all video dimensions are set.
    pub fn spec(&self) -> Result<PatchSpec> {
        match (self.frames, self.height, self.width) {
            (Some(f), Some(h), Some(w)) => self.resolve(f, h, w),
            _ => Err(Error::invalid("patch.frames, patch.height and patch.width are required here")),
        }
    }
}

impl From<&PatchSpec> for PatchLayout {
    fn from(s: &PatchSpec) -> Self {
        PatchLayout {
            frames: Some(s.frames),
            height: Some(s.height),
            width: Some(s.width),
            m: s.m,
            n: s.n,
            k: s.k,
            l: s.l,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub patch: PatchLayout,
    pub embed: EmbedConfig,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
}

const KEYS: [(&str, &[&str]); 4] = [
    ("patch", &["frames", "height", "width", "m", "n", "k", "l"]),
    ("embed", &["nu", "l", "beta", "l_tse", "k", "fusion"]),
    (
        "decoder",
        &["seed_h", "seed_w", "upscales", "u_channels", "f11_mid", "channels", "activation"],
    ),
    (
        "train",
        &[
            "gamma", "epochs", "batch_size", "lr0", "seed", "precision", "log_every", "blur",
            "blur_ksize", "blur_sigma",
        ],
    ),
];

struct Reader<'a> {
    ini: &'a Ini,
}

impl Reader<'_> {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.ini.section(Some(section)).and_then(|p| p.get(key))
    }

    fn opt<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        self.raw(section, key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::invalid(format!("cannot parse {section}.{key} = `{v}`")))
            })
            .transpose()
    }

    fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<T> {
        self.opt(section, key)?.ok_or_else(|| Error::MissingKey {
            section: section.into(),
            key: key.into(),
        })
    }

    fn list<const N: usize>(&self, section: &str, key: &str) -> Result<[usize; N]> {
        let raw: String = self.get(section, key)?;
        let items = raw
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::invalid(format!("cannot parse {section}.{key} = `{raw}`")))?;
        items
            .try_into()
            .map_err(|_| Error::invalid(format!("{section}.{key} needs {N} comma-separated values")))
    }
}

fn parse_precision(s: &str) -> Result<Precision> {
    match s {
        "f64" => Ok(Precision::F64),
        "f32" => Ok(Precision::F32),
        _ => Err(Error::invalid(format!("unknown precision `{s}` (f64 or f32)"))),
    }
}

fn precision_name(p: Precision) -> &'static str {
    match p {
        Precision::F64 => "f64",
        Precision::F32 => "f32",
    }
}

fn join(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    /// The small preset used by the fixtures: 64×64 frames in a 4×4 patch
    /// grid with 2×2 sub-patches.
    pub fn desk() -> Self {
        RunConfig {
            patch: PatchLayout {
                frames: None,
                height: None,
                width: None,
                m: 4,
                n: 4,
                k: 2,
                l: 2,
            },
            embed: EmbedConfig::desk(),
            decoder: DecoderConfig::desk(),
            train: TrainConfig::default(),
        }
    }

    pub fn model_config(&self, spec: PatchSpec) -> ModelConfig {
        ModelConfig {
            patch: spec,
            embed: self.embed.clone(),
            decoder: self.decoder.clone(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::ConfigSyntax {
            line: e.line,
            msg: e.msg.to_string(),
        })?;
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((key, _)) = props.iter().next() {
                    return Err(Error::invalid(format!("key `{key}` outside any section")));
                }
                continue;
            };
            let Some((_, allowed)) = KEYS.iter().find(|(s, _)| *s == section) else {
                return Err(Error::invalid(format!("unknown config section `[{section}]`")));
            };
            if let Some((key, _)) = props.iter().find(|(k, _)| !allowed.contains(k)) {
                return Err(Error::invalid(format!("unknown config key `{section}.{key}`")));
            }
        }
        let r = Reader { ini: &ini };
        let patch = PatchLayout {
            frames: r.opt("patch", "frames")?,
            height: r.opt("patch", "height")?,
            width: r.opt("patch", "width")?,
            m: r.get("patch", "m")?,
            n: r.get("patch", "n")?,
            k: r.get("patch", "k")?,
            l: r.get("patch", "l")?,
        };
        let embed = EmbedConfig {
            nu: r.get("embed", "nu")?,
            l: r.get("embed", "l")?,
            beta: r.get("embed", "beta")?,
            l_tse: r.get("embed", "l_tse")?,
            k: r.get("embed", "k")?,
            fusion: r.get::<String>("embed", "fusion")?.parse()?,
        };
        let decoder = DecoderConfig {
            seed: (r.get("decoder", "seed_h")?, r.get("decoder", "seed_w")?),
            upscales: r.list("decoder", "upscales")?,
            u_channels: r.get("decoder", "u_channels")?,
            f11_mid: r.get("decoder", "f11_mid")?,
            channels: r.list("decoder", "channels")?,
            activation: r.get("decoder", "activation")?,
        };
        let train = TrainConfig {
            gamma: r.get("train", "gamma")?,
            epochs: r.get("train", "epochs")?,
            batch_size: r.get("train", "batch_size")?,
            lr0: r.get("train", "lr0")?,
            seed: r.get("train", "seed")?,
            precision: parse_precision(&r.get::<String>("train", "precision")?)?,
            log_every: r.get("train", "log_every")?,
            blur: BlurConfig {
                enabled: r.get("train", "blur")?,
                ksize: r.get("train", "blur_ksize")?,
                sigma: r.get("train", "blur_sigma")?,
            },
        };
        embed.validate()?;
        decoder.validate()?;
        train.validate()?;
        Ok(RunConfig {
            patch,
            embed,
            decoder,
            train,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Text form accepted by [`RunConfig::parse`]. Floats are written in
    /// shortest round-trip form, so parsing the text gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.patch;
        s.push_str("[patch]\n");
        for (key, v) in [("frames", p.frames), ("height", p.height), ("width", p.width)] {
            if let Some(v) = v {
                kv(&mut s, key, v);
            }
        }
        for (key, v) in [("m", p.m), ("n", p.n), ("k", p.k), ("l", p.l)] {
            kv(&mut s, key, v);
        }
        let e = &self.embed;
        s.push_str("\n[embed]\n");
        kv(&mut s, "nu", e.nu);
        kv(&mut s, "l", e.l);
        kv(&mut s, "beta", e.beta);
        kv(&mut s, "l_tse", e.l_tse);
        kv(&mut s, "k", e.k);
        kv(&mut s, "fusion", e.fusion);
        let d = &self.decoder;
        s.push_str("\n[decoder]\n");
        kv(&mut s, "seed_h", d.seed.0);
        kv(&mut s, "seed_w", d.seed.1);
        kv(&mut s, "upscales", join(&d.upscales));
        kv(&mut s, "u_channels", d.u_channels);
        kv(&mut s, "f11_mid", d.f11_mid);
        kv(&mut s, "channels", join(&d.channels));
        kv(&mut s, "activation", d.activation);
        let t = &self.train;
        s.push_str("\n[train]\n");
        kv(&mut s, "gamma", t.gamma);
        kv(&mut s, "epochs", t.epochs);
        kv(&mut s, "batch_size", t.batch_size);
        kv(&mut s, "lr0", t.lr0);
        kv(&mut s, "seed", t.seed);
        kv(&mut s, "precision", precision_name(t.precision));
        kv(&mut s, "log_every", t.log_every);
        kv(&mut s, "blur", t.blur.enabled);
        kv(&mut s, "blur_ksize", t.blur.ksize);
        kv(&mut s, "blur_sigma", t.blur.sigma);
        s
    }
}

fn kv(s: &mut String, key: &str, value: impl Display) {
    writeln!(s, "{key} = {value}").unwrap();
}
