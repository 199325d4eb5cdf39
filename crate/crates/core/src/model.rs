//! The complete query network: `(patch coordinates, t) → RGB patch`.

use crate::decoder::{self, DecoderConfig, Mode};
use crate::embedding::{self, EmbedConfig};
use crate::error::{Error, Result};
use crate::fusion;
use crate::params::{Bound, ParamBuilder, ParamStore};
use crate::rng::{self, Stream};
use crate::sampling::{self, CoarseCoord, FineCoords, Grid, PatchSpec};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub patch: PatchSpec,
    pub embed: EmbedConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        self.embed.validate()?;
        self.decoder.validate()?;
        let want = (self.patch.patch_height(), self.patch.patch_width());
        if self.decoder.patch_size() != want {
            return Err(Error::invalid(format!(
                "decoder produces {:?} patches but the patch grid needs {:?}",
                self.decoder.patch_size(),
                want
            )));
        }
        Ok(())
    }
}

/// Coordinates of one patch query.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchQuery {
    pub coarse: CoarseCoord,
    pub fine: FineCoords,
}

/// Precomputed coordinates of every patch on a (possibly virtual) grid.
#[derive(Clone, Debug)]
pub struct QueryGrid {
    pub rows: usize,
    pub cols: usize,
    pub queries: Vec<PatchQuery>,
}

impl QueryGrid {
    pub fn new(spec: &PatchSpec) -> Result<Self> {
        let grid = sampling::build_grid(spec.height, spec.width)?;
        Self::from_grid(spec, &grid)
    }

    fn from_grid(spec: &PatchSpec, grid: &Grid) -> Result<Self> {
        let coarse = sampling::coarse_coords(spec, grid)?;
        let mut queries = Vec::with_capacity(coarse.len());
        for i in 0..spec.m {
            for j in 0..spec.n {
                queries.push(PatchQuery {
                    coarse: coarse[i * spec.n + j],
                    fine: sampling::fine_coords(spec, grid, i, j)?,
                });
            }
        }
        Ok(QueryGrid {
            rows: spec.m,
            cols: spec.n,
            queries,
        })
    }

    /// Sub-pixel phase `(a, b)` of a grid refined by `factor` in both axes.
    pub fn phase(spec: &PatchSpec, factor: usize, phase: (usize, usize)) -> Result<Self> {
        let grid = sampling::build_grid(spec.height * factor, spec.width * factor)?;
        let mut queries = Vec::with_capacity(spec.m * spec.n);
        for i in 0..spec.m {
            for j in 0..spec.n {
                let (coarse, fine) = sampling::phase_coords(spec, &grid, factor, phase, i, j)?;
                queries.push(PatchQuery { coarse, fine });
            }
        }
        Ok(QueryGrid {
            rows: spec.m,
            cols: spec.n,
            queries,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> &PatchQuery {
        &self.queries[i * self.cols + j]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// `true` marks entries that are allowed to be non-zero.
    pub mask: Option<Vec<Vec<bool>>>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, Stream::Init);
        let mut b = ParamBuilder::new(&mut rng);
        let positions = config.patch.k * config.patch.l;
        embedding::init_ppe(&mut b, &config.embed, positions);
        fusion::init_fusion(&mut b, &config.embed);
        decoder::init_decoder(&mut b, &config.decoder, config.embed.k);
        let params = b.finish()?;
        Ok(Model {
            config,
            params,
            mask: None,
        })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore, mask: Option<Vec<Vec<bool>>>) -> Result<Self> {
        config.validate()?;
        if let Some(m) = &mask {
            let aligned = m.len() == params.len()
                && m.iter().zip(params.params()).all(|(m, p)| m.len() == p.data.len());
            if !aligned {
                return Err(Error::invalid("prune mask does not match parameters"));
            }
        }
        Ok(Model {
            config,
            params,
            mask,
        })
    }

    pub fn spec(&self) -> &PatchSpec {
        &self.config.patch
    }

    /// Fused decoder input `z: [1, k]` for a query.
    pub fn embed(&self, tape: &mut Tape, p: &Bound, q: &PatchQuery, t: f64) -> Result<Var> {
        let cfg = &self.config.embed;
        let t_emb = embedding::fpe(t, cfg)?;
        let t_var = tape.constant([1, t_emb.len()], t_emb)?;
        let s_var = embedding::ppe(tape, &q.fine, p, cfg)?;
        let fused = fusion::fusion_ablation(tape, cfg.fusion, t_var, s_var, p)?;
        let tse = embedding::tse(q.coarse, t, cfg)?;
        let tse = tape.constant([1, tse.len()], tse)?;
        fusion::fuse(tape, tse, fused)
    }

    /// Predicted `[3, pH, pW]` patch for a query at normalized time `t`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, q: &PatchQuery, t: f64) -> Result<Var> {
        let z = self.embed(tape, p, q, t)?;
        decoder::decode(tape, z, p, &self.config.decoder, Mode::Standard)
    }

    /// Evaluates one patch without gradients.
    pub fn predict(&self, q: &PatchQuery, t: f64) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape)?;
        let y = self.forward(&mut tape, &p, q, t)?;
        tape.tensor(y)
    }

    /// Decodes every patch of `grid` at time `t` and tiles them into an
    /// `[H, D, 3]` frame.
    pub fn render(&self, grid: &QueryGrid, t: f64) -> Result<Tensor> {
        let patches = grid
            .queries
            .iter()
            .map(|q| self.predict(q, t))
            .collect::<Result<Vec<_>>>()?;
        sampling::tile_patches(&self.config.patch, &patches)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }
}
