//! The recursive Greedy Bayes estimator: per-index posteriors `p_{i,k}`,
//! fit and residual updates, sample stores, and the averaged predictor
//! `f̂_K(x) = (1/n) Σᵢ f̂_{i,K}(x)`.
//!
//! The loop order is k outer, i inner; posterior `(i,k)` tilts the prior by
//! the stage-`k−1` residuals of indexes `j < i` only, so every fit
//! `f̂_{i,k}` depends on data up to index `i` alone.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densities::DensitySpec;
use crate::error::{Error, Result};
use crate::model::{Activation, ActivationKind, Dataset, HyperParams, PriorSpec};
use crate::samplers::{sample_posterior, ChainConfig};
use crate::util::{derive_seed, STREAM_GREEDY};

/// Stored weight draws keyed by (index i, stage k), both 1-based.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleStore {
    entries: BTreeMap<(usize, usize), Vec<DVector<f64>>>,
}

impl SampleStore {
    pub fn new() -> Self {
        SampleStore::default()
    }

    /// Insert the draws for `(i, k)`. Stage order is enforced: stage `k`
    /// entries are admitted only once stage `k−1` is complete for all `n`
    /// indexes seen so far.
    pub fn insert(
        &mut self,
        i: usize,
        k: usize,
        n: usize,
        l: usize,
        d: usize,
        draws: Vec<DVector<f64>>,
    ) -> Result<()> {
        if i == 0 || i > n || k == 0 {
            return Err(Error::Input(format!("store key (i={i}, k={k}) out of range for n={n}")));
        }
        if draws.len() != l {
            return Err(Error::Input(format!(
                "store entry ({i},{k}) has {} draws, expected L = {l}",
                draws.len()
            )));
        }
        if draws.iter().any(|w| w.len() != d) {
            return Err(Error::Input(format!("store entry ({i},{k}) has draws of wrong dimension")));
        }
        if k > 1 {
            for j in 1..=n {
                if !self.entries.contains_key(&(j, k - 1)) {
                    return Err(Error::State(format!(
                        "cannot insert ({i},{k}): stage {} incomplete (missing index {j})",
                        k - 1
                    )));
                }
            }
        }
        self.entries.insert((i, k), draws);
        Ok(())
    }

    pub fn get(&self, i: usize, k: usize) -> Option<&Vec<DVector<f64>>> {
        self.entries.get(&(i, k))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All entries for indexes `1..=n` and stages `1..=k_max` present.
    pub fn is_complete(&self, n: usize, k_max: usize) -> bool {
        (1..=k_max).all(|k| (1..=n).all(|i| self.entries.contains_key(&(i, k))))
    }

    /// `(1/L) Σ_ℓ ψ(x·w^{(ℓ)})` over the draws stored at `(i,k)`.
    pub fn mean_psi(&self, i: usize, k: usize, act: &Activation, x: &DVector<f64>) -> Result<f64> {
        let draws = self
            .entries
            .get(&(i, k))
            .ok_or_else(|| Error::State(format!("sample store has no entry ({i},{k})")))?;
        let mut s = 0.0;
        for w in draws {
            s += act.psi(x.dot(w));
        }
        Ok(s / draws.len() as f64)
    }
}

/// A fitted Greedy Bayes model: the complete sample store plus everything
/// needed to evaluate the predictor.
#[derive(Clone, Debug)]
pub struct GreedyBayesModel {
    pub store: SampleStore,
    pub hyper: HyperParams,
    pub act: Activation,
    pub prior: PriorSpec,
    pub dataset: Dataset,
}

/// The spec of `p_{i,k}(w) ∝ exp(α Σ_{j<i} r_{j,k−1} ψ(xⱼ·w)) p₀(w)`:
/// design rows `1..i−1` with the previous-stage residuals. `i` is 1-based;
/// `i = 1` yields an empty sum (the posterior is the prior), not an error.
pub fn stage_posterior_spec(
    ds: &Dataset,
    residuals_prev: &DVector<f64>,
    i: usize,
    k: usize,
    hyper: &HyperParams,
    act: &Activation,
    prior: &PriorSpec,
) -> Result<DensitySpec> {
    if i == 0 || i > ds.n() {
        return Err(Error::Input(format!(
            "stage posterior index i={i} out of range 1..={} (stage k={k})",
            ds.n()
        )));
    }
    if residuals_prev.len() != ds.n() {
        return Err(Error::Input(format!(
            "residual vector has {} entries, dataset has {}",
            residuals_prev.len(),
            ds.n()
        )));
    }
    let rows = i - 1;
    let x_slice = DMatrix::from_fn(rows, ds.dim(), |r, c| ds.x()[(r, c)]);
    let r = DVector::from_fn(rows, |j, _| residuals_prev[j]);
    DensitySpec::new(x_slice, r, *act, hyper.alpha, *prior)
}

/// Fit the order-K estimator: for `k = 1..K` and `i = 1..n`, draw `L`
/// weights from `p_{i,k}` through the two-stage pipeline, store them, and
/// update fits and residuals. Sequential reference implementation.
pub fn fit(
    ds: &Dataset,
    hyper: &HyperParams,
    act: &Activation,
    prior: &PriorSpec,
    cfg: &ChainConfig,
) -> Result<GreedyBayesModel> {
    fit_impl(ds, hyper, act, prior, cfg, false)
}

/// Same recursion with the index loop of each stage run in parallel;
/// per-(i,k) RNG streams make the result identical to the sequential fit.
pub fn fit_parallel(
    ds: &Dataset,
    hyper: &HyperParams,
    act: &Activation,
    prior: &PriorSpec,
    cfg: &ChainConfig,
) -> Result<GreedyBayesModel> {
    fit_impl(ds, hyper, act, prior, cfg, true)
}

fn fit_impl(
    ds: &Dataset,
    hyper: &HyperParams,
    act: &Activation,
    prior: &PriorSpec,
    cfg: &ChainConfig,
    parallel: bool,
) -> Result<GreedyBayesModel> {
    hyper.validate()?;
    prior.validate()?;
    cfg.validate()?;
    let n = ds.n();
    let beta = hyper.beta;

    let mut store = SampleStore::new();
    // residuals of the previous stage (r_{·,0} = y) and the running
    // same-index fits f̂_{i,k}(x_i)
    let mut residuals = ds.y().clone();
    let mut fits_diag = DVector::<f64>::zeros(n);

    for k in 1..=hyper.k {
        let stage_result: Result<Vec<(usize, Vec<DVector<f64>>, f64)>> = if parallel {
            (1..=n)
                .into_par_iter()
                .map(|i| stage_index_draws(ds, &residuals, i, k, hyper, act, prior, cfg))
                .collect()
        } else {
            (1..=n)
                .map(|i| stage_index_draws(ds, &residuals, i, k, hyper, act, prior, cfg))
                .collect()
        };
        let stage = stage_result?;

        for (i, draws, mean_psi_at_xi) in stage {
            store.insert(i, k, n, hyper.l, ds.dim(), draws)?;
            let idx = i - 1;
            fits_diag[idx] = (1.0 - beta) * fits_diag[idx] + beta * mean_psi_at_xi;
            residuals[idx] = ds.y()[idx] - (1.0 - beta) * fits_diag[idx];
        }
    }

    Ok(GreedyBayesModel {
        store,
        hyper: *hyper,
        act: *act,
        prior: *prior,
        dataset: ds.clone(),
    })
}

#[allow(clippy::too_many_arguments)]
fn stage_index_draws(
    ds: &Dataset,
    residuals_prev: &DVector<f64>,
    i: usize,
    k: usize,
    hyper: &HyperParams,
    act: &Activation,
    prior: &PriorSpec,
    cfg: &ChainConfig,
) -> Result<(usize, Vec<DVector<f64>>, f64)> {
    let spec = stage_posterior_spec(ds, residuals_prev, i, k, hyper, act, prior)?;
    let seeded = cfg
        .clone()
        .with_seed(derive_seed(cfg.seed, &[STREAM_GREEDY, i as u64, k as u64]));
    let (draws, _) = sample_posterior(&spec, &seeded, hyper.l)
        .map_err(|e| Error::Sampler(format!("sampler failed at (i={i}, k={k}): {e}")))?;
    let xi_row = ds.row(i - 1);
    let mut mean_psi = 0.0;
    for w in &draws {
        mean_psi += act.psi(xi_row.dot(w));
    }
    mean_psi /= draws.len() as f64;
    Ok((i, draws, mean_psi))
}

impl GreedyBayesModel {
    /// The estimator `f̂_K(x) = (1/n) Σᵢ f̂_{i,K}(x)`, with each per-index
    /// fit reconstructed from the stored draws by the closed-form unroll
    /// `f̂_{i,K}(x) = Σ_{k=1}^{K} β(1−β)^{K−k} · meanψ_{i,k}(x)`.
    pub fn predict(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dataset.dim() {
            return Err(Error::Input(format!(
                "input has {} entries, model dimension is {}",
                x.len(),
                self.dataset.dim()
            )));
        }
        let n = self.dataset.n();
        let k_max = self.hyper.k;
        if !self.store.is_complete(n, k_max) {
            return Err(Error::State("sample store is incomplete".into()));
        }
        let beta = self.hyper.beta;
        let mut total = 0.0;
        for i in 1..=n {
            for k in 1..=k_max {
                let weight = beta * (1.0 - beta).powi((k_max - k) as i32);
                total += weight * self.store.mean_psi(i, k, &self.act, x)?;
            }
        }
        Ok(total / n as f64)
    }

    /// Training mean squared error of the stage-k predictor for
    /// `k = 0..K`; stage 0 is the zero predictor. Recomputed exactly from
    /// the stored draws.
    pub fn training_curve(&self, ds: &Dataset) -> Result<Vec<f64>> {
        let n = ds.n();
        if n != self.dataset.n() || ds.dim() != self.dataset.dim() {
            return Err(Error::Input("dataset shape does not match the model".into()));
        }
        if !self.store.is_complete(n, self.hyper.k) {
            return Err(Error::State("sample store is incomplete".into()));
        }
        let beta = self.hyper.beta;
        // fits[i][j] = f̂_{i,k}(x_j), updated stage by stage
        let mut fits = DMatrix::<f64>::zeros(n, n);
        let mut curve = Vec::with_capacity(self.hyper.k + 1);

        let mse_of = |fits: &DMatrix<f64>| -> f64 {
            let mut total = 0.0;
            for j in 0..n {
                let mut estimator = 0.0;
                for i in 0..n {
                    estimator += fits[(i, j)];
                }
                estimator /= n as f64;
                total += (ds.y()[j] - estimator).powi(2);
            }
            total / n as f64
        };
        curve.push(mse_of(&fits));

        for k in 1..=self.hyper.k {
            for i in 1..=n {
                for j in 0..n {
                    let m = self.store.mean_psi(i, k, &self.act, &ds.row(j))?;
                    fits[(i - 1, j)] = (1.0 - beta) * fits[(i - 1, j)] + beta * m;
                }
            }
            curve.push(mse_of(&fits));
        }
        Ok(curve)
    }
}

// ------------------------------------------------------------------
// Model persistence: versioned header + flat numeric table
// ------------------------------------------------------------------

const ARCHIVE_MAGIC: &[u8; 8] = b"GBMODEL\n";
const ARCHIVE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ArchiveHeader {
    version: u32,
    n: usize,
    d: usize,
    k: usize,
    l: usize,
    alpha: f64,
    beta: f64,
    activation: ActivationKind,
    curvature: f64,
    prior: PriorSpec,
}

impl GreedyBayesModel {
    /// Write the model to a single archive: magic, JSON header, the dataset,
    /// then every stored weight vector as a record keyed by (i, k, ℓ).
    /// Weights are raw little-endian f64, so a round-trip reproduces
    /// predictions bit-exactly.
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        let mut out = BufWriter::new(file);
        out.write_all(ARCHIVE_MAGIC)?;
        let header = ArchiveHeader {
            version: ARCHIVE_VERSION,
            n: self.dataset.n(),
            d: self.dataset.dim(),
            k: self.hyper.k,
            l: self.hyper.l,
            alpha: self.hyper.alpha,
            beta: self.hyper.beta,
            activation: self.act.kind(),
            curvature: self.act.curvature(),
            prior: self.prior,
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::State(format!("cannot serialize header: {e}")))?;
        out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        out.write_all(&header_bytes)?;

        for j in 0..self.dataset.n() {
            out.write_all(&self.dataset.y()[j].to_le_bytes())?;
        }
        for i in 0..self.dataset.n() {
            for j in 0..self.dataset.dim() {
                out.write_all(&self.dataset.x()[(i, j)].to_le_bytes())?;
            }
        }

        for ((i, k), draws) in &self.store.entries {
            for (l, w) in draws.iter().enumerate() {
                out.write_all(&(*i as u32).to_le_bytes())?;
                out.write_all(&(*k as u32).to_le_bytes())?;
                out.write_all(&(l as u32).to_le_bytes())?;
                for v in w.iter() {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Load an archive written by [`GreedyBayesModel::save`].
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        let mut input = BufReader::new(file);

        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != ARCHIVE_MAGIC {
            return Err(Error::Data("not a model archive (bad magic)".into()));
        }
        let mut len_bytes = [0u8; 8];
        input.read_exact(&mut len_bytes)?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        if header_len > 1 << 20 {
            return Err(Error::Data("implausible archive header length".into()));
        }
        let mut header_bytes = vec![0u8; header_len];
        input.read_exact(&mut header_bytes)?;
        let header: ArchiveHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Data(format!("bad archive header: {e}")))?;
        if header.version != ARCHIVE_VERSION {
            return Err(Error::Data(format!(
                "unsupported archive version {}",
                header.version
            )));
        }

        let read_f64 = |input: &mut BufReader<std::fs::File>| -> Result<f64> {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let read_u32 = |input: &mut BufReader<std::fs::File>| -> Result<u32> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };

        let mut y = DVector::zeros(header.n);
        for j in 0..header.n {
            y[j] = read_f64(&mut input)?;
        }
        let mut x = DMatrix::zeros(header.n, header.d);
        for i in 0..header.n {
            for j in 0..header.d {
                x[(i, j)] = read_f64(&mut input)?;
            }
        }
        let dataset = Dataset::new(x, y)?;

        let mut store = SampleStore::new();
        let mut pending: BTreeMap<(usize, usize), Vec<DVector<f64>>> = BTreeMap::new();
        for _ in 0..header.n * header.k * header.l {
            let i = read_u32(&mut input)? as usize;
            let k = read_u32(&mut input)? as usize;
            let l = read_u32(&mut input)? as usize;
            let mut w = DVector::zeros(header.d);
            for j in 0..header.d {
                w[j] = read_f64(&mut input)?;
            }
            let entry = pending.entry((i, k)).or_default();
            if entry.len() != l {
                return Err(Error::Data(format!(
                    "archive records for ({i},{k}) are out of order at ℓ={l}"
                )));
            }
            entry.push(w);
        }
        // insert in stage order so the recursion invariant holds
        let keys: Vec<(usize, usize)> = pending.keys().copied().collect();
        let mut by_stage: Vec<(usize, usize)> = keys;
        by_stage.sort_by_key(|&(i, k)| (k, i));
        for (i, k) in by_stage {
            let draws = pending.remove(&(i, k)).expect("key from map");
            store.insert(i, k, header.n, header.l, header.d, draws)?;
        }
        if !store.is_complete(header.n, header.k) {
            return Err(Error::Data("archive is missing store entries".into()));
        }

        Ok(GreedyBayesModel {
            store,
            hyper: HyperParams::new(header.alpha, header.beta, header.k, header.l)?,
            act: Activation::with_curvature(header.activation, header.curvature),
            prior: header.prior,
            dataset,
        })
    }
}
