//! Sample storage and the per-iteration active sample set.
//!
//! Every target evaluation is stored together with the Gaussian that
//! generated it (its *origin*). Each iteration, a subset of the database is
//! selected for reuse and weighted against the background mixture `z⊂` of
//! the origins that contributed to it.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Gumbel;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VipsError};
use crate::gaussian::Gaussian;
use crate::mixture::MixtureModel;
use crate::numeric::{normalize_log_weights, LogSumExp};
use crate::targets::Target;

/// How database origins are ranked for reuse by a component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Dissimilarity {
    /// `−log 𝒩(μ_i; μ_o, Σ_o)`.
    #[default]
    #[serde(rename = "mahalanobis")]
    Mahalanobis,
    /// `KL(𝒩_i ‖ q_o)`.
    #[serde(rename = "kl-fwd")]
    ForwardKl,
    /// `KL(q_o ‖ 𝒩_i)`.
    #[serde(rename = "kl-rev")]
    ReverseKl,
    /// All origins equally similar.
    #[serde(rename = "uniform")]
    Uniform,
}

impl FromStr for Dissimilarity {
    type Err = VipsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mahalanobis" => Ok(Self::Mahalanobis),
            "kl-fwd" => Ok(Self::ForwardKl),
            "kl-rev" => Ok(Self::ReverseKl),
            "uniform" => Ok(Self::Uniform),
            other => Err(VipsError::InvalidInput(format!("unknown dissimilarity {other:?}"))),
        }
    }
}

impl fmt::Display for Dissimilarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mahalanobis => "mahalanobis",
            Self::ForwardKl => "kl-fwd",
            Self::ReverseKl => "kl-rev",
            Self::Uniform => "uniform",
        })
    }
}

/// All samples drawn from one Gaussian.
#[derive(Debug, Clone)]
pub struct Origin {
    pub id: u64,
    pub gaussian: Arc<Gaussian>,
    /// Row-major sample coordinates.
    samples: Vec<f64>,
    log_targets: Vec<f64>,
    record_ids: Vec<u64>,
    /// Reuse count `n_i`.
    pub usage: f64,
}

impl Origin {
    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn record_ids(&self) -> &[u64] {
        &self.record_ids
    }

    pub fn log_targets(&self) -> &[f64] {
        &self.log_targets
    }

    pub fn sample(&self, k: usize, dim: usize) -> &[f64] {
        &self.samples[k * dim..(k + 1) * dim]
    }
}

/// Result of an insertion: the origin used and, for every kept input row,
/// `(row index, record id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Inserted {
    pub origin_id: u64,
    pub kept: Vec<(usize, u64)>,
}

fn gaussian_key(g: &Gaussian) -> u64 {
    let mut h = DefaultHasher::new();
    for v in g.mean().iter().chain(g.covariance().iter()) {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

#[derive(Debug, Clone)]
pub struct SampleDatabase {
    dim: usize,
    origins: VecDeque<Origin>,
    first_origin_id: u64,
    next_record_id: u64,
    lookup: HashMap<u64, Vec<u64>>,
    total: usize,
    dropped_nan: usize,
    max_origins: Option<usize>,
}

impl SampleDatabase {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            origins: VecDeque::new(),
            first_origin_id: 0,
            next_record_id: 0,
            lookup: HashMap::new(),
            total: 0,
            dropped_nan: 0,
            max_origins: None,
        }
    }

    /// Keeps at most `cap` origins, evicting the oldest.
    pub fn with_max_origins(dim: usize, cap: Option<usize>) -> Self {
        Self {
            max_origins: cap,
            ..Self::new(dim)
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored records.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn num_origins(&self) -> usize {
        self.origins.len()
    }

    /// Records rejected because their target value was NaN.
    pub fn dropped_nan(&self) -> usize {
        self.dropped_nan
    }

    pub fn origins(&self) -> impl Iterator<Item = &Origin> {
        self.origins.iter()
    }

    pub fn origin(&self, id: u64) -> Option<&Origin> {
        let pos = id.checked_sub(self.first_origin_id)? as usize;
        self.origins.get(pos)
    }

    fn origin_mut(&mut self, id: u64) -> Option<&mut Origin> {
        let pos = id.checked_sub(self.first_origin_id)? as usize;
        self.origins.get_mut(pos)
    }

    pub fn set_usage(&mut self, id: u64, usage: f64) {
        if let Some(o) = self.origin_mut(id) {
            o.usage = usage;
        }
    }

    /// Id of the stored origin equal to `g`, if any.
    pub fn find_origin(&self, g: &Gaussian) -> Option<u64> {
        self.lookup
            .get(&gaussian_key(g))?
            .iter()
            .copied()
            .find(|id| self.origin(*id).is_some_and(|o| *o.gaussian == *g))
    }

    /// Appends records under `origin`, creating the origin if it is new.
    /// Rows with a NaN target are dropped and counted.
    pub fn insert_samples(
        &mut self,
        samples: &DMatrix<f64>,
        log_targets: &[f64],
        origin: &Arc<Gaussian>,
    ) -> Result<Inserted> {
        if samples.ncols() != self.dim || origin.dim() != self.dim {
            return Err(VipsError::DimensionMismatch {
                expected: self.dim,
                found: samples.ncols(),
            });
        }
        if samples.nrows() != log_targets.len() {
            return Err(VipsError::DimensionMismatch {
                expected: samples.nrows(),
                found: log_targets.len(),
            });
        }
        let origin_id = match self.find_origin(origin) {
            Some(id) => id,
            None => self.new_origin(origin.clone()),
        };
        let mut kept = Vec::with_capacity(samples.nrows());
        let dim = self.dim;
        let mut next = self.next_record_id;
        let mut dropped = 0;
        let o = self.origin_mut(origin_id).expect("origin just resolved");
        for (s, &lt) in log_targets.iter().enumerate() {
            if lt.is_nan() {
                dropped += 1;
                continue;
            }
            o.samples.extend((0..dim).map(|d| samples[(s, d)]));
            o.log_targets.push(lt);
            o.record_ids.push(next);
            kept.push((s, next));
            next += 1;
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} samples with NaN target values");
        }
        self.dropped_nan += dropped;
        self.total += kept.len();
        self.next_record_id = next;
        Ok(Inserted { origin_id, kept })
    }

    fn new_origin(&mut self, g: Arc<Gaussian>) -> u64 {
        let id = self.first_origin_id + self.origins.len() as u64;
        self.lookup.entry(gaussian_key(&g)).or_default().push(id);
        self.origins.push_back(Origin {
            id,
            gaussian: g,
            samples: Vec::new(),
            log_targets: Vec::new(),
            record_ids: Vec::new(),
            usage: 0.0,
        });
        if let Some(cap) = self.max_origins {
            while self.origins.len() > cap.max(1) {
                let old = self.origins.pop_front().expect("non-empty");
                self.first_origin_id += 1;
                self.total -= old.len();
                let key = gaussian_key(&old.gaussian);
                if let Some(ids) = self.lookup.get_mut(&key) {
                    ids.retain(|i| *i != old.id);
                    if ids.is_empty() {
                        self.lookup.remove(&key);
                    }
                }
            }
        }
        id
    }

    /// All records in insertion order: `(samples, log targets, record ids)`.
    /// With `last_origins = Some(m)`, only the `m` most recent origins.
    pub fn records(&self, last_origins: Option<usize>) -> (DMatrix<f64>, Vec<f64>, Vec<u64>) {
        let skip = last_origins.map_or(0, |m| self.origins.len().saturating_sub(m));
        let n: usize = self.origins.iter().skip(skip).map(Origin::len).sum();
        let mut data = Vec::with_capacity(n * self.dim);
        let mut targets = Vec::with_capacity(n);
        let mut ids = Vec::with_capacity(n);
        for o in self.origins.iter().skip(skip) {
            data.extend_from_slice(&o.samples);
            targets.extend_from_slice(&o.log_targets);
            ids.extend_from_slice(&o.record_ids);
        }
        (DMatrix::from_row_slice(n, self.dim, &data), targets, ids)
    }

    /// Dissimilarity of every origin to component `g`, in origin order.
    fn dissimilarities(&self, g: &Gaussian, mode: Dissimilarity) -> Result<Vec<f64>> {
        match mode {
            Dissimilarity::Uniform => Ok(vec![0.0; self.origins.len()]),
            Dissimilarity::Mahalanobis => {
                if g.dim() != self.dim {
                    return Err(VipsError::DimensionMismatch {
                        expected: self.dim,
                        found: g.dim(),
                    });
                }
                let means: Vec<f64> = self
                    .origins
                    .iter()
                    .flat_map(|o| o.gaussian.mean().iter().copied())
                    .collect();
                let mut out = vec![0.0; self.origins.len()];
                g.log_density_rows(&means, &mut out);
                out.iter_mut().for_each(|v| *v = -*v);
                Ok(out)
            }
            Dissimilarity::ReverseKl => self
                .origins
                .iter()
                .map(|o| g.kl_divergence(&o.gaussian))
                .collect(),
            Dissimilarity::ForwardKl => self
                .origins
                .iter()
                .map(|o| o.gaussian.kl_divergence(g))
                .collect(),
        }
    }

    /// For every component, draws origins without replacement from
    /// `h(i, o) ∝ exp(−d(o, i) − n_i)` and adds all their samples until at
    /// least `n_reuse` samples were drawn for that component. Samples already
    /// in the set still count. Usage counts of the drawn origins are
    /// incremented after each component's selection.
    pub fn select_samples(
        &mut self,
        model: &MixtureModel,
        n_reuse: usize,
        mode: Dissimilarity,
        rng: &mut ChaCha8Rng,
    ) -> Result<ActiveSampleSet> {
        let mut active = ActiveSampleSet::new(self.dim);
        if self.is_empty() || n_reuse == 0 {
            return Ok(active);
        }
        let gumbel = Gumbel::new(0.0, 1.0).expect("valid Gumbel");
        for g in model.components() {
            let dis = self.dissimilarities(g, mode)?;
            let mut keys: Vec<(f64, usize)> = dis
                .iter()
                .zip(&self.origins)
                .enumerate()
                .map(|(i, (d, o))| {
                    let logit = -d - o.usage;
                    let key = if logit.is_nan() {
                        f64::NEG_INFINITY
                    } else {
                        logit + rng.sample::<f64, _>(gumbel)
                    };
                    (key, i)
                })
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));

            // Lazily sorted prefix: only as many keys are ordered as needed.
            let mut counted = 0usize;
            let mut drawn = Vec::new();
            let mut sorted = 0;
            let mut pos = 0;
            while counted < n_reuse {
                if pos == sorted {
                    if sorted == keys.len() {
                        break;
                    }
                    let rest = &mut keys[sorted..];
                    let chunk = rest.len().min(sorted.max(32));
                    if chunk < rest.len() {
                        rest.select_nth_unstable_by(chunk - 1, cmp);
                    }
                    rest[..chunk].sort_by(cmp);
                    sorted += chunk;
                }
                let i = keys[pos].1;
                pos += 1;
                let o = &self.origins[i];
                if o.is_empty() {
                    continue;
                }
                active.add_origin_samples(o);
                counted += o.len();
                drawn.push(i);
            }
            for i in drawn {
                self.origins[i].usage += 1.0;
            }
        }
        active.rebuild();
        Ok(active)
    }

    /// The first origin drawn by [`select_samples`](Self::select_samples)
    /// for component `g`, exposed for distributional tests.
    pub fn first_draw(
        &self,
        g: &Gaussian,
        mode: Dissimilarity,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<u64>> {
        let gumbel = Gumbel::new(0.0, 1.0).expect("valid Gumbel");
        let dis = self.dissimilarities(g, mode)?;
        let mut best: Option<(f64, u64)> = None;
        for (d, o) in dis.iter().zip(&self.origins) {
            let key = -d - o.usage + rng.sample::<f64, _>(gumbel);
            if !o.is_empty() && best.map_or(true, |(b, _)| key > b) {
                best = Some((key, o.id));
            }
        }
        Ok(best.map(|(_, id)| id))
    }
}

/// One origin's share of the active set.
#[derive(Debug, Clone)]
pub struct OriginGroup {
    pub origin_id: u64,
    pub gaussian: Arc<Gaussian>,
    pub count: usize,
}

/// The samples used in one iteration, with importance weights per component.
#[derive(Debug, Clone)]
pub struct ActiveSampleSet {
    dim: usize,
    data: Vec<f64>,
    samples: DMatrix<f64>,
    log_targets: Vec<f64>,
    record_ids: Vec<u64>,
    members: HashSet<u64>,
    groups: Vec<OriginGroup>,
    group_index: HashMap<u64, usize>,
    log_background: Vec<f64>,
    component_log_densities: DMatrix<f64>,
    weights: DMatrix<f64>,
    n_eff: Vec<f64>,
}

impl ActiveSampleSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            samples: DMatrix::zeros(0, dim),
            log_targets: Vec::new(),
            record_ids: Vec::new(),
            members: HashSet::new(),
            groups: Vec::new(),
            group_index: HashMap::new(),
            log_background: Vec::new(),
            component_log_densities: DMatrix::zeros(0, 0),
            weights: DMatrix::zeros(0, 0),
            n_eff: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `N × D` sample matrix.
    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn log_targets(&self) -> &[f64] {
        &self.log_targets
    }

    pub fn record_ids(&self) -> &[u64] {
        &self.record_ids
    }

    pub fn groups(&self) -> &[OriginGroup] {
        &self.groups
    }

    /// `log z⊂(x_s)`; valid after [`compute_weights`](Self::compute_weights).
    pub fn log_background(&self) -> &[f64] {
        &self.log_background
    }

    /// `log q(x_s | o)` as an `N × K` matrix for the model passed to the
    /// last [`compute_weights`](Self::compute_weights).
    pub fn component_log_densities(&self) -> &DMatrix<f64> {
        &self.component_log_densities
    }

    /// Self-normalized weights `w̄_o(x_s)`, `N × K`; each column sums to one.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn n_eff(&self) -> &[f64] {
        &self.n_eff
    }

    fn add_origin_samples(&mut self, o: &Origin) {
        for (k, &rid) in o.record_ids.iter().enumerate() {
            self.push_record(rid, o.sample(k, self.dim), o.log_targets[k], o.id, &o.gaussian);
        }
    }

    fn push_record(&mut self, rid: u64, x: &[f64], log_target: f64, origin_id: u64, g: &Arc<Gaussian>) {
        if !self.members.insert(rid) {
            return;
        }
        self.data.extend_from_slice(x);
        self.log_targets.push(log_target);
        self.record_ids.push(rid);
        match self.group_index.get(&origin_id) {
            Some(&gi) => self.groups[gi].count += 1,
            None => {
                self.group_index.insert(origin_id, self.groups.len());
                self.groups.push(OriginGroup {
                    origin_id,
                    gaussian: g.clone(),
                    count: 1,
                });
            }
        }
    }

    fn rebuild(&mut self) {
        self.samples = DMatrix::from_row_slice(self.len(), self.dim, &self.data);
    }

    /// Adds records from `db` by id. Unknown ids are an error.
    pub fn add_records(&mut self, db: &SampleDatabase, origin_id: u64, record_ids: &[u64]) -> Result<()> {
        let o = db
            .origin(origin_id)
            .ok_or_else(|| VipsError::InvalidInput(format!("unknown origin {origin_id}")))?;
        for rid in record_ids {
            let k = o
                .record_ids
                .binary_search(rid)
                .map_err(|_| VipsError::InvalidInput(format!("unknown record {rid}")))?;
            self.push_record(*rid, o.sample(k, self.dim), o.log_targets[k], o.id, &o.gaussian);
        }
        self.rebuild();
        Ok(())
    }

    /// Adds every sample of an origin.
    pub fn add_origin(&mut self, db: &SampleDatabase, origin_id: u64) -> Result<()> {
        let o = db
            .origin(origin_id)
            .ok_or_else(|| VipsError::InvalidInput(format!("unknown origin {origin_id}")))?;
        self.add_origin_samples(o);
        self.rebuild();
        Ok(())
    }

    /// Evaluates `z⊂`, the per-component self-normalized weights and `n_eff`.
    pub fn compute_weights(&mut self, model: &MixtureModel) -> Result<()> {
        let n = self.len();
        let k = model.len();
        if n == 0 {
            self.log_background.clear();
            self.component_log_densities = DMatrix::zeros(0, k);
            self.weights = DMatrix::zeros(0, k);
            self.n_eff = vec![0.0; k];
            return Ok(());
        }
        if model.dim() != self.dim {
            return Err(VipsError::DimensionMismatch {
                expected: self.dim,
                found: model.dim(),
            });
        }
        let mut acc = vec![LogSumExp::default(); n];
        let mut ld = vec![0.0; n];
        for g in &self.groups {
            let lw = (g.count as f64 / n as f64).ln();
            g.gaussian.log_density_rows(&self.data, &mut ld);
            for (a, v) in acc.iter_mut().zip(&ld) {
                a.add(lw + v);
            }
        }
        self.log_background = acc.iter().map(LogSumExp::value).collect();

        let comp = model.component_log_densities_rows(&self.data);
        let mut weights = DMatrix::zeros(n, k);
        let mut n_eff = vec![0.0; k];
        let mut lw = vec![0.0; n];
        for o in 0..k {
            for s in 0..n {
                lw[s] = comp[(s, o)] - self.log_background[s];
            }
            let w = normalize_log_weights(&lw);
            weights.column_mut(o).copy_from_slice(&w);
            n_eff[o] = effective_sample_size(&w);
        }
        self.component_log_densities = comp;
        self.weights = weights;
        self.n_eff = n_eff;
        Ok(())
    }
}

/// `(Σ w²)⁻¹`; zero for an empty or all-zero weight vector.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    if sq > 0.0 {
        1.0 / sq
    } else {
        0.0
    }
}

/// Number of fresh samples drawn per component by
/// [`sample_where_needed`]: `max(0, n_des − ⌊n_eff⌋)`. The floor tolerates
/// rounding just below an integer, so uniform weights over `n` samples give
/// `n_eff = n`.
pub fn samples_needed(n_eff: f64, n_des: usize) -> usize {
    n_des.saturating_sub((n_eff + 1e-9).floor() as usize)
}

/// Tops up every component to `n_des` effective samples.
///
/// Draws `max(0, n_des − ⌊n_eff(o)⌋)` samples from each component using the
/// generator returned by `rng_for(o)`, evaluates them in one batch, stores
/// them in `db` and `active`, and recomputes the weights. Returns the number
/// of new samples per component.
pub fn sample_where_needed<F>(
    db: &mut SampleDatabase,
    active: &mut ActiveSampleSet,
    model: &MixtureModel,
    n_des: usize,
    target: &Target,
    mut rng_for: F,
) -> Result<Vec<usize>>
where
    F: FnMut(usize) -> ChaCha8Rng,
{
    if active.n_eff.len() != model.len() {
        active.compute_weights(model)?;
    }
    let counts: Vec<usize> = active
        .n_eff
        .iter()
        .map(|&ne| samples_needed(ne, n_des))
        .collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Ok(counts);
    }
    let dim = model.dim();
    let mut batch = DMatrix::zeros(total, dim);
    let mut row = 0;
    for (o, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let mut rng = rng_for(o);
        let x = model.component(o).sample(c, &mut rng);
        batch.rows_mut(row, c).copy_from(&x);
        row += c;
    }
    let values = target.evaluate(&batch)?;

    let mut row = 0;
    for (o, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let x = batch.rows(row, c).into_owned();
        let ins = db.insert_samples(&x, &values[row..row + c], model.component(o))?;
        for (s, rid) in ins.kept {
            let xs: Vec<f64> = x.row(s).iter().copied().collect();
            active.push_record(rid, &xs, values[row + s], ins.origin_id, model.component(o));
        }
        row += c;
    }
    active.rebuild();
    active.compute_weights(model)?;
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::GmmTarget;
    use nalgebra::DVector;
    use rand::SeedableRng;

    fn g1(mean: f64) -> Arc<Gaussian> {
        Arc::new(Gaussian::isotropic(DVector::from_element(1, mean), 1.0).unwrap())
    }

    #[test]
    fn insertion_bookkeeping() {
        let mut db = SampleDatabase::new(1);
        let origin = g1(0.0);
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let ins = db.insert_samples(&x, &[0.0; 10], &origin).unwrap();
        assert_eq!(db.len(), 10);
        assert_eq!(ins.kept.len(), 10);
        let again = db.insert_samples(&x, &[0.0; 10], &g1(0.0)).unwrap();
        assert_eq!(again.origin_id, ins.origin_id);
        assert_eq!(db.num_origins(), 1);
        let mut t = vec![0.0; 10];
        t[3] = f64::NAN;
        let ins = db.insert_samples(&x, &t, &g1(1.0)).unwrap();
        assert_eq!(ins.kept.len(), 9);
        assert_eq!(db.len(), 29);
        assert_eq!(db.dropped_nan(), 1);
    }

    #[test]
    fn origin_cap_evicts_oldest() {
        let mut db = SampleDatabase::with_max_origins(1, Some(2));
        for m in 0..4 {
            db.insert_samples(&DMatrix::zeros(3, 1), &[0.0; 3], &g1(m as f64)).unwrap();
        }
        assert_eq!(db.num_origins(), 2);
        assert_eq!(db.len(), 6);
        assert!(db.origin(0).is_none());
        assert!(db.find_origin(&g1(0.0)).is_none());
        assert_eq!(db.find_origin(&g1(3.0)), Some(3));
    }

    #[test]
    fn single_origin_is_fully_selected() {
        let mut db = SampleDatabase::new(1);
        db.insert_samples(&DMatrix::zeros(8, 1), &[0.0; 8], &g1(0.0)).unwrap();
        let model = MixtureModel::single((*g1(0.0)).clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let active = db.select_samples(&model, 8, Dissimilarity::Mahalanobis, &mut rng).unwrap();
        assert_eq!(active.len(), 8);
        assert_eq!(db.origin(0).unwrap().usage, 1.0);
    }

    #[test]
    fn effective_sample_size_examples() {
        assert!((effective_sample_size(&[0.1; 10]) - 10.0).abs() < 1e-12);
        assert_eq!(effective_sample_size(&[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(effective_sample_size(&[0.5, 0.5, 0.0, 0.0]), 2.0);
        assert_eq!(effective_sample_size(&[]), 0.0);
        assert_eq!(samples_needed(25.0, 20), 0);
        assert_eq!(samples_needed(3.7, 20), 17);
    }

    #[test]
    fn self_sampled_component_gets_uniform_weights() {
        let g = g1(2.0);
        let model = MixtureModel::single((*g).clone());
        let target = Target::new(GmmTarget::from_mixture(model.clone()));
        let mut db = SampleDatabase::new(1);
        let mut active = ActiveSampleSet::new(1);
        let n = sample_where_needed(&mut db, &mut active, &model, 30, &target, |_| {
            ChaCha8Rng::seed_from_u64(1)
        })
        .unwrap();
        assert_eq!(n, vec![30]);
        assert_eq!(target.evaluations(), 30);
        for w in active.weights().iter() {
            assert!((w - 1.0 / 30.0).abs() < 1e-12);
        }
        assert!((active.n_eff()[0] - 30.0).abs() < 1e-9);
        let n = sample_where_needed(&mut db, &mut active, &model, 30, &target, |_| {
            ChaCha8Rng::seed_from_u64(2)
        })
        .unwrap();
        assert_eq!(n, vec![0]);
    }
}
