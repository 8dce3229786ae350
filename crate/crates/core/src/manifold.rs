//! Adaptive domain splitting driven by a nonlinearity index, and the inverse
//! history-based merging.
//!
//! A [`Domain`] is a polynomial state vector over `[-1, 1]^v` together with
//! its splitting history and an accumulated process-noise covariance. A
//! [`Manifold`] is an ordered set of domains jointly covering one uncertainty
//! set. [`adaptive_eval`] pushes a manifold through a target function,
//! trisecting domains along the most nonlinear direction until every output
//! patch is accurately linearizable; [`merge`] recombines sibling triplets
//! whose recombined parent is linear enough.

use nalgebra::Matrix6;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::astro::Epoch;
use crate::dapoly::{DaError, TaylorPoly};
use crate::linalg;

pub type TargetError = Box<dyn std::error::Error + Send + Sync + 'static>;
pub type TargetResult = Result<Vec<TaylorPoly>, TargetError>;

/// One trisection step: the split direction and which third this domain is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SplitRecord {
    /// Variable index the parent was split along.
    pub direction: u32,
    /// Which subdomain, 1 (left), 2 (center) or 3 (right).
    pub third: u8,
}

impl SplitRecord {
    /// Center offset of this third in the parent's coordinates.
    pub fn offset(&self) -> f64 {
        2.0 / 3.0 * (self.third as f64 - 2.0)
    }
}

/// A polynomial state patch with its provenance.
#[derive(Clone, Debug, Serialize)]
pub struct Domain {
    /// State components, all sharing one algebra.
    pub state: Vec<TaylorPoly>,
    /// Trisection records from the root domain down to this patch.
    pub history: Vec<SplitRecord>,
    /// Accumulated process-noise covariance in state-space units.
    pub pn_cov: Matrix6<f64>,
    pub epoch: Epoch,
    /// Set when refinement stopped at the depth cap rather than the
    /// nonlinearity threshold; kept and counted in diagnostics.
    pub depth_limited: bool,
}

impl Domain {
    pub fn new(state: Vec<TaylorPoly>, epoch: Epoch) -> Self {
        Domain {
            state,
            history: Vec::new(),
            pn_cov: Matrix6::zeros(),
            epoch,
            depth_limited: false,
        }
    }

    pub fn depth(&self) -> usize {
        self.history.len()
    }

    /// Constant parts of the state components.
    pub fn center(&self) -> Vec<f64> {
        self.state.iter().map(|p| p.const_part()).collect()
    }
}

/// An ordered set of domains covering one uncertainty set.
#[derive(Clone, Debug, Serialize)]
pub struct Manifold {
    pub domains: Vec<Domain>,
    pub epoch: Epoch,
}

impl Manifold {
    pub fn new(domains: Vec<Domain>, epoch: Epoch) -> Self {
        Manifold { domains, epoch }
    }

    pub fn single(domain: Domain) -> Self {
        let epoch = domain.epoch;
        Manifold {
            domains: vec![domain],
            epoch,
        }
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn set_epoch(&mut self, epoch: Epoch) {
        self.epoch = epoch;
        for d in &mut self.domains {
            d.epoch = epoch;
        }
    }

    pub fn sort_by_history(&mut self) {
        self.domains.sort_by(|a, b| a.history.cmp(&b.history));
    }

    /// One JSON object per domain: history, per-component bounds, covariance.
    pub fn dump_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.domains {
            let bounds: Vec<_> = d.state.iter().map(|p| p.bound()).collect();
            let cov: Vec<Vec<f64>> = (0..6)
                .map(|i| (0..6).map(|j| d.pn_cov[(i, j)]).collect())
                .collect();
            let line = serde_json::json!({
                "epoch_s": d.epoch.0,
                "history": d.history,
                "bounds": bounds,
                "pn_cov": cov,
                "depth_limited": d.depth_limited,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("degenerate map: Jacobian constant part vanishes (history {history:?})")]
    DegenerateMap { history: Vec<SplitRecord> },
    #[error("target function failed on domain {history:?}: {source}")]
    TargetEval {
        history: Vec<SplitRecord>,
        #[source]
        source: TargetError,
    },
    #[error(transparent)]
    Da(#[from] DaError),
}

/// Nonlinearity index of a polynomial map.
///
/// Builds the Jacobian `J_ij = d pv_i / d dx_j` and returns the ratio of the
/// Frobenius norm of the first-order coefficient bounds `sum_k |a_ij,k|` to
/// the Frobenius norm of the constant part. Affine maps score exactly zero.
pub fn nli(pv: &[TaylorPoly]) -> Result<f64, ManifoldError> {
    nli_inner(pv, None)
}

/// Directional nonlinearity index: the Jacobian is composed with the vector
/// that zeroes every variable except `dx_d` before the index is formed.
pub fn directional_nli(pv: &[TaylorPoly], d: usize) -> Result<f64, ManifoldError> {
    nli_inner(pv, Some(d))
}

fn nli_inner(pv: &[TaylorPoly], only_dir: Option<usize>) -> Result<f64, ManifoldError> {
    let nvars = pv[0].nvars();
    let mut num2 = 0.0;
    let mut den2 = 0.0;
    for comp in pv {
        for j in 0..nvars {
            let entry = comp.partial(j)?;
            let entry = match only_dir {
                Some(d) => entry.retain_terms(|exps| {
                    exps.iter().enumerate().all(|(v, &e)| e == 0 || v == d)
                }),
                None => entry,
            };
            let c = entry.const_part();
            den2 += c * c;
            let mut b = 0.0;
            for k in 0..nvars {
                b += entry.linear_coeff(k).abs();
            }
            num2 += b * b;
        }
    }
    if den2 == 0.0 {
        return Err(ManifoldError::DegenerateMap {
            history: Vec::new(),
        });
    }
    Ok((num2 / den2).sqrt())
}

/// Trisect a domain along direction `d`.
///
/// Child `j` sees the parent through `dx_d -> 2/3 (j-2) + dx_d / 3`, so the
/// three children tile the parent's `[-1, 1]` interval in that direction.
pub fn split(dom: &Domain, d: usize) -> Result<[Domain; 3], ManifoldError> {
    let mut children = Vec::with_capacity(3);
    for third in 1..=3u8 {
        let rec = SplitRecord {
            direction: d as u32,
            third,
        };
        let state = dom
            .state
            .iter()
            .map(|p| p.substitute_var_affine(d, rec.offset(), 1.0 / 3.0))
            .collect::<Result<Vec<_>, _>>()?;
        let mut history = dom.history.clone();
        history.push(rec);
        children.push(Domain {
            state,
            history,
            pn_cov: dom.pn_cov,
            epoch: dom.epoch,
            depth_limited: dom.depth_limited,
        });
    }
    Ok(children.try_into().expect("three children"))
}

/// Result of [`adaptive_eval`]: the image manifold and the refined input
/// manifold, in bijection (identical histories, identical order).
pub struct AdaptiveEval {
    pub output: Manifold,
    pub input_refined: Manifold,
}

/// Evaluate `f` over a manifold, recursively trisecting domains whose image
/// nonlinearity index exceeds `eps`.
///
/// Splitting picks the direction with the largest directional index (lowest
/// index wins ties). Domains whose history reaches `max_depth` are emitted
/// flagged rather than discarded. Output domains are sorted by history.
pub fn adaptive_eval<F>(
    f: F,
    input: &Manifold,
    eps: f64,
    max_depth: usize,
) -> Result<AdaptiveEval, ManifoldError>
where
    F: Fn(&[TaylorPoly]) -> TargetResult + Sync,
{
    assert!(eps > 0.0, "splitting threshold must be positive");
    let mut pending: Vec<Domain> = input.domains.clone();
    let mut finished: Vec<(Domain, Domain)> = Vec::new();
    while !pending.is_empty() {
        let batch = std::mem::take(&mut pending);
        let evaluated: Vec<(Domain, TargetResult)> = batch
            .into_par_iter()
            .map(|dom| {
                let res = f(&dom.state);
                (dom, res)
            })
            .collect();
        for (dom, res) in evaluated {
            let out_pv = res.map_err(|source| ManifoldError::TargetEval {
                history: dom.history.clone(),
                source,
            })?;
            // a point domain maps to a point: nothing to split, index zero
            let point_domain = dom.state.iter().all(|p| p.is_constant());
            let nu = if point_domain {
                0.0
            } else {
                match nli(&out_pv) {
                    Ok(nu) => nu,
                    Err(ManifoldError::DegenerateMap { .. }) => {
                        return Err(ManifoldError::DegenerateMap {
                            history: dom.history.clone(),
                        })
                    }
                    Err(e) => return Err(e),
                }
            };
            if nu <= eps || dom.depth() >= max_depth {
                let flagged = nu > eps;
                let out_dom = Domain {
                    state: out_pv,
                    history: dom.history.clone(),
                    pn_cov: dom.pn_cov,
                    epoch: dom.epoch,
                    depth_limited: flagged,
                };
                let mut in_dom = dom;
                in_dom.depth_limited = flagged;
                finished.push((out_dom, in_dom));
            } else {
                // pick the dominant nonlinear direction; first index wins ties
                let nvars = out_pv[0].nvars();
                let mut best = (0usize, f64::NEG_INFINITY);
                for d in 0..nvars {
                    let nu_d = match directional_nli(&out_pv, d) {
                        Ok(v) => v,
                        Err(ManifoldError::DegenerateMap { .. }) => 0.0,
                        Err(e) => return Err(e),
                    };
                    if nu_d > best.1 {
                        best = (d, nu_d);
                    }
                }
                pending.extend(split(&dom, best.0)?);
            }
        }
    }
    finished.sort_by(|a, b| a.0.history.cmp(&b.0.history));
    let (out, inp): (Vec<Domain>, Vec<Domain>) = finished.into_iter().unzip();
    Ok(AdaptiveEval {
        output: Manifold::new(out, input.epoch),
        input_refined: Manifold::new(inp, input.epoch),
    })
}

/// Recombine sibling triplets bottom-up.
///
/// Domains are grouped by depth; among the deepest, triplets identical in
/// history except the final third are recombined through the central child
/// (`dx_d -> 3 dx_d`) and accepted when `nli_of` approves the candidate.
/// Accepted parents re-enter one depth shallower, so chains of merges happen
/// in one call. Incomplete triplets pass through untouched. The merged
/// covariance is the element-wise maximum of the three children's.
pub fn merge<F>(man: &Manifold, nli_of: F, eps: f64) -> Result<Manifold, ManifoldError>
where
    F: Fn(&[TaylorPoly]) -> Result<f64, ManifoldError>,
{
    use std::collections::BTreeMap;
    let mut by_depth: BTreeMap<usize, Vec<Domain>> = BTreeMap::new();
    for d in &man.domains {
        by_depth.entry(d.depth()).or_default().push(d.clone());
    }
    let mut done: Vec<Domain> = Vec::new();
    while let Some((&depth, _)) = by_depth.iter().next_back() {
        let doms = by_depth.remove(&depth).unwrap();
        if depth == 0 {
            done.extend(doms);
            continue;
        }
        let mut groups: BTreeMap<(Vec<SplitRecord>, u32), Vec<Domain>> = BTreeMap::new();
        for dom in doms {
            let prefix = dom.history[..depth - 1].to_vec();
            let dir = dom.history[depth - 1].direction;
            groups.entry((prefix, dir)).or_default().push(dom);
        }
        for ((prefix, dir), mut group) in groups {
            group.sort_by_key(|d| d.history[depth - 1].third);
            let thirds: Vec<u8> = group.iter().map(|d| d.history[depth - 1].third).collect();
            if thirds != [1, 2, 3] {
                done.extend(group);
                continue;
            }
            let central = &group[1];
            let parent_state = central
                .state
                .iter()
                .map(|p| p.substitute_var_affine(dir as usize, 0.0, 3.0))
                .collect::<Result<Vec<_>, _>>()?;
            let accept = match nli_of(&parent_state) {
                Ok(nu) => nu <= eps,
                Err(ManifoldError::DegenerateMap { .. }) => false,
                Err(e) => return Err(e),
            };
            if accept {
                let pn_cov = linalg::elementwise_max(
                    &linalg::elementwise_max(&group[0].pn_cov, &group[1].pn_cov),
                    &group[2].pn_cov,
                );
                let parent = Domain {
                    state: parent_state,
                    history: prefix,
                    pn_cov,
                    epoch: central.epoch,
                    depth_limited: false,
                };
                by_depth.entry(depth - 1).or_default().push(parent);
            } else {
                done.extend(group);
            }
        }
    }
    done.sort_by(|a, b| a.history.cmp(&b.history));
    Ok(Manifold::new(done, man.epoch))
}

/// Merge with the default criterion: the nonlinearity index of the state
/// polynomials themselves.
pub fn merge_default(man: &Manifold, eps: f64) -> Result<Manifold, ManifoldError> {
    merge(man, |pv| nli(pv), eps)
}

/// The sub-box of the root `[-1, 1]` interval this history confines each
/// variable to, as `(lower, upper)` per variable.
pub fn history_box(history: &[SplitRecord], nvars: usize) -> Vec<(f64, f64)> {
    let mut boxes = vec![(-1.0, 1.0); nvars];
    // records compose innermost-out: the local box threads through the
    // affine maps from the deepest split back to the root
    for rec in history.iter().rev() {
        let (lo, hi) = boxes[rec.direction as usize];
        let c = rec.offset();
        boxes[rec.direction as usize] = (c + lo / 3.0, c + hi / 3.0);
    }
    boxes
}

/// Map a root-domain point into this domain's local coordinates, or `None`
/// when the point falls outside the subdomain the history describes.
pub fn replay_point(history: &[SplitRecord], pt: &[f64]) -> Option<Vec<f64>> {
    let mut local = pt.to_vec();
    for rec in history {
        let d = rec.direction as usize;
        let x = 3.0 * (local[d] - rec.offset());
        if !(-1.0..=1.0).contains(&x) {
            return None;
        }
        local[d] = x;
    }
    Some(local)
}
