//! Sequential multifidelity propagation of polynomial uncertainty sets with
//! measurement-driven pruning.
//!
//! The state between measurements is a manifold of alternate-equinoctial
//! polynomials paired with per-domain process-noise covariances. Each
//! measurement epoch runs four steps: multifidelity propagation (analytic
//! polynomial transport recentered on numerically propagated domain centers),
//! covariance inflation and projection onto the observables, pruning against
//! the measurement confidence box, and merging of sibling domains. Epochs
//! whose projection misses the measurement entirely flag it as an outlier
//! and leave the state untouched.

use nalgebra::{Matrix6, Vector6};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::astro::{
    altequi_to_kep, cart_to_kep, kep_to_altequi, kep_to_cart, wrap_angle, AltEquinoctialState,
    AstroError, CartesianState, Epoch, Site, MU_EARTH,
};
use crate::dapoly::{AlgebraSpec, DaError, RangeBound, TaylorPoly};
use crate::dynamics::{
    hf_propagate, lf_propagate, snc_propagate, DynamicsError, ForceConfig, NoiseConfig,
};
use crate::estimate::EstimateError;
use crate::iod::IodSolution;
use crate::linalg;
use crate::manifold::{
    adaptive_eval, merge_default, Domain, Manifold, ManifoldError, SplitRecord, TargetResult,
};
use crate::obs::{measurement_box, project, Observation, ObsError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("state manifold is empty")]
    EmptyManifold,
    #[error("covariance contains non-finite entries")]
    CovarianceNotFinite,
    #[error("observation at {epoch:?} precedes the state epoch {state_epoch:?}")]
    NonMonotonicEpoch { epoch: f64, state_epoch: f64 },
    #[error("no root domain covers history {0:?}")]
    UnmatchedHistory(String),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Astro(#[from] AstroError),
    #[error(transparent)]
    Obs(#[from] ObsError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Da(#[from] DaError),
}

/// Knobs shared by every pipeline stage.
#[derive(Clone, Debug, Serialize)]
pub struct PipelineConfig {
    /// High-fidelity force selection for centers and covariance transport.
    pub hf: ForceConfig,
    /// Analytic model J2 toggle for the polynomial transport.
    pub lf_with_j2: bool,
    pub noise: NoiseConfig,
    /// Confidence z-score for measurement boxes and covariance lifts.
    pub c: f64,
    /// Splitting threshold.
    pub eps: f64,
    pub max_depth: usize,
    /// Integrator tolerance for scalar center/covariance propagation.
    pub hf_tol: f64,
}

impl PipelineConfig {
    pub fn new(hf: ForceConfig, lf_with_j2: bool, noise: NoiseConfig) -> Self {
        PipelineConfig {
            hf,
            lf_with_j2,
            noise,
            c: 3.0,
            eps: 1e-2,
            max_depth: 12,
            hf_tol: 1e-10,
        }
    }
}

/// Per-epoch domain counts after each of the four steps.
#[derive(Clone, Debug, Serialize)]
pub struct EpochCounts {
    pub epoch: Epoch,
    pub propagation: usize,
    pub projection: usize,
    pub pruning: usize,
    pub merging: usize,
    /// Union volume of the initial-variable boxes retained so far.
    pub initial_volume: f64,
}

/// Bounds of one projected domain and whether it survived pruning.
#[derive(Clone, Debug, Serialize)]
pub struct ProjectedBounds {
    pub history: Vec<SplitRecord>,
    pub rho: RangeBound,
    pub ra: RangeBound,
    pub dec: RangeBound,
    pub retained: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PruneReport {
    pub epoch: Epoch,
    pub obs_index: usize,
    pub projected_count: usize,
    pub retained_count: usize,
    pub outlier: bool,
    pub domains: Vec<ProjectedBounds>,
}

/// Running state of the sequential algorithm.
#[derive(Clone, Debug)]
pub struct PipelineState {
    /// Alternate-equinoctial polynomial manifold.
    pub manifold: Manifold,
    /// Indices of correlated observations.
    pub correlated: Vec<usize>,
    /// Indices of rejected (outlier) observations.
    pub outliers: Vec<usize>,
    pub history_log: Vec<EpochCounts>,
}

fn ae_state_to_polys<T: crate::dapoly::DaScalar>(ae: &AltEquinoctialState<T>) -> Vec<T> {
    ae.to_array().to_vec()
}

fn cart_polys_to_ae(state: &[TaylorPoly]) -> Result<Vec<TaylorPoly>, PipelineError> {
    let cart = CartesianState::from_array(state);
    let ae = kep_to_altequi(&cart_to_kep(&cart, MU_EARTH)?, MU_EARTH)?;
    Ok(ae_state_to_polys(&ae))
}

fn ae_polys_to_cart(state: &[TaylorPoly]) -> Result<Vec<TaylorPoly>, PipelineError> {
    let ae = AltEquinoctialState::from_array(state);
    let cart = kep_to_cart(&altequi_to_kep(&ae, MU_EARTH)?, MU_EARTH)?;
    Ok(cart.to_array().to_vec())
}

fn ae_center_to_cart(center: &[f64]) -> Result<Vector6<f64>, PipelineError> {
    let ae = AltEquinoctialState::from_array(center);
    let cart = kep_to_cart(&altequi_to_kep(&ae, MU_EARTH)?, MU_EARTH)?;
    Ok(Vector6::from_row_slice(&cart.to_array()))
}

fn cart_center_to_ae(x: &Vector6<f64>) -> Result<[f64; 6], PipelineError> {
    let cart = CartesianState::from_array(x.as_slice());
    let ae = kep_to_altequi(&cart_to_kep(&cart, MU_EARTH)?, MU_EARTH)?;
    Ok(ae.to_array())
}

/// Jacobian of the AE -> Cartesian map at an AE point.
fn jac_ae_to_cart(center: &[f64]) -> Result<Matrix6<f64>, PipelineError> {
    let spec = AlgebraSpec::new(1, 6);
    let polys: Vec<TaylorPoly> = (0..6)
        .map(|i| TaylorPoly::variable(spec, i, center[i], 1.0))
        .collect::<Result<_, _>>()?;
    let cart = ae_polys_to_cart(&polys)?;
    let mut j = Matrix6::zeros();
    for i in 0..6 {
        for k in 0..6 {
            j[(i, k)] = cart[i].linear_coeff(k);
        }
    }
    Ok(j)
}

/// Jacobian of the Cartesian -> AE map at a Cartesian point.
fn jac_cart_to_ae(x: &Vector6<f64>) -> Result<Matrix6<f64>, PipelineError> {
    let spec = AlgebraSpec::new(1, 6);
    let polys: Vec<TaylorPoly> = (0..6)
        .map(|i| TaylorPoly::variable(spec, i, x[i], 1.0))
        .collect::<Result<_, _>>()?;
    let ae = cart_polys_to_ae(&polys)?;
    let mut j = Matrix6::zeros();
    for i in 0..6 {
        for k in 0..6 {
            j[(i, k)] = ae[i].linear_coeff(k);
        }
    }
    Ok(j)
}

/// Convert an initial-orbit manifold (Cartesian polynomials) into the
/// pipeline representation: alternate-equinoctial polynomials with zeroed
/// process-noise covariances.
pub fn init_from_iod(iod: &IodSolution, cfg: &PipelineConfig) -> Result<PipelineState, PipelineError> {
    let target = |state: &[TaylorPoly]| -> TargetResult {
        cart_polys_to_ae(state).map_err(|e| Box::new(e) as crate::manifold::TargetError)
    };
    let res = adaptive_eval(target, &iod.manifold, cfg.eps, cfg.max_depth)?;
    let mut manifold = res.output;
    for d in &mut manifold.domains {
        d.pn_cov = Matrix6::zeros();
    }
    Ok(PipelineState {
        manifold,
        correlated: Vec::new(),
        outliers: Vec::new(),
        history_log: Vec::new(),
    })
}

/// Initialize a single-domain state from a mean and covariance: first-order
/// polynomials along the scaled covariance eigenvectors, six fresh
/// deviation variables. The state is Cartesian in, alternate-equinoctial out.
pub fn init_from_estimate(
    x0: &Vector6<f64>,
    p0: &Matrix6<f64>,
    epoch: Epoch,
    cfg: &PipelineConfig,
) -> Result<PipelineState, PipelineError> {
    if p0.iter().any(|v| !v.is_finite()) {
        return Err(PipelineError::CovarianceNotFinite);
    }
    let (vals, vecs) = linalg::jacobi_eigen_sym6(&linalg::symmetrize(p0));
    let vals = linalg::clamp_eigenvalues(&vals, p0.trace());
    let spec = AlgebraSpec::new(2, 6);
    let mut state: Vec<TaylorPoly> = Vec::with_capacity(6);
    for i in 0..6 {
        let mut p = TaylorPoly::constant(spec, x0[i]);
        for j in 0..6 {
            let scale = cfg.c * vals[j].sqrt() * vecs[(i, j)];
            if scale != 0.0 {
                p = p + TaylorPoly::variable(spec, j, 0.0, scale)?;
            }
        }
        state.push(p);
    }
    let cart_dom = Domain::new(state, epoch);
    let target = |s: &[TaylorPoly]| -> TargetResult {
        cart_polys_to_ae(s).map_err(|e| Box::new(e) as crate::manifold::TargetError)
    };
    let res = adaptive_eval(target, &Manifold::single(cart_dom), cfg.eps, cfg.max_depth)?;
    Ok(PipelineState {
        manifold: res.output,
        correlated: Vec::new(),
        outliers: Vec::new(),
        history_log: Vec::new(),
    })
}

/// Multifidelity propagation of the manifold to `t_next`.
///
/// The polynomial (relative) uncertainty rides the analytic model under the
/// splitting scheme; each refined domain's center and covariance are
/// propagated numerically and the polynomial constant parts are replaced by
/// the numeric endpoints.
pub fn mf_step(
    manifold: &Manifold,
    t_next: Epoch,
    cfg: &PipelineConfig,
) -> Result<Manifold, PipelineError> {
    let t0 = manifold.epoch;
    if t_next < t0 {
        return Err(PipelineError::NonMonotonicEpoch {
            epoch: t_next.0,
            state_epoch: t0.0,
        });
    }
    let with_j2 = cfg.lf_with_j2;
    let target = move |state: &[TaylorPoly]| -> TargetResult {
        let ae = AltEquinoctialState::from_array(state);
        lf_propagate(&ae, t0, t_next, with_j2)
            .map(|out| ae_state_to_polys(&out))
            .map_err(|e| Box::new(e) as crate::manifold::TargetError)
    };
    let res = adaptive_eval(target, manifold, cfg.eps, cfg.max_depth)?;

    let recentered: Result<Vec<Domain>, PipelineError> = res
        .output
        .domains
        .par_iter()
        .zip(res.input_refined.domains.par_iter())
        .map(|(lf_out, lf_in)| {
            // numeric center and covariance transport in Cartesian space
            let center0 = lf_in.center();
            let x0 = ae_center_to_cart(&center0)?;
            let j_in = jac_ae_to_cart(&center0)?;
            let p_cart0 = j_in * lf_in.pn_cov * j_in.transpose();
            let (x1, p_cart1) = snc_propagate(
                &x0,
                &linalg::symmetrize(&p_cart0),
                t0,
                t_next,
                &cfg.hf,
                &cfg.noise,
                cfg.hf_tol,
            )?;
            let ae1 = cart_center_to_ae(&x1)?;
            let j_out = jac_cart_to_ae(&x1)?;
            let p_ae1 = linalg::symmetrize(&(j_out * p_cart1 * j_out.transpose()));

            let mut state = Vec::with_capacity(6);
            for (i, p) in lf_out.state.iter().enumerate() {
                // the mean longitude is an angle: recenter on the numeric
                // value at the branch nearest the analytic constant
                let target_const = if i == 5 {
                    p.const_part() + wrap_angle(ae1[i] - p.const_part())
                } else {
                    ae1[i]
                };
                state.push(p.with_const_part(target_const));
            }
            Ok(Domain {
                state,
                history: lf_out.history.clone(),
                pn_cov: p_ae1,
                epoch: t_next,
                depth_limited: lf_out.depth_limited,
            })
        })
        .collect();
    Ok(Manifold::new(recentered?, t_next))
}

/// Observable manifold paired with the state patches it derives from.
pub struct Projection {
    /// One entry per observable domain: `(rho, ra, dec)` polynomials in the
    /// twelve-variable algebra, the full (possibly extended) history, and
    /// the index of the state domain it descends from.
    pub domains: Vec<(Vec<TaylorPoly>, Vec<SplitRecord>, usize)>,
}

/// Inflate each domain with its process-noise covariance (six fresh
/// variables at indices 6..12) and project onto `(rho, ra, dec)` under the
/// splitting scheme.
pub fn inflate_and_project(
    manifold: &Manifold,
    obs: &Observation,
    site: &Site,
    cfg: &PipelineConfig,
) -> Result<Projection, PipelineError> {
    let order = manifold
        .domains
        .first()
        .ok_or(PipelineError::EmptyManifold)?
        .state[0]
        .spec()
        .order;
    let spec12 = AlgebraSpec::new(order, 12);
    let mut inflated = Vec::with_capacity(manifold.len());
    for dom in &manifold.domains {
        if dom.pn_cov.iter().any(|v| !v.is_finite()) {
            return Err(PipelineError::CovarianceNotFinite);
        }
        let (vals, vecs) = linalg::jacobi_eigen_sym6(&dom.pn_cov);
        let vals = linalg::clamp_eigenvalues(&vals, dom.pn_cov.trace());
        let mut state = Vec::with_capacity(6);
        for i in 0..6 {
            let mut p = dom.state[i].embed(spec12, 0)?;
            for j in 0..6 {
                let scale = cfg.c * vals[j].sqrt() * vecs[(i, j)];
                if scale != 0.0 {
                    p = p + TaylorPoly::variable(spec12, 6 + j, 0.0, scale)?;
                }
            }
            state.push(p);
        }
        inflated.push(Domain {
            state,
            history: dom.history.clone(),
            pn_cov: dom.pn_cov,
            epoch: dom.epoch,
            depth_limited: dom.depth_limited,
        });
    }

    let epoch = obs.epoch;
    let site = site.clone();
    let target = move |state: &[TaylorPoly]| -> TargetResult {
        let run = || -> Result<Vec<TaylorPoly>, PipelineError> {
            let cart = ae_polys_to_cart(state)?;
            let r = [cart[0].clone(), cart[1].clone(), cart[2].clone()];
            let (rho, ra, dec) = project(&r, &site, epoch)?;
            Ok(vec![rho, ra, dec])
        };
        run().map_err(|e| Box::new(e) as crate::manifold::TargetError)
    };
    let res = adaptive_eval(
        target,
        &Manifold::new(inflated, manifold.epoch),
        cfg.eps,
        cfg.max_depth,
    )?;

    // map every observable domain back to the state patch it descends from
    let mut domains = Vec::with_capacity(res.output.len());
    for out in res.output.domains.into_iter() {
        let base = manifold
            .domains
            .iter()
            .position(|d| out.history.starts_with(&d.history))
            .ok_or_else(|| PipelineError::UnmatchedHistory(format!("{:?}", out.history)))?;
        domains.push((out.state, out.history, base));
    }
    Ok(Projection { domains })
}

/// Right-ascension intervals live on the circle: overlap is tested against
/// the box shifted by full turns.
fn ra_overlaps(bound: &RangeBound, box_ra: &RangeBound, slack: f64) -> bool {
    if bound.width() >= std::f64::consts::TAU {
        return true;
    }
    for k in [-1.0, 0.0, 1.0] {
        let shifted = RangeBound {
            lower: bound.lower + k * std::f64::consts::TAU,
            upper: bound.upper + k * std::f64::consts::TAU,
        };
        if shifted.overlaps(box_ra, slack) {
            return true;
        }
    }
    false
}

const OVERLAP_SLACK: f64 = 1e-12;

/// Prune the state manifold against one measurement.
///
/// A projected domain is kept when its `(ra, dec)` bound rectangle meets the
/// measurement box in both coordinates (closed intervals, right ascension on
/// the circle). When nothing survives, the measurement is declared an
/// outlier and the state passes through untouched.
pub fn prune(
    manifold: &Manifold,
    projection: &Projection,
    obs: &Observation,
    obs_index: usize,
    cfg: &PipelineConfig,
) -> Result<(Manifold, PruneReport), PipelineError> {
    let mbox = measurement_box(obs, cfg.c);
    let mut domains = Vec::with_capacity(projection.domains.len());
    let mut retained_count = 0usize;
    for (state, history, _) in &projection.domains {
        let rho_b = state[0].bound();
        let ra_b = state[1].bound();
        let dec_b = state[2].bound();
        let keep = ra_overlaps(&ra_b, &mbox.ra_interval, OVERLAP_SLACK)
            && dec_b.overlaps(&mbox.dec_interval, OVERLAP_SLACK);
        retained_count += keep as usize;
        domains.push(ProjectedBounds {
            history: history.clone(),
            rho: rho_b,
            ra: ra_b,
            dec: dec_b,
            retained: keep,
        });
    }
    let outlier = retained_count == 0;
    let report = PruneReport {
        epoch: obs.epoch,
        obs_index,
        projected_count: projection.domains.len(),
        retained_count: if outlier {
            projection.domains.len()
        } else {
            retained_count
        },
        outlier,
        domains,
    };
    if outlier {
        return Ok((manifold.clone(), report));
    }

    // rebuild the state manifold from the retained patches: state-variable
    // splits replay onto the six-variable polynomials, the epoch-local noise
    // variables are dropped
    let mut rebuilt: std::collections::BTreeMap<Vec<SplitRecord>, Domain> =
        std::collections::BTreeMap::new();
    for ((_, history, base), pb) in projection.domains.iter().zip(&report.domains) {
        if !pb.retained {
            continue;
        }
        let base_dom = &manifold.domains[*base];
        let extension = &history[base_dom.history.len()..];
        let mut state = base_dom.state.clone();
        let mut new_history = base_dom.history.clone();
        for rec in extension {
            if (rec.direction as usize) < 6 {
                state = state
                    .iter()
                    .map(|p| {
                        p.substitute_var_affine(rec.direction as usize, rec.offset(), 1.0 / 3.0)
                    })
                    .collect::<Result<_, _>>()?;
                new_history.push(*rec);
            }
        }
        rebuilt.entry(new_history.clone()).or_insert(Domain {
            state,
            history: new_history,
            pn_cov: base_dom.pn_cov,
            epoch: base_dom.epoch,
            depth_limited: base_dom.depth_limited,
        });
    }
    let pruned = Manifold::new(rebuilt.into_values().collect(), manifold.epoch);
    Ok((pruned, report))
}

/// Union volume of the initial-variable boxes covered by the manifold.
pub fn initial_box_volume(manifold: &Manifold) -> f64 {
    manifold
        .domains
        .iter()
        .map(|d| {
            crate::manifold::history_box(&d.history, 6)
                .iter()
                .map(|(lo, hi)| hi - lo)
                .product::<f64>()
        })
        .sum()
}

/// Run the four-step sequence over sorted observations.
pub fn run_sequence(
    mut state: PipelineState,
    observations: &[(Observation, Site)],
    cfg: &PipelineConfig,
) -> Result<(PipelineState, Vec<PruneReport>), PipelineError> {
    if observations
        .windows(2)
        .any(|w| w[1].0.epoch < w[0].0.epoch)
    {
        return Err(PipelineError::NonMonotonicEpoch {
            epoch: 0.0,
            state_epoch: 0.0,
        });
    }
    let mut reports = Vec::with_capacity(observations.len());
    for (idx, (obs, site)) in observations.iter().enumerate() {
        let propagated = mf_step(&state.manifold, obs.epoch, cfg)?;
        let count_prop = propagated.len();
        let projection = inflate_and_project(&propagated, obs, site, cfg)?;
        let count_proj = projection.domains.len();
        let (pruned, report) = prune(&propagated, &projection, obs, idx, cfg)?;
        let count_prune = report.retained_count;
        let merged = if report.outlier {
            state.outliers.push(idx);
            pruned
        } else {
            state.correlated.push(idx);
            merge_default(&pruned, cfg.eps)?
        };
        state.history_log.push(EpochCounts {
            epoch: obs.epoch,
            propagation: count_prop,
            projection: count_proj,
            pruning: count_prune,
            merging: merged.len(),
            initial_volume: initial_box_volume(&merged),
        });
        state.manifold = merged;
        reports.push(report);
    }
    Ok((state, reports))
}

/// Replay the final histories onto the initial manifold and pick the center
/// with the smallest weighted RMS residual against the correlated
/// observations. Returns the best Cartesian state at the initial epoch.
pub fn reconstruct_guess(
    state_final: &PipelineState,
    initial: &Manifold,
    observations: &[(Observation, Site)],
    cfg: &PipelineConfig,
) -> Result<(Vector6<f64>, f64), PipelineError> {
    if state_final.manifold.is_empty() {
        return Err(PipelineError::EmptyManifold);
    }
    let correlated: Vec<&(Observation, Site)> = state_final
        .correlated
        .iter()
        .map(|&i| &observations[i])
        .collect();
    // replay each final history onto the covering initial domain
    let mut candidates: Vec<Vector6<f64>> = Vec::with_capacity(state_final.manifold.len());
    for dom in &state_final.manifold.domains {
        let root = initial
            .domains
            .iter()
            .find(|r| dom.history.starts_with(&r.history))
            .ok_or_else(|| PipelineError::UnmatchedHistory(format!("{:?}", dom.history)))?;
        let mut state = root.state.clone();
        for rec in &dom.history[root.history.len()..] {
            state = state
                .iter()
                .map(|p| p.substitute_var_affine(rec.direction as usize, rec.offset(), 1.0 / 3.0))
                .collect::<Result<_, _>>()?;
        }
        candidates.push(Vector6::from_iterator(
            state.iter().map(|p| p.const_part()),
        ));
    }
    candidates.dedup_by(|a, b| (a.clone() - b.clone()).amax() == 0.0);

    let t0 = initial.epoch;
    let scored: Result<Vec<(f64, Vector6<f64>)>, PipelineError> = candidates
        .par_iter()
        .map(|cand| {
            let mut x = cand.as_slice().to_vec();
            let mut t = t0;
            let mut ss = 0.0;
            let mut n = 0usize;
            for (obs, site) in &correlated {
                x = hf_propagate(&x, t, obs.epoch, &cfg.hf, cfg.hf_tol)?;
                t = obs.epoch;
                let (_, ra, dec) = project(&[x[0], x[1], x[2]], site, obs.epoch)?;
                ss += (crate::astro::angle_diff(obs.ra, ra) / obs.sigma_ra).powi(2);
                ss += ((obs.dec - dec) / obs.sigma_dec).powi(2);
                n += 2;
            }
            let wrms = (ss / n.max(1) as f64).sqrt();
            Ok((wrms, *cand))
        })
        .collect();
    let scored = scored?;
    let best = scored
        .into_iter()
        .min_by(|a, b| a.0.partial_cmp(&b.0).expect("finite residuals"))
        .ok_or(PipelineError::EmptyManifold)?;
    Ok((best.1, best.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::astro::{KeplerianState, Site};
    use crate::obs::TruthTag;
    use approx::assert_relative_eq;

    fn gto() -> KeplerianState<f64> {
        KeplerianState {
            a: 22953.852669768778,
            e: 0.707854612716,
            i: 3.387521317683f64.to_radians(),
            argp: 172.980213527756f64.to_radians(),
            raan: (-168.891499315499f64).to_radians(),
            mean_anom: 60.742995057860f64.to_radians(),
        }
    }

    fn lareunion() -> Site {
        Site::from_degrees(-21.2011, 55.4108, 0.991)
    }

    fn t0() -> Epoch {
        Epoch::parse_iso8601("2019-02-25T18:49:01.148Z").unwrap()
    }

    fn two_body_cfg() -> PipelineConfig {
        PipelineConfig::new(ForceConfig::two_body(), false, NoiseConfig::zero())
    }

    fn seed_state(cfg: &PipelineConfig, pos_sigma: f64, vel_sigma: f64) -> PipelineState {
        let cart = kep_to_cart(&gto(), MU_EARTH).unwrap();
        let x0 = Vector6::from_row_slice(&cart.to_array());
        let mut p0 = Matrix6::zeros();
        for i in 0..3 {
            p0[(i, i)] = pos_sigma * pos_sigma;
            p0[(3 + i, 3 + i)] = vel_sigma * vel_sigma;
        }
        init_from_estimate(&x0, &p0, t0(), cfg).unwrap()
    }

    #[test]
    fn init_from_estimate_diag_covariance() {
        let cfg = two_body_cfg();
        let cart = kep_to_cart(&gto(), MU_EARTH).unwrap();
        let x0 = Vector6::from_row_slice(&cart.to_array());
        // a point state collapses to a point domain
        let point = init_from_estimate(&x0, &Matrix6::zeros(), t0(), &cfg).unwrap();
        assert_eq!(point.manifold.len(), 1);
        for p in &point.manifold.domains[0].state {
            assert_eq!(p.bound().width(), 0.0);
        }

        // diagonal covariance: axis-aligned widths c * sqrt(diag) on the
        // Cartesian lift (checked before the element conversion)
        let sig = [2.0, 1.0, 0.5, 1e-4, 2e-4, 3e-4];
        let mut p0 = Matrix6::zeros();
        for i in 0..6 {
            p0[(i, i)] = sig[i] * sig[i];
        }
        let (vals, vecs) = linalg::jacobi_eigen_sym6(&p0);
        // eigen-decomposition of a diagonal matrix is a permutation
        for j in 0..6 {
            let col = vecs.column(j);
            let nonzero = (0..6).filter(|&i| col[i].abs() > 1e-12).count();
            assert_eq!(nonzero, 1);
            assert!(vals[j] >= 0.0);
        }
        let spec = AlgebraSpec::new(2, 6);
        let mut widths = [0.0; 6];
        for i in 0..6 {
            let mut p = TaylorPoly::constant(spec, x0[i]);
            for j in 0..6 {
                let scale = cfg.c * vals[j].sqrt() * vecs[(i, j)];
                if scale != 0.0 {
                    p = p + TaylorPoly::variable(spec, j, 0.0, scale).unwrap();
                }
            }
            widths[i] = p.bound().width();
        }
        for i in 0..6 {
            assert_relative_eq!(widths[i], 2.0 * cfg.c * sig[i], max_relative = 1e-10);
        }
    }

    #[test]
    fn mf_equals_lf_when_models_coincide() {
        // identical analytic and numeric dynamics with zero noise: the
        // recentering is a no-op and the multifidelity state matches a pure
        // analytic propagation
        let cfg = two_body_cfg();
        let state = seed_state(&cfg, 5.0, 5e-3);
        let t1 = t0() + 7200.0;
        let mf = mf_step(&state.manifold, t1, &cfg).unwrap();
        let lf = adaptive_eval(
            |s: &[TaylorPoly]| {
                let ae = AltEquinoctialState::from_array(s);
                lf_propagate(&ae, t0(), t1, false)
                    .map(|o| o.to_array().to_vec())
                    .map_err(|e| Box::new(e) as crate::manifold::TargetError)
            },
            &state.manifold,
            cfg.eps,
            cfg.max_depth,
        )
        .unwrap()
        .output;
        assert_eq!(mf.len(), lf.len());
        for (a, b) in mf.domains.iter().zip(&lf.domains) {
            for (pa, pb) in a.state.iter().zip(&b.state) {
                let diff = (pa.clone() - pb.clone()).max_abs_coeff();
                let scale = pa.max_abs_coeff().max(1.0);
                assert!(diff / scale < 1e-9, "recentering moved state by {diff}");
            }
            assert!(a.pn_cov.norm() == 0.0);
        }
    }

    #[test]
    fn mf_noise_grows_covariance() {
        let mut cfg = two_body_cfg();
        cfg.noise = NoiseConfig::isotropic(1e-9);
        let state = seed_state(&cfg, 1.0, 1e-3);
        let m1 = mf_step(&state.manifold, t0() + 3600.0, &cfg).unwrap();
        let tr1 = m1.domains[0].pn_cov.trace();
        assert!(tr1 > 0.0);
        let m2 = mf_step(&m1, t0() + 7200.0, &cfg).unwrap();
        let tr2 = m2.domains[0].pn_cov.trace();
        assert!(tr2 > tr1, "trace should grow: {tr1} -> {tr2}");
    }

    fn obs_of_truth(epoch: Epoch, sigma: f64) -> Observation {
        // project the true state propagated under two-body motion
        let cart = kep_to_cart(&gto(), MU_EARTH).unwrap();
        let arr = crate::astro::kepler_propagate(&cart, epoch - t0(), MU_EARTH).unwrap();
        let (_, ra, dec) = project(&arr.r, &lareunion(), epoch).unwrap();
        Observation {
            epoch,
            site_id: "lareunion".into(),
            ra,
            dec,
            sigma_ra: sigma,
            sigma_dec: sigma,
            truth_tag: TruthTag::Target,
        }
    }

    #[test]
    fn projection_point_domain_matches_scalar() {
        let cfg = two_body_cfg();
        let state = seed_state(&cfg, 0.0, 0.0);
        let obs = obs_of_truth(t0(), 1e-6);
        let proj = inflate_and_project(&state.manifold, &obs, &lareunion(), &cfg).unwrap();
        assert_eq!(proj.domains.len(), 1);
        let (polys, _, _) = &proj.domains[0];
        assert_relative_eq!(polys[1].const_part(), obs.ra, epsilon = 1e-10);
        assert_relative_eq!(polys[2].const_part(), obs.dec, epsilon = 1e-10);
        // no noise variables appear for a zero covariance
        for p in polys {
            for v in 6..12 {
                assert_eq!(p.linear_coeff(v), 0.0);
            }
        }
    }

    #[test]
    fn projection_bounds_enclose_samples() {
        let mut cfg = two_body_cfg();
        cfg.noise = NoiseConfig::isotropic(1e-10);
        let state = seed_state(&cfg, 10.0, 1e-3);
        let t1 = t0() + 3600.0;
        let propagated = mf_step(&state.manifold, t1, &cfg).unwrap();
        let obs = obs_of_truth(t1, 1e-6);
        let proj = inflate_and_project(&propagated, &obs, &lareunion(), &cfg).unwrap();

        // sample states (initial-variable draws plus noise draws) and check
        // every projected angle falls inside some domain's bounds
        let mut seed = 31u64;
        let mut rand = move || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (seed >> 33) as f64 / (1u64 << 31) as f64 * 2.0 - 1.0
        };
        for _ in 0..200 {
            let dev: Vec<f64> = (0..12).map(|_| rand()).collect();
            let mut hit = false;
            for (polys, history, _) in &proj.domains {
                if let Some(local) = crate::manifold::replay_point(history, &dev) {
                    let ra = polys[1].eval(&local).unwrap();
                    let dec = polys[2].eval(&local).unwrap();
                    let rab = polys[1].bound();
                    let decb = polys[2].bound();
                    assert!(
                        rab.contains(ra) && decb.contains(dec),
                        "bound violation: {ra} vs {rab:?}"
                    );
                    hit = true;
                    break;
                }
            }
            assert!(hit, "sample escaped every domain");
        }
    }

    #[test]
    fn prune_retains_and_flags() {
        let cfg = two_body_cfg();
        let state = seed_state(&cfg, 5.0, 5e-4);
        let t1 = t0() + 1800.0;
        let propagated = mf_step(&state.manifold, t1, &cfg).unwrap();
        let arcsec = std::f64::consts::PI / (180.0 * 3600.0);
        let good = obs_of_truth(t1, 30.0 * arcsec);
        let proj = inflate_and_project(&propagated, &good, &lareunion(), &cfg).unwrap();
        // a wide box around the truth retains everything
        let (kept, report) = prune(&propagated, &proj, &good, 0, &cfg).unwrap();
        assert!(!report.outlier);
        assert_eq!(report.retained_count, report.projected_count);
        assert_eq!(kept.len(), propagated.len());

        // a far-off measurement is flagged and leaves the state untouched
        let mut bad = good.clone();
        bad.ra += 0.2;
        bad.dec -= 0.2;
        bad.sigma_ra = arcsec;
        bad.sigma_dec = arcsec;
        let proj_bad = inflate_and_project(&propagated, &bad, &lareunion(), &cfg).unwrap();
        let (kept_bad, report_bad) = prune(&propagated, &proj_bad, &bad, 1, &cfg).unwrap();
        assert!(report_bad.outlier);
        let before = serde_json::to_string(&propagated).unwrap();
        let after = serde_json::to_string(&kept_bad).unwrap();
        assert_eq!(before, after, "outlier must not modify the state");
    }

    #[test]
    fn run_sequence_empty_and_ordering() {
        let cfg = two_body_cfg();
        let state = seed_state(&cfg, 5.0, 5e-4);
        let before = serde_json::to_string(&state.manifold).unwrap();
        let (after, reports) = run_sequence(state, &[], &cfg).unwrap();
        assert!(reports.is_empty());
        assert_eq!(before, serde_json::to_string(&after.manifold).unwrap());

        let arcsec = std::f64::consts::PI / (180.0 * 3600.0);
        let state = seed_state(&cfg, 20.0, 2e-3);
        let obs: Vec<(Observation, Site)> = [1800.0, 3600.0, 5400.0]
            .iter()
            .map(|&s| (obs_of_truth(t0() + s, 2.0 * arcsec), lareunion()))
            .collect();
        let (out, reports) = run_sequence(state, &obs, &cfg).unwrap();
        assert_eq!(out.correlated.len() + out.outliers.len(), 3);
        for row in &out.history_log {
            assert!(row.pruning <= row.projection);
            assert!(row.merging <= row.pruning.max(row.propagation));
        }
        // the truth sits inside the measurement box, so nothing is an outlier
        assert!(out.outliers.is_empty());
        assert_eq!(reports.len(), 3);
        // volumes shrink or hold across correlated epochs
        for w in out.history_log.windows(2) {
            assert!(w[1].initial_volume <= w[0].initial_volume + 1e-12);
        }
    }

    #[test]
    fn reconstruct_single_domain_center() {
        let cfg = two_body_cfg();
        let cart = kep_to_cart(&gto(), MU_EARTH).unwrap();
        let arr = cart.to_array();
        let spec = AlgebraSpec::new(2, 6);
        let state: Vec<TaylorPoly> = (0..6)
            .map(|i| {
                TaylorPoly::variable(spec, i, arr[i], if i < 3 { 5.0 } else { 5e-4 }).unwrap()
            })
            .collect();
        let initial = Manifold::single(Domain::new(state, t0()));
        let pstate = PipelineState {
            manifold: initial.clone(),
            correlated: vec![],
            outliers: vec![],
            history_log: vec![],
        };
        let (guess, _) = reconstruct_guess(&pstate, &initial, &[], &cfg).unwrap();
        for i in 0..6 {
            assert_relative_eq!(guess[i], arr[i], epsilon = 1e-12);
        }
    }
}
