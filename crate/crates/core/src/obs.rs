//! Optical measurement geometry, noise model, polynomial lifting of
//! measurements, and synthetic observation generation.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::astro::{
    kep_to_cart, lift3, site_inertial, AstroError, Epoch, KeplerianState, Site,
    MU_EARTH,
};
use crate::dapoly::scalar::{norm3, sub3};
use crate::dapoly::{AlgebraSpec, DaError, DaScalar, RangeBound, TaylorPoly};
use crate::dynamics::{hf_propagate, DynamicsError, ForceConfig};

#[derive(Debug, Error)]
pub enum ObsError {
    #[error("degenerate zero-range geometry")]
    DegenerateRange,
    #[error("epochs must be sorted and unique")]
    UnsortedEpochs,
    #[error("bad observation file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Astro(#[from] AstroError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Da(#[from] DaError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Diagnostic provenance of a measurement; never consumed by estimation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthTag {
    Target,
    Outlier,
    Unknown,
}

impl TruthTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            TruthTag::Target => "target",
            TruthTag::Outlier => "outlier",
            TruthTag::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ObsError> {
        match s {
            "target" => Ok(TruthTag::Target),
            "outlier" => Ok(TruthTag::Outlier),
            "unknown" => Ok(TruthTag::Unknown),
            other => Err(ObsError::BadFile(format!("unknown truth tag {other:?}"))),
        }
    }
}

/// A time-tagged topocentric (right ascension, declination) pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Observation {
    pub epoch: Epoch,
    pub site_id: String,
    pub ra: f64,
    pub dec: f64,
    pub sigma_ra: f64,
    pub sigma_dec: f64,
    pub truth_tag: TruthTag,
}

/// Confidence rectangle of a measurement at a given z-score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeasurementBox {
    pub ra_interval: RangeBound,
    pub dec_interval: RangeBound,
}

/// Topocentric range, right ascension and declination of a position.
pub fn project<T: DaScalar>(
    r: &[T; 3],
    site: &Site,
    epoch: Epoch,
) -> Result<(T, T, T), ObsError> {
    let (r_obs, _) = site_inertial(site, epoch);
    let los = sub3(r, &lift3(&r[0], &r_obs));
    let rho = norm3(&los).map_err(|_| ObsError::DegenerateRange)?;
    let ra = los[1].atan2(&los[0])?;
    let dec = (los[2].clone() * rho.recip()?).asin()?;
    Ok((rho, ra, dec))
}

/// Inverse of [`project`]: inertial position from range and angles.
pub fn position_from_range<T: DaScalar>(
    site: &Site,
    epoch: Epoch,
    rho: &T,
    ra: &T,
    dec: &T,
) -> [T; 3] {
    let (r_obs, _) = site_inertial(site, epoch);
    let cos_dec = dec.cos();
    [
        rho.clone() * ra.cos() * cos_dec.clone() + r_obs[0],
        rho.clone() * ra.sin() * cos_dec + r_obs[1],
        rho.clone() * dec.sin() + r_obs[2],
    ]
}

/// Elevation of an inertial position above the site's local horizon, rad.
/// Geocentric zenith approximation, used only to flag unobservable epochs.
pub fn elevation(r: &[f64; 3], site: &Site, epoch: Epoch) -> Result<f64, ObsError> {
    let (r_obs, _) = site_inertial(site, epoch);
    let los = sub3(r, &r_obs);
    let rho = norm3(&los).map_err(|_| ObsError::DegenerateRange)?;
    let obs_n = norm3(&r_obs).map_err(|_| ObsError::DegenerateRange)?;
    let cos_zenith =
        (los[0] * r_obs[0] + los[1] * r_obs[1] + los[2] * r_obs[2]) / (rho * obs_n);
    Ok(std::f64::consts::FRAC_PI_2 - cos_zenith.acos())
}

/// Lift a measurement into first-order polynomials
/// `[ra + c*sigma_ra*dy1, dec + c*sigma_dec*dy2]`.
pub fn lift(obs: &Observation, c: f64) -> [TaylorPoly; 2] {
    let spec = AlgebraSpec::new(1, 2);
    [
        TaylorPoly::variable(spec, 0, obs.ra, c * obs.sigma_ra).expect("index in range"),
        TaylorPoly::variable(spec, 1, obs.dec, c * obs.sigma_dec).expect("index in range"),
    ]
}

/// Confidence rectangle `[ra +- c*sigma_ra] x [dec +- c*sigma_dec]`.
pub fn measurement_box(obs: &Observation, c: f64) -> MeasurementBox {
    let [ra_p, dec_p] = lift(obs, c);
    MeasurementBox {
        ra_interval: ra_p.bound(),
        dec_interval: dec_p.bound(),
    }
}

/// One telescope pass: a site and the measurement epochs it contributes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Pass {
    pub site_id: String,
    pub site: Site,
    pub epochs: Vec<Epoch>,
}

/// Angular noise levels, rad.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Sigmas {
    pub ra: f64,
    pub dec: f64,
}

pub struct Synthesis {
    pub observations: Vec<Observation>,
    /// Epochs dropped because the object sat below the local horizon.
    pub below_horizon: Vec<(String, Epoch)>,
}

/// Generate noisy measurements of a truth orbit over a pass schedule.
///
/// The truth state is propagated sequentially through the sorted epochs in
/// the high-fidelity model, projected per site, and corrupted with seeded
/// Gaussian noise; the output is deterministic for a fixed seed.
pub fn synthesize(
    truth_ics: &KeplerianState<f64>,
    epoch0: Epoch,
    passes: &[Pass],
    cfg: &ForceConfig,
    sigmas: Sigmas,
    seed: u64,
    tag: TruthTag,
) -> Result<Synthesis, ObsError> {
    let mut schedule: Vec<(usize, Epoch)> = Vec::new();
    for (pi, pass) in passes.iter().enumerate() {
        for &e in &pass.epochs {
            schedule.push((pi, e));
        }
    }
    schedule.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite epochs"));
    if schedule.windows(2).any(|w| w[1].1 <= w[0].1) {
        return Err(ObsError::UnsortedEpochs);
    }
    if schedule.first().map(|s| s.1 < epoch0).unwrap_or(false) {
        return Err(ObsError::UnsortedEpochs);
    }

    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let cart = kep_to_cart(truth_ics, MU_EARTH)?;
    let mut state = cart.to_array().to_vec();
    let mut t = epoch0;
    let mut observations = Vec::new();
    let mut below_horizon = Vec::new();
    for (pi, epoch) in schedule {
        state = hf_propagate(&state, t, epoch, cfg, 1e-10)?;
        t = epoch;
        let r = [state[0], state[1], state[2]];
        let pass = &passes[pi];
        // noise draws happen for every scheduled epoch so that visibility
        // does not shift the stream for later measurements
        let n_ra: f64 = normal.sample(&mut rng);
        let n_dec: f64 = normal.sample(&mut rng);
        if elevation(&r, &pass.site, epoch)? < 0.0 {
            below_horizon.push((pass.site_id.clone(), epoch));
            continue;
        }
        let (_, ra, dec) = project(&r, &pass.site, epoch)?;
        observations.push(Observation {
            epoch,
            site_id: pass.site_id.clone(),
            ra: crate::astro::wrap_angle(ra + sigmas.ra * n_ra),
            dec: dec + sigmas.dec * n_dec,
            sigma_ra: sigmas.ra,
            sigma_dec: sigmas.dec,
            truth_tag: tag,
        });
    }
    Ok(Synthesis {
        observations,
        below_horizon,
    })
}

// ----- file formats -----

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

pub const OBSERVATION_HEADER: &str =
    "epoch_iso8601,site_id,ra_rad,dec_rad,sigma_ra_rad,sigma_dec_rad,truth_tag";

pub fn write_observations_csv(obs: &[Observation]) -> String {
    let mut out = String::from(OBSERVATION_HEADER);
    out.push('\n');
    for o in obs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            o.epoch.to_iso8601(),
            o.site_id,
            fmt_g17(o.ra),
            fmt_g17(o.dec),
            fmt_g17(o.sigma_ra),
            fmt_g17(o.sigma_dec),
            o.truth_tag.as_str()
        ));
    }
    out
}

pub fn read_observations_csv(text: &str) -> Result<Vec<Observation>, ObsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    {
        let headers = rdr.headers()?;
        let joined = headers.iter().collect::<Vec<_>>().join(",");
        if joined != OBSERVATION_HEADER {
            return Err(ObsError::BadFile(format!(
                "unexpected observation header: {joined}"
            )));
        }
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<&str, ObsError> {
            rec.get(i)
                .ok_or_else(|| ObsError::BadFile("short record".into()))
        };
        let num = |i: usize| -> Result<f64, ObsError> {
            field(i)?
                .parse::<f64>()
                .map_err(|e| ObsError::BadFile(format!("bad float: {e}")))
        };
        out.push(Observation {
            epoch: Epoch::parse_iso8601(field(0)?)
                .map_err(|e| ObsError::BadFile(format!("bad epoch: {e}")))?,
            site_id: field(1)?.to_string(),
            ra: num(2)?,
            dec: num(3)?,
            sigma_ra: num(4)?,
            sigma_dec: num(5)?,
            truth_tag: TruthTag::parse(field(6)?)?,
        });
    }
    Ok(out)
}

pub const SITE_HEADER: &str = "site_id,lat_deg,lon_deg,height_km";

pub fn write_sites_csv(sites: &[(String, Site)]) -> String {
    let mut out = String::from(SITE_HEADER);
    out.push('\n');
    for (id, s) in sites {
        out.push_str(&format!(
            "{},{},{},{}\n",
            id,
            fmt_g17(s.lat.to_degrees()),
            fmt_g17(s.lon.to_degrees()),
            fmt_g17(s.height)
        ));
    }
    out
}

pub fn read_sites_csv(text: &str) -> Result<Vec<(String, Site)>, ObsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    {
        let headers = rdr.headers()?;
        let joined = headers.iter().collect::<Vec<_>>().join(",");
        if joined != SITE_HEADER {
            return Err(ObsError::BadFile(format!("unexpected site header: {joined}")));
        }
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64, ObsError> {
            rec.get(i)
                .ok_or_else(|| ObsError::BadFile("short record".into()))?
                .parse::<f64>()
                .map_err(|e| ObsError::BadFile(format!("bad float: {e}")))
        };
        out.push((
            rec.get(0)
                .ok_or_else(|| ObsError::BadFile("short record".into()))?
                .to_string(),
            Site::from_degrees(num(1)?, num(2)?, num(3)?),
        ));
    }
    Ok(out)
}
