//! Channel-parameter extraction and position solvers.
//!
//! Observations are first split into per-path streams by correlating with
//! the multiplexing codes, then delays and RIS spatial frequencies are
//! estimated per stream, and finally a geometric solver turns those
//! measurements into positions.

mod pipeline;
mod solvers;

pub use pipeline::{
    is_planar, localize_once, monte_carlo, prepare, run_localization, scene_at_snr,
    LocalizationRun, MonteCarloSummary, PipelineConfig, Prepared, ScenarioTag, UeResult,
};
pub use solvers::{
    b1_residuals, gauss_newton, locate_a1, locate_a2, locate_b1, locate_c1, Estimate,
    PairMeasurement, Ray, Solution, SolverOptions,
};

use std::f64::consts::TAU;

use nalgebra::{DMatrix, Matrix2, Vector3};
use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::channel::{Observation, PathKind};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::profiles::ProfileSchedule;
use crate::scene::RisSpec;

/// Probing profiles needed before a spatial frequency is estimated.
pub const MIN_PROBES: usize = 8;

/// Per-path samples after code separation: one `[n_subcarriers x n_blocks]`
/// matrix per receive antenna. The uncoded stream (row 0) is labeled `Los`.
#[derive(Debug, Clone)]
pub struct PathStream {
    pub kind: PathKind,
    pub samples: Vec<DMatrix<Complex64>>,
    /// Noise variance of each separated sample.
    pub noise_variance: f64,
    pub subcarrier_spacing: f64,
}

impl PathStream {
    pub fn n_subcarriers(&self) -> usize {
        self.samples[0].nrows()
    }

    pub fn n_blocks(&self) -> usize {
        self.samples[0].ncols()
    }

    /// Variance used for weighting; noiseless streams report unit noise so
    /// relative weights stay meaningful.
    fn weight_variance(&self) -> f64 {
        if self.noise_variance > 0.0 {
            self.noise_variance
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayEstimate {
    pub delay: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialFreqEstimate {
    pub nu: [f64; 2],
    pub covariance: Matrix2<f64>,
    /// The second component was held at a known value.
    pub fixed_z: bool,
}

/// Estimated parameters of one path of one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMeasurement {
    pub kind: PathKind,
    pub delay: Option<DelayEstimate>,
    pub spatial_freq: Option<SpatialFreqEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkMeasurement {
    pub tx: String,
    pub rx: String,
    pub paths: Vec<PathMeasurement>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub links: Vec<LinkMeasurement>,
}

/// Splits a code-multiplexed observation into one stream per code row by
/// correlating every block with the row's code.
pub fn separate_paths(obs: &Observation, schedule: &ProfileSchedule) -> Result<Vec<PathStream>> {
    let layout = schedule
        .layout()
        .ok_or_else(|| Error::ScheduleMismatch("schedule is not code multiplexed".into()))?;
    let l = layout.code_len;
    if obs.n_slots() != schedule.n_slots() || l * layout.n_blocks != obs.n_slots() {
        return Err(Error::ScheduleMismatch(format!(
            "observation has {} slots, schedule expects {} blocks of {}",
            obs.n_slots(),
            layout.n_blocks,
            l
        )));
    }
    let mut rows: Vec<(usize, PathKind)> = vec![(0, PathKind::Los)];
    let mut coded: Vec<(usize, PathKind)> = layout
        .rows
        .iter()
        .map(|(id, &r)| (r, PathKind::Ris(id.clone())))
        .collect();
    coded.sort();
    rows.extend(coded);
    let n = obs.n_subcarriers();
    let mut out = Vec::with_capacity(rows.len());
    for (row, kind) in rows {
        let samples = obs
            .samples
            .iter()
            .map(|y| {
                DMatrix::from_fn(n, layout.n_blocks, |k, b| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for s in 0..l {
                        acc += y[(k, b * l + s)] * layout.code(row, s);
                    }
                    acc / l as f64
                })
            })
            .collect();
        out.push(PathStream {
            kind,
            samples,
            noise_variance: obs.noise_variance / l as f64,
            subcarrier_spacing: obs.subcarrier_spacing,
        });
    }
    Ok(out)
}

/// `sum_n z[n] exp(+j 2 pi n df tau)` for every column of every antenna.
fn delay_correlations(stream: &PathStream, tau: f64) -> Vec<Complex64> {
    let w = TAU * stream.subcarrier_spacing * tau;
    let phasors: Vec<Complex64> = (0..stream.n_subcarriers())
        .map(|n| Complex64::from_polar(1.0, w * n as f64))
        .collect();
    let mut out = Vec::new();
    for m in &stream.samples {
        for col in m.column_iter() {
            out.push(col.iter().zip(&phasors).map(|(z, e)| z * e).sum());
        }
    }
    out
}

fn periodogram(stream: &PathStream, tau: f64) -> f64 {
    delay_correlations(stream, tau)
        .iter()
        .map(|c| c.norm_sqr())
        .sum()
}

/// Maximizes a smooth 1D function near `x0` by repeated three-point
/// quadratic fits with a shrinking stencil.
fn refine_1d(f: impl Fn(f64) -> f64, x0: f64, h0: f64) -> f64 {
    let h_min = h0 * 1e-6;
    let mut x = x0;
    let mut h = h0;
    let mut settle = 0;
    for _ in 0..200 {
        let (fm, f0, fp) = (f(x - h), f(x), f(x + h));
        let den = fm - 2.0 * f0 + fp;
        let step = if den < 0.0 {
            (0.5 * h * (fm - fp) / den).clamp(-h, h)
        } else if fp > fm {
            h
        } else {
            -h
        };
        if f(x + step) >= f0 {
            x += step;
        }
        if step.abs() < h {
            if h > h_min {
                h = (h / 4.0).max(h_min);
            } else {
                settle += 1;
                if settle > 3 {
                    break;
                }
            }
        }
    }
    x
}

/// Delay of the strongest component of a separated stream: zero-padded
/// inverse FFT over subcarriers, summed non-coherently over blocks and
/// antennas, refined by quadratic interpolation of the periodogram. The
/// result lies in `[0, 1/df)`.
pub fn estimate_delays(stream: &PathStream) -> Result<DelayEstimate> {
    let n = stream.n_subcarriers();
    if n < 2 {
        return Err(Error::NeedsWideband);
    }
    let df = stream.subcarrier_spacing;
    let k = (16 * n).next_power_of_two();
    let fft = FftPlanner::new().plan_fft(k, FftDirection::Inverse);
    let mut power = vec![0.0; k];
    for m in &stream.samples {
        for col in m.column_iter() {
            let mut buf = vec![Complex64::new(0.0, 0.0); k];
            for (b, z) in buf.iter_mut().zip(col.iter()) {
                *b = *z;
            }
            fft.process(&mut buf);
            for (p, v) in power.iter_mut().zip(&buf) {
                *p += v.norm_sqr();
            }
        }
    }
    let peak = power
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| {
            if p > best.1 {
                (i, p)
            } else {
                best
            }
        })
        .0;
    let step = 1.0 / (k as f64 * df);
    let tau = refine_1d(|t| periodogram(stream, t), peak as f64 * step, step);
    let period = 1.0 / df;
    let tau = tau.rem_euclid(period);

    // Bound with per-block complex amplitudes as nuisance.
    let amp: f64 = delay_correlations(stream, tau)
        .iter()
        .map(|c| (c / n as f64).norm_sqr())
        .sum();
    let mean = (n as f64 - 1.0) / 2.0;
    let spread: f64 = (0..n).map(|i| (TAU * df * (i as f64 - mean)).powi(2)).sum();
    let info = 2.0 / stream.weight_variance() * amp * spread;
    Ok(DelayEstimate {
        delay: tau,
        variance: 1.0 / info,
    })
}

/// Per-block RIS response evaluator for one RIS under a probing schedule.
struct Probe {
    ny: usize,
    iy: Vec<f64>,
    iz: Vec<f64>,
    /// `[block][element]` unit phasors of the base profiles.
    base: Vec<Vec<Complex64>>,
}

impl Probe {
    fn new(ris: &RisSpec, schedule: &ProfileSchedule, n_blocks: usize) -> Result<Self> {
        let mut base = Vec::with_capacity(n_blocks);
        for b in 0..n_blocks {
            let p = schedule.base_profile(&ris.id, b).ok_or_else(|| {
                Error::ScheduleMismatch(format!("no probing profile for `{}` in block {b}", ris.id))
            })?;
            if p.len() != ris.n_elements() {
                return Err(Error::ScheduleMismatch(format!(
                    "profile length {} for `{}`",
                    p.len(),
                    ris.id
                )));
            }
            base.push(
                p.phases()
                    .iter()
                    .map(|&ph| Complex64::from_polar(1.0, ph))
                    .collect(),
            );
        }
        let cy = (ris.nx as f64 - 1.0) / 2.0;
        let cz = (ris.ny as f64 - 1.0) / 2.0;
        Ok(Self {
            ny: ris.ny,
            iy: (0..ris.nx).map(|a| a as f64 - cy).collect(),
            iz: (0..ris.ny).map(|b| b as f64 - cz).collect(),
            base,
        })
    }

    /// Responses per block and, if asked, their derivatives.
    fn response(&self, nu: [f64; 2], derivs: bool) -> (Vec<Complex64>, Vec<[Complex64; 2]>) {
        let ey: Vec<Complex64> = self
            .iy
            .iter()
            .map(|i| Complex64::from_polar(1.0, TAU * nu[0] * i))
            .collect();
        let ez: Vec<Complex64> = self
            .iz
            .iter()
            .map(|j| Complex64::from_polar(1.0, TAU * nu[1] * j))
            .collect();
        let steer: Vec<Complex64> = (0..ey.len() * self.ny)
            .map(|m| ey[m / self.ny] * ez[m % self.ny])
            .collect();
        let mut beta = Vec::with_capacity(self.base.len());
        let mut d = Vec::new();
        for blk in &self.base {
            let mut v = Complex64::new(0.0, 0.0);
            let mut dy = Complex64::new(0.0, 0.0);
            let mut dz = Complex64::new(0.0, 0.0);
            for (m, (b, s)) in blk.iter().zip(&steer).enumerate() {
                let e = b * s;
                v += e;
                if derivs {
                    dy += e * self.iy[m / self.ny];
                    dz += e * self.iz[m % self.ny];
                }
            }
            beta.push(v);
            if derivs {
                let jt = Complex64::new(0.0, TAU);
                d.push([dy * jt, dz * jt]);
            }
        }
        (beta, d)
    }

    /// Concentrated likelihood with a free complex gain per antenna.
    fn cost(&self, w: &[Vec<Complex64>], nu: [f64; 2]) -> f64 {
        let (beta, _) = self.response(nu, false);
        let energy: f64 = beta.iter().map(|b| b.norm_sqr()).sum();
        if energy <= 0.0 {
            return 0.0;
        }
        w.iter()
            .map(|wa| {
                wa.iter()
                    .zip(&beta)
                    .map(|(x, b)| b.conj() * x)
                    .sum::<Complex64>()
                    .norm_sqr()
            })
            .sum::<f64>()
            / energy
    }
}

fn wrap_cycle(x: f64) -> f64 {
    let w = (x + 0.5).rem_euclid(1.0) - 0.5;
    if w >= 0.5 {
        -0.5
    } else {
        w
    }
}

/// Spatial frequency of a RIS path from its separated stream and the known
/// per-block probing profiles: grid search over one period of `nu`, then
/// local quadratic refinement. `delay` (if known) aligns the subcarriers
/// before combining; `fixed_z` pins the second component.
pub fn estimate_spatial_freq(
    stream: &PathStream,
    schedule: &ProfileSchedule,
    ris: &RisSpec,
    delay: Option<f64>,
    fixed_z: Option<f64>,
) -> Result<SpatialFreqEstimate> {
    let n_blocks = stream.n_blocks();
    if n_blocks < MIN_PROBES {
        return Err(Error::NeedsProbes {
            needed: MIN_PROBES,
            got: n_blocks,
        });
    }
    let probe = Probe::new(ris, schedule, n_blocks)?;
    let n = stream.n_subcarriers();
    let shift: Vec<Complex64> = (0..n)
        .map(|k| match delay {
            Some(t) => Complex64::from_polar(1.0, TAU * stream.subcarrier_spacing * t * k as f64),
            None => Complex64::new(1.0, 0.0),
        })
        .collect();
    let w: Vec<Vec<Complex64>> = stream
        .samples
        .iter()
        .map(|m| {
            m.column_iter()
                .map(|c| c.iter().zip(&shift).map(|(z, e)| z * e).sum::<Complex64>() / n as f64)
                .collect()
        })
        .collect();

    let res = 1.0 / (4.0 * ris.nx.max(ris.ny) as f64);
    let steps = (1.0 / res).round() as i64;
    let axis: Vec<f64> = (0..steps).map(|k| -0.5 + k as f64 * res).collect();
    let z_axis: Vec<f64> = match fixed_z {
        Some(z) => vec![z],
        None if ris.ny == 1 => vec![0.0],
        None => axis.clone(),
    };
    let mut best = ([0.0, 0.0], f64::NEG_INFINITY);
    for &y in &axis {
        for &z in &z_axis {
            let c = probe.cost(&w, [y, z]);
            if c > best.1 {
                best = ([y, z], c);
            }
        }
    }
    let f = |nu: [f64; 2]| probe.cost(&w, nu);
    let pin_z = fixed_z.is_some() || ris.ny == 1;
    let mut nu = best.0;
    if pin_z {
        nu[0] = refine_1d(|y| f([y, nu[1]]), nu[0], res);
    } else {
        nu = refine_2d(&f, nu, res);
    }
    if fixed_z.is_none() {
        nu[1] = wrap_cycle(nu[1]);
    }
    nu[0] = wrap_cycle(nu[0]);

    // Bound with a free complex gain per antenna.
    let (beta, d) = probe.response(nu, true);
    let energy: f64 = beta.iter().map(|b| b.norm_sqr()).sum();
    let gain2: f64 = w
        .iter()
        .map(|wa| {
            (wa.iter()
                .zip(&beta)
                .map(|(x, b)| b.conj() * x)
                .sum::<Complex64>()
                / energy)
                .norm_sqr()
        })
        .sum();
    let mut info = Matrix2::zeros();
    for i in 0..2 {
        for j in 0..2 {
            let dd: Complex64 = d.iter().map(|v| v[i].conj() * v[j]).sum();
            let bi: Complex64 = d.iter().zip(&beta).map(|(v, b)| v[i].conj() * b).sum();
            let bj: Complex64 = d.iter().zip(&beta).map(|(v, b)| b.conj() * v[j]).sum();
            info[(i, j)] = (dd - bi * bj / energy).re;
        }
    }
    let var_w = stream.weight_variance() / n as f64;
    info *= 2.0 / var_w * gain2;
    let covariance = if pin_z {
        Matrix2::new(1.0 / info[(0, 0)], 0.0, 0.0, 0.0)
    } else {
        info.try_inverse()
            .unwrap_or_else(|| Matrix2::from_diagonal_element(f64::INFINITY))
    };
    Ok(SpatialFreqEstimate {
        nu,
        covariance,
        fixed_z: pin_z,
    })
}

fn refine_2d(f: &impl Fn([f64; 2]) -> f64, x0: [f64; 2], h0: f64) -> [f64; 2] {
    let h_min = h0 * 1e-6;
    let mut x = x0;
    let mut h = h0;
    let mut settle = 0;
    for _ in 0..300 {
        let at = |dx: f64, dy: f64| f([x[0] + dx, x[1] + dy]);
        let f0 = at(0.0, 0.0);
        let (fxp, fxm, fyp, fym) = (at(h, 0.0), at(-h, 0.0), at(0.0, h), at(0.0, -h));
        let (fpp, fpm, fmp, fmm) = (at(h, h), at(h, -h), at(-h, h), at(-h, -h));
        let g = [(fxp - fxm) / (2.0 * h), (fyp - fym) / (2.0 * h)];
        let hxx = (fxp - 2.0 * f0 + fxm) / (h * h);
        let hyy = (fyp - 2.0 * f0 + fym) / (h * h);
        let hxy = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
        let det = hxx * hyy - hxy * hxy;
        let mut step = if hxx < 0.0 && det > 0.0 {
            [
                -(hyy * g[0] - hxy * g[1]) / det,
                -(hxx * g[1] - hxy * g[0]) / det,
            ]
        } else {
            [h * g[0].signum(), h * g[1].signum()]
        };
        for s in step.iter_mut() {
            *s = s.clamp(-h, h);
        }
        if at(step[0], step[1]) >= f0 {
            x = [x[0] + step[0], x[1] + step[1]];
        }
        if step[0].abs() < h && step[1].abs() < h {
            if h > h_min {
                h = (h / 4.0).max(h_min);
            } else {
                settle += 1;
                if settle > 3 {
                    break;
                }
            }
        }
    }
    x
}

/// Departure direction (global, unit) at a RIS that is consistent with the
/// spatial frequency `nu` for a wave arriving from `u_in` (global, pointing
/// from the RIS towards the source). Aliases `nu + k` are tried in order of
/// `|k|`; the departure side is the RIS front half-space.
pub fn aod_from_spatial_freq(
    ris: &RisSpec,
    wavelength: f64,
    u_in: &Vec3,
    nu: [f64; 2],
) -> Result<Vec3> {
    let s = ris.spacing / wavelength;
    let local_in = ris.pose.orientation.apply_inverse(u_in);
    let shifts = [0.0, -1.0, 1.0];
    for ky in shifts {
        for kz in shifts {
            let y = (nu[0] + ky) / s - local_in.y;
            let z = (nu[1] + kz) / s - local_in.z;
            let r2 = y * y + z * z;
            if r2 <= 1.0 {
                let local = Vector3::new((1.0 - r2).sqrt(), y, z);
                return Ok(ris.pose.orientation.apply(&local));
            }
        }
    }
    Err(Error::InfeasibleFrequency(nu[0], nu[1]))
}
