//! Fisher information and position error bounds.
//!
//! The channel-domain FIM of every link is mapped to a common parameter
//! vector `theta = [positions; orientations; clock offsets; gains]` through
//! the geometry Jacobian, and the nuisance block is removed by a Schur
//! complement.

use nalgebra::{DMatrix, RowVector3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{LinkModel, PathKind};
use crate::error::{Error, Result};
use crate::geometry::{unit_jacobian, Vec3, SPEED_OF_LIGHT};
use crate::profiles::{probing_schedule, ProfileSchedule};
use crate::scene::{EntityRef, Scenario};

/// Relative eigenvalue below which an information matrix counts as singular.
pub const SINGULAR_RTOL: f64 = 1e-9;

/// Fraction of the pre-marginalization information below which what
/// survives the Schur complement is treated as rounding residue.
pub const CANCELLATION_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bound {
    Meters(f64),
    Unlocalizable,
}

impl Bound {
    pub fn value(&self) -> Option<f64> {
        match self {
            Bound::Meters(v) => Some(*v),
            Bound::Unlocalizable => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Bound::Meters(_))
    }

    /// Value with `inf` standing in for Unlocalizable.
    pub fn or_inf(&self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }
}

/// Which coordinates of an unknown entity are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dims {
    /// x and y; height is known.
    Planar,
    Spatial,
}

impl Dims {
    pub fn count(&self) -> usize {
        match self {
            Dims::Planar => 2,
            Dims::Spatial => 3,
        }
    }
}

/// Whether the receiver knows the clock offset between the link ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClockModel {
    /// Unknown offset, estimated as a nuisance. Delay information becomes
    /// differential.
    Free,
    Known,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub tx: String,
    pub rx: String,
    pub clock: ClockModel,
}

impl LinkSpec {
    pub fn new(tx: &str, rx: &str, clock: ClockModel) -> Self {
        Self {
            tx: tx.to_string(),
            rx: rx.to_string(),
            clock,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unknowns {
    pub entities: Vec<String>,
    pub dims: Dims,
    /// Also estimate the yaw of every listed UE that has an antenna array.
    pub orientation: bool,
}

impl Unknowns {
    pub fn positions(entities: &[&str], dims: Dims) -> Self {
        Self {
            entities: entities.iter().map(|s| s.to_string()).collect(),
            dims,
            orientation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityBound {
    pub id: String,
    pub peb: Bound,
    /// Yaw bound in radians; only for UEs with an antenna array.
    pub oeb: Option<Bound>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FimResult {
    /// Block diagonal over links, in link order.
    pub channel_fim: DMatrix<f64>,
    /// `d eta / d theta`.
    pub jacobian: DMatrix<f64>,
    pub position_efim: DMatrix<f64>,
    pub peb: Bound,
    pub entities: Vec<EntityBound>,
    /// Smallest eigenvalue of `position_efim`.
    pub min_eigenvalue: f64,
}

/// Column bookkeeping for `theta`.
#[derive(Debug, Clone)]
struct ThetaIndex {
    dims: Dims,
    pos: Vec<(String, usize)>,
    yaw: Vec<(String, usize)>,
    n_interest: usize,
    clocks: Vec<Option<usize>>,
    gains: Vec<usize>,
    len: usize,
}

impl ThetaIndex {
    fn new(
        scene: &Scenario,
        links: &[LinkSpec],
        models: &[LinkModel],
        unknowns: &Unknowns,
    ) -> Result<Self> {
        let d = unknowns.dims.count();
        let mut col = 0;
        let mut pos = Vec::new();
        for id in &unknowns.entities {
            scene.entity(id)?;
            pos.push((id.clone(), col));
            col += d;
        }
        let mut yaw = Vec::new();
        if unknowns.orientation {
            for id in &unknowns.entities {
                if let EntityRef::Ue(u) = scene.entity(id)? {
                    if u.n_antennas > 1 {
                        yaw.push((id.clone(), col));
                        col += 1;
                    }
                }
            }
        }
        let n_interest = col;
        let mut clocks = Vec::new();
        for l in links {
            match l.clock {
                ClockModel::Free => {
                    clocks.push(Some(col));
                    col += 1;
                }
                ClockModel::Known => clocks.push(None),
            }
        }
        let mut gains = Vec::new();
        for m in models {
            gains.push(col);
            col += 2 * m.paths.len();
        }
        Ok(Self {
            dims: unknowns.dims,
            pos,
            yaw,
            n_interest,
            clocks,
            gains,
            len: col,
        })
    }

    fn pos_col(&self, id: &str) -> Option<usize> {
        self.pos.iter().find(|(e, _)| e == id).map(|(_, c)| *c)
    }

    fn yaw_col(&self, id: &str) -> Option<usize> {
        self.yaw.iter().find(|(e, _)| e == id).map(|(_, c)| *c)
    }

    fn n_pos(&self) -> usize {
        self.pos.len() * self.dims.count()
    }
}

/// Channel-domain FIM of the noiseless link model under complex Gaussian
/// noise of variance `noise_variance` per sample.
pub fn link_fim(model: &LinkModel, noise_variance: f64) -> Result<DMatrix<f64>> {
    if noise_variance <= 0.0 {
        return Err(Error::InfiniteInformation);
    }
    let f = model.derivative_factors();
    let n = f.len();
    let dot = |a: &[Complex64], b: &[Complex64]| -> Complex64 {
        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
    };
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = (f[i].scalar.conj() * f[j].scalar)
                * dot(&f[i].antenna, &f[j].antenna)
                * dot(&f[i].subcarrier, &f[j].subcarrier)
                * dot(&f[i].slot, &f[j].slot);
            let v = 2.0 / noise_variance * v.re;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// FIM of the channel parameters of the `tx -> rx` link.
pub fn channel_fim(
    scene: &Scenario,
    tx: &str,
    rx: &str,
    schedule: &ProfileSchedule,
) -> Result<DMatrix<f64>> {
    let model = LinkModel::build(scene, tx, rx, schedule)?;
    link_fim(&model, scene.noise_variance())
}

/// Dense `d mu / d eta`: rows run over samples in `(antenna, subcarrier,
/// slot)` order, columns over channel parameters.
pub fn mean_jacobian(model: &LinkModel) -> DMatrix<Complex64> {
    let f = model.derivative_factors();
    let (na, nn, nt) = (model.n_rx(), model.n_subcarriers(), model.n_slots());
    let mut out = DMatrix::zeros(na * nn * nt, f.len());
    for (c, d) in f.iter().enumerate() {
        for a in 0..na {
            for n in 0..nn {
                for t in 0..nt {
                    out[((a * nn + n) * nt + t, c)] =
                        d.scalar * d.antenna[a] * d.subcarrier[n] * d.slot[t];
                }
            }
        }
    }
    out
}

fn add_row(t: &mut DMatrix<f64>, row: usize, col: Option<usize>, g: &RowVector3<f64>, dims: Dims) {
    if let Some(c) = col {
        for k in 0..dims.count() {
            t[(row, c + k)] += g[k];
        }
    }
}

/// Rows of `d eta / d theta` for one link.
fn link_jacobian(
    scene: &Scenario,
    model: &LinkModel,
    link: usize,
    idx: &ThetaIndex,
) -> Result<DMatrix<f64>> {
    let layouts = model.layouts();
    let n_eta = model.n_params();
    let mut t = DMatrix::zeros(n_eta, idx.len);
    let tx_col = idx.pos_col(&model.tx);
    let rx_col = idx.pos_col(&model.rx);
    let lambda = scene.wavelength();
    let tx_e = scene.entity(&model.tx)?;
    let rx_e = scene.entity(&model.rx)?;
    let p_tx = tx_e.position();
    let p_rx = rx_e.position();

    for (p, (path, l)) in model.paths.iter().zip(&layouts).enumerate() {
        let ris = match &path.kind {
            PathKind::Los => None,
            PathKind::Ris(id) => Some(scene.ris(id)?),
        };
        let first_hop = ris.map_or(p_rx, |r| r.pose.position);
        let last_hop = ris.map_or(p_tx, |r| r.pose.position);

        // Delay: sum of segment lengths over c.
        let r = l.delay();
        let e_out = (first_hop - p_tx).normalize().transpose() / SPEED_OF_LIGHT;
        let e_in = (p_rx - last_hop).normalize().transpose() / SPEED_OF_LIGHT;
        add_row(&mut t, r, tx_col, &(-e_out), idx.dims);
        add_row(&mut t, r, rx_col, &e_in, idx.dims);
        if let Some(c) = idx.clocks[link] {
            t[(r, c)] = 1.0;
        }

        if let (Some(row), EntityRef::Beacon(b)) = (l.nu_tx(), &tx_e) {
            // Beacons are anchors, so only the far end of the first hop moves.
            let s = b.spacing / lambda;
            let jn = unit_jacobian(&first_hop, &p_tx);
            let col = if ris.is_none() { rx_col } else { None };
            for (k, axis) in [b.pose.orientation.axis_y(), b.pose.orientation.axis_z()]
                .iter()
                .enumerate()
            {
                add_row(&mut t, row + k, col, &(s * axis.transpose() * jn), idx.dims);
            }
        }

        if let (Some(row), Some(ris)) = (l.nu_ris(), ris) {
            let s = ris.spacing / lambda;
            let c = ris.pose.position;
            let j_tx = unit_jacobian(&p_tx, &c);
            let j_rx = unit_jacobian(&p_rx, &c);
            for (k, axis) in [ris.pose.orientation.axis_y(), ris.pose.orientation.axis_z()]
                .iter()
                .enumerate()
            {
                add_row(
                    &mut t,
                    row + k,
                    tx_col,
                    &(s * axis.transpose() * j_tx),
                    idx.dims,
                );
                add_row(
                    &mut t,
                    row + k,
                    rx_col,
                    &(s * axis.transpose() * j_rx),
                    idx.dims,
                );
            }
        }

        if let (Some(row), EntityRef::Ue(u)) = (l.nu_rx(), &rx_e) {
            let y = u.pose.orientation.axis_y();
            let jp = unit_jacobian(&last_hop, &p_rx);
            let g = 0.5 * y.transpose() * jp;
            add_row(&mut t, row, rx_col, &(-g), idx.dims);
            if ris.is_none() {
                add_row(&mut t, row, tx_col, &g, idx.dims);
            }
            if let Some(c) = idx.yaw_col(&u.id) {
                let dir = (last_hop - p_rx).normalize();
                t[(row, c)] = 0.5 * Vector3::z().cross(&y).dot(&dir);
            }
        }

        let g = idx.gains[link] + 2 * p;
        t[(l.gain(), g)] = 1.0;
        t[(l.gain() + 1, g + 1)] = 1.0;
    }
    Ok(t)
}

fn scaled_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = m.clone().cholesky() {
        return ch.inverse();
    }
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut inv = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > 1e-12 * max {
            let v = eig.eigenvectors.column(k);
            inv += (v * v.transpose()) / ev;
        }
    }
    inv
}

// Error-free transformations behind the compensated dot product below.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const REFINE_PASSES: usize = 8;

/// `init + sum a_k b_k`, as accurate as if summed in twice the working
/// precision and then rounded.
fn dot2(init: f64, terms: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut s, mut c) = (init, 0.0);
    for (a, b) in terms {
        let (p, pe) = two_prod(a, b);
        let (t, te) = two_sum(s, p);
        s = t;
        c += pe + te;
    }
    s + c
}

/// Schur complement of `info` onto the parameters in `keep`.
///
/// Clock and gain nuisances can cancel almost all of the information in the
/// kept block, so the subtraction is done in compensated arithmetic: exact
/// power-of-two scaling, a refined nuisance solve held as a high and a low
/// part, and a compensated final dot product.
pub fn schur_keep(info: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    let n = info.nrows();
    let nuis: Vec<usize> = (0..n)
        .filter(|i| !keep.contains(i) && info[(*i, *i)] > 0.0)
        .collect();
    let k = keep.len();
    let mut a = DMatrix::zeros(k, k);
    for (r, &i) in keep.iter().enumerate() {
        for (c, &j) in keep.iter().enumerate() {
            a[(r, c)] = info[(i, j)];
        }
    }
    if nuis.is_empty() {
        return a;
    }
    let s: Vec<f64> = nuis
        .iter()
        .map(|&i| 2f64.powi(-(info[(i, i)].log2() / 2.0).round() as i32))
        .collect();
    let m = nuis.len();
    let mut c = DMatrix::zeros(m, m);
    // Transposed off-diagonal block, one column per kept parameter.
    let mut bt = DMatrix::zeros(m, k);
    for (r, &i) in nuis.iter().enumerate() {
        for (q, &j) in nuis.iter().enumerate() {
            c[(r, q)] = info[(i, j)] * s[r] * s[q];
        }
        for (q, &j) in keep.iter().enumerate() {
            bt[(r, q)] = info[(j, i)] * s[r];
        }
    }
    let (hi, lo) = match c.clone().cholesky() {
        Some(ch) => {
            let hi = ch.solve(&bt);
            let mut lo = DMatrix::zeros(m, k);
            // Each pass gains roughly -log10(cond(c) * eps) digits.
            for _ in 0..REFINE_PASSES {
                let resid = DMatrix::from_fn(m, k, |r, q| {
                    dot2(
                        bt[(r, q)],
                        (0..m).flat_map(|l| [(-c[(r, l)], hi[(l, q)]), (-c[(r, l)], lo[(l, q)])]),
                    )
                });
                let step = ch.solve(&resid);
                lo += &step;
                if step.amax() <= f64::EPSILON * f64::EPSILON * hi.amax() {
                    break;
                }
            }
            (hi, lo)
        }
        None => (scaled_pinv(&c) * &bt, DMatrix::zeros(m, k)),
    };
    let mut out = DMatrix::zeros(k, k);
    for r in 0..k {
        for q in 0..k {
            out[(r, q)] = dot2(
                a[(r, q)],
                (0..m).flat_map(|l| [(-bt[(l, r)], hi[(l, q)]), (-bt[(l, r)], lo[(l, q)])]),
            );
        }
    }
    (&out + out.transpose()) * 0.5
}

/// `T^T F T`, made exactly symmetric. Rounding leaves the two triangles
/// apart by a few ulps, which the Schur complement would amplify.
pub fn information(channel_fim: &DMatrix<f64>, jacobian: &DMatrix<f64>) -> DMatrix<f64> {
    let full = jacobian.transpose() * channel_fim * jacobian;
    (&full + full.transpose()) * 0.5
}

/// Equivalent FIM of the first `n_interest` entries of `theta`, given the
/// channel FIM and `jacobian = d eta / d theta`.
pub fn position_efim(
    channel_fim: &DMatrix<f64>,
    jacobian: &DMatrix<f64>,
    n_interest: usize,
) -> Result<DMatrix<f64>> {
    let n = channel_fim.nrows();
    if channel_fim.ncols() != n || jacobian.nrows() != n || n_interest > jacobian.ncols() {
        return Err(Error::ShapeError(format!(
            "channel FIM is {}x{}, jacobian is {}x{}, {} parameters of interest",
            channel_fim.nrows(),
            channel_fim.ncols(),
            jacobian.nrows(),
            jacobian.ncols(),
            n_interest
        )));
    }
    let full = information(channel_fim, jacobian);
    let keep: Vec<usize> = (0..n_interest).collect();
    Ok(schur_keep(&full, &keep))
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::ShapeError(format!(
            "{}x{} matrix is not square",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-8 * scale.max(1e-300) {
                return Err(Error::ShapeError(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

fn singular(m: &DMatrix<f64>) -> (bool, f64) {
    singular_against(m, 0.0)
}

// `scale` is the information before nuisance removal. When the Schur
// complement cancels nearly all of it, the remainder is rounding noise and
// the eigenvalue ratio alone says nothing.
fn singular_against(m: &DMatrix<f64>, scale: f64) -> (bool, f64) {
    if m.nrows() == 0 {
        return (true, 0.0);
    }
    let ev = m.clone().symmetric_eigen().eigenvalues;
    let min = ev.min();
    let max = ev.max();
    (
        max <= 0.0 || min < SINGULAR_RTOL * max || min < CANCELLATION_RTOL * scale,
        min,
    )
}

/// `sqrt(trace(efim^-1))`, or Unlocalizable when `efim` is singular.
pub fn peb(efim: &DMatrix<f64>) -> Result<Bound> {
    check_symmetric(efim)?;
    if singular(efim).0 {
        return Ok(Bound::Unlocalizable);
    }
    match efim.clone().cholesky() {
        Some(ch) => Ok(Bound::Meters(ch.inverse().trace().sqrt())),
        None => Ok(Bound::Unlocalizable),
    }
}

/// Full pipeline: link models, channel FIMs, geometry Jacobian, EFIM and
/// bounds for every unknown entity.
pub fn evaluate(
    scene: &Scenario,
    links: &[LinkSpec],
    unknowns: &Unknowns,
    schedule: &ProfileSchedule,
) -> Result<FimResult> {
    let sigma2 = scene.noise_variance();
    let models = links
        .iter()
        .map(|l| LinkModel::build(scene, &l.tx, &l.rx, schedule))
        .collect::<Result<Vec<_>>>()?;
    let idx = ThetaIndex::new(scene, links, &models, unknowns)?;
    let n_eta: usize = models.iter().map(|m| m.n_params()).sum();
    let mut fim = DMatrix::zeros(n_eta, n_eta);
    let mut jac = DMatrix::zeros(n_eta, idx.len);
    let mut off = 0;
    for (k, m) in models.iter().enumerate() {
        let f = link_fim(m, sigma2)?;
        let t = link_jacobian(scene, m, k, &idx)?;
        let n = f.nrows();
        fim.view_mut((off, off), (n, n)).copy_from(&f);
        jac.view_mut((off, 0), (n, idx.len)).copy_from(&t);
        off += n;
    }
    let full = information(&fim, &jac);
    let n_pos = idx.n_pos();
    let pos_keep: Vec<usize> = (0..n_pos).collect();
    let efim = schur_keep(&full, &pos_keep);
    let scale = pos_keep.iter().fold(0.0f64, |a, &i| a.max(full[(i, i)]));
    let (is_singular, min_eig) = singular_against(&efim, scale);
    let peb_all = if is_singular {
        Bound::Unlocalizable
    } else {
        peb(&efim)?
    };
    let inv = (!is_singular)
        .then(|| efim.clone().cholesky().map(|c| c.inverse()))
        .flatten();

    let d = idx.dims.count();
    let mut entities = Vec::new();
    for (id, col) in &idx.pos {
        let peb_e = match &inv {
            Some(inv) => Bound::Meters((0..d).map(|k| inv[(col + k, col + k)]).sum::<f64>().sqrt()),
            None => Bound::Unlocalizable,
        };
        let oeb = match idx.yaw_col(id) {
            Some(c) => {
                let o = schur_keep(&full, &[c]);
                Some(if o[(0, 0)] > SINGULAR_RTOL * full[(c, c)].max(1e-300) {
                    Bound::Meters(1.0 / o[(0, 0)].sqrt())
                } else {
                    Bound::Unlocalizable
                })
            }
            None => None,
        };
        entities.push(EntityBound {
            id: id.clone(),
            peb: peb_e,
            oeb,
        });
    }
    debug_assert!(idx.n_interest >= n_pos);
    Ok(FimResult {
        channel_fim: fim,
        jacobian: jac,
        position_efim: efim,
        peb: peb_all,
        entities,
        min_eigenvalue: min_eig,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatCell {
    pub x: f64,
    pub y: f64,
    pub peb: Bound,
}

/// Target PEB over a grid of `(x, y)` positions, row-major with `y` as the
/// row index. Every beacon transmits to the target with an unknown clock
/// offset. Cells on top of an anchor are skipped.
pub fn peb_heatmap(
    scene: &Scenario,
    target: &str,
    xs: &[f64],
    ys: &[f64],
    dims: Dims,
    schedule: &ProfileSchedule,
) -> Result<Vec<HeatCell>> {
    let z = scene.position(target)?.z;
    let links: Vec<LinkSpec> = scene
        .beacons
        .iter()
        .map(|b| LinkSpec::new(&b.id, target, ClockModel::Free))
        .collect();
    let unknowns = Unknowns::positions(&[target], dims);
    let anchors: Vec<Vec3> = scene
        .ris
        .iter()
        .map(|r| r.pose.position)
        .chain(scene.beacons.iter().map(|b| b.pose.position))
        .chain(scene.aps.iter().map(|a| a.pose.position))
        .collect();
    let cells: Vec<(f64, f64)> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();
    let out: Vec<Result<Option<HeatCell>>> = cells
        .par_iter()
        .map(|&(x, y)| {
            let p = Vec3::new(x, y, z);
            if anchors.iter().any(|a| (a - p).norm() < 1e-6) {
                return Ok(None);
            }
            let s = scene.with_ue_position(target, p)?;
            let r = evaluate(&s, &links, &unknowns, schedule)?;
            Ok(Some(HeatCell { x, y, peb: r.peb }))
        })
        .collect();
    let mut cells = Vec::with_capacity(out.len());
    for c in out {
        if let Some(c) = c? {
            cells.push(c);
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub n_elements: usize,
    pub ue_id: String,
    pub peb_ris: Bound,
    pub peb_beacon: Bound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub ris: String,
    pub beacon: String,
    pub counts: Vec<usize>,
    pub n_blocks: usize,
    pub seed: u64,
}

/// Links among cooperating UEs: one per unordered pair, lower index
/// transmits.
pub fn cooperative_links(ues: &[&str]) -> Vec<LinkSpec> {
    let mut out = Vec::new();
    for i in 0..ues.len() {
        for j in i + 1..ues.len() {
            out.push(LinkSpec::new(ues[i], ues[j], ClockModel::Free));
        }
    }
    out
}

/// Cooperative PEB per UE against RIS size, with the beacon baseline. The
/// RIS case drops every beacon; the baseline drops every RIS and adds a
/// synchronized link from the beacon to each UE.
pub fn peb_vs_elements(scene: &Scenario, spec: &CurveSpec) -> Result<Vec<CurveRow>> {
    for &n in &spec.counts {
        let r = (n as f64).sqrt().round() as usize;
        if r * r != n || n == 0 {
            return Err(Error::InvalidScenario(format!(
                "element count {n} is not a perfect square"
            )));
        }
    }
    scene.ris(&spec.ris)?;
    let beacon = scene.beacon(&spec.beacon)?.clone();
    let ue_ids: Vec<&str> = scene.ues.iter().map(|u| u.id.as_str()).collect();
    let unknowns = Unknowns::positions(&ue_ids, Dims::Spatial);

    let mut base = scene.clone();
    base.ris.clear();
    base.beacons = vec![beacon.clone()];
    let mut sched = ProfileSchedule::static_slots(spec.n_blocks);
    if beacon.is_array() {
        sched.add_block_random(&beacon.id, beacon.n_antennas(), spec.seed)?;
    }
    let mut links: Vec<LinkSpec> = ue_ids
        .iter()
        .map(|u| LinkSpec::new(&beacon.id, u, ClockModel::Known))
        .collect();
    links.extend(cooperative_links(&ue_ids));
    let baseline = evaluate(&base, &links, &unknowns, &sched)?;

    let coop = cooperative_links(&ue_ids);
    let per_count: Vec<Result<FimResult>> = spec
        .counts
        .par_iter()
        .map(|&n| {
            let r = (n as f64).sqrt().round() as usize;
            let mut s = scene.clone();
            s.beacons.clear();
            s.ris.retain(|x| x.id == spec.ris);
            s.ris[0].nx = r;
            s.ris[0].ny = r;
            let sched = probing_schedule(&[&s.ris[0]], 2, spec.n_blocks, spec.seed)?;
            evaluate(&s, &coop, &unknowns, &sched)
        })
        .collect();
    let mut rows = Vec::new();
    for (&n, res) in spec.counts.iter().zip(per_count) {
        let res = res?;
        for (k, id) in ue_ids.iter().enumerate() {
            rows.push(CurveRow {
                n_elements: n,
                ue_id: id.to_string(),
                peb_ris: res.entities[k].peb,
                peb_beacon: baseline.entities[k].peb,
            });
        }
    }
    Ok(rows)
}
