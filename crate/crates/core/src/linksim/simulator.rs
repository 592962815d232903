use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};

use super::detect::{StationStream, TagOrigin};
use super::drift::{ClockTrajectory, PolarizationTrajectory};
use super::franson::franson_outcome;
use super::{rng_stream, streams};
use crate::model::{AnalyzerTable, BasisOutcome, LinkScenario, PolarizationModel, Station, TimeTag};
use crate::Result;

/// Settings the stabilization loops act on.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Actuators {
    pub pump_attenuation_db: f64,
    pub phase_a_rad: f64,
    pub phase_b_rad: f64,
    pub polarization_a_rad: f64,
    pub polarization_b_rad: f64,
}

/// Tags emitted for `[t_start_s, t_end_s)` of true time.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub a: StationStream,
    pub b: StationStream,
}

#[derive(Debug, Clone, Copy)]
struct Raw {
    t: i64,
    ch: u16,
    origin: TagOrigin,
}

/// Per-station output stage: clock offset, dark counts, dead time, ordering.
#[derive(Debug, Clone)]
struct Output {
    station: Station,
    clock: ClockTrajectory,
    events: Vec<Raw>,
    pending: Vec<Raw>,
    last_accept: Vec<Option<i64>>,
}

impl Output {
    fn new(station: Station, clock: ClockTrajectory, channels: usize) -> Self {
        Self {
            station,
            clock,
            events: Vec::new(),
            pending: Vec::new(),
            last_accept: vec![None; channels],
        }
    }

    fn push(&mut self, t_true_ps: f64, ch: u16, origin: TagOrigin) {
        let off = self.clock.offset_ps(t_true_ps * 1e-12);
        self.events.push(Raw {
            t: (t_true_ps + off).round() as i64,
            ch,
            origin,
        });
    }

    /// Emits tags reported before `cutoff` (all tags if `None`); later ones wait
    /// for the next batch so the stream stays globally ordered.
    fn drain(&mut self, cutoff: Option<i64>, dead_time_ps: i64) -> StationStream {
        let mut all = std::mem::take(&mut self.pending);
        all.append(&mut self.events);
        all.sort_by_key(|r| (r.t, r.ch));
        let split = match cutoff {
            Some(c) => all.partition_point(|r| r.t < c),
            None => all.len(),
        };
        self.pending = all.split_off(split);
        let mut out = StationStream::default();
        out.tags.reserve(all.len());
        out.origin.reserve(all.len());
        for r in all {
            if r.t < 0 {
                continue;
            }
            let last = &mut self.last_accept[r.ch as usize];
            if let Some(l) = *last {
                if r.t - l < dead_time_ps {
                    continue;
                }
            }
            *last = Some(r.t);
            out.tags.push(TimeTag {
                t: r.t as u64,
                channel: r.ch,
                station: self.station,
            });
            out.origin.push(r.origin);
        }
        out
    }
}

/// Batched tag-level simulator of one link.
pub struct LinkSimulator {
    sc: LinkScenario,
    rng: ChaCha8Rng,
    table: AnalyzerTable,
    out_a: Output,
    out_b: Output,
    pol_a: PolarizationTrajectory,
    pol_b: PolarizationTrajectory,
    jitter: Option<Normal<f64>>,
    tau_z: f64,
    tau_x_a: f64,
    tau_x_b: f64,
    eta_a: f64,
    eta_b: f64,
    now_ps: u64,
    next_pair: u64,
    pub actuators: Actuators,
    /// Extra detector blackouts (true-time seconds), on top of scheduled evaporations.
    pub blackouts: Vec<(f64, f64)>,
}

impl LinkSimulator {
    pub fn new(sc: LinkScenario) -> Result<Self> {
        sc.validate()?;
        let seed = sc.seed;
        let table = AnalyzerTable::default();
        let jitter = (sc.detector.jitter_ps > 0.0).then(|| Normal::new(0.0, sc.detector.jitter_ps).expect("finite jitter"));
        let actuators = Actuators {
            pump_attenuation_db: sc.pump_attenuation_db,
            ..Actuators::default()
        };
        Ok(Self {
            rng: rng_stream(seed, streams::DETECT),
            out_a: Output::new(Station::Alice, ClockTrajectory::new(sc.clock_a.clone(), rng_stream(seed, streams::CLOCK_A)), table.len()),
            out_b: Output::new(Station::Bob, ClockTrajectory::new(sc.clock_b.clone(), rng_stream(seed, streams::CLOCK_B)), table.len()),
            pol_a: PolarizationTrajectory::new(sc.polarization_a.clone(), rng_stream(seed, streams::POL_A)),
            pol_b: PolarizationTrajectory::new(sc.polarization_b.clone(), rng_stream(seed, streams::POL_B)),
            table,
            jitter,
            tau_z: sc.z_delay_ps as f64,
            tau_x_a: 1e3 / sc.phase_a.fsr_ghz,
            tau_x_b: 1e3 / sc.phase_b.fsr_ghz,
            eta_a: sc.arm_transmission(Station::Alice),
            eta_b: sc.arm_transmission(Station::Bob),
            now_ps: 0,
            next_pair: 0,
            actuators,
            blackouts: Vec::new(),
            sc,
        })
    }

    pub fn scenario(&self) -> &LinkScenario {
        &self.sc
    }

    pub fn now_s(&self) -> f64 {
        self.now_ps as f64 * 1e-12
    }

    pub fn analyzer(&self) -> &AnalyzerTable {
        &self.table
    }

    pub fn is_dark(&self, t_s: f64) -> bool {
        self.sc.detector.in_evaporation(t_s) || self.blackouts.iter().any(|&(a, b)| t_s >= a && t_s < b)
    }

    /// Ground-truth clock offset; for validation only.
    pub fn true_offset_ps(&mut self, station: Station, t_s: f64) -> f64 {
        match station {
            Station::Alice => self.out_a.clock.offset_ps(t_s),
            Station::Bob => self.out_b.clock.offset_ps(t_s),
        }
    }

    /// Polarization efficiency multiplier with the current actuator setting.
    pub fn polarization_multiplier(&mut self, station: Station, t_s: f64) -> f64 {
        let floor = self.sc.detector.polarization_floor();
        let (traj, act) = match station {
            Station::Alice => (&mut self.pol_a, self.actuators.polarization_a_rad),
            Station::Bob => (&mut self.pol_b, self.actuators.polarization_b_rad),
        };
        if !traj.model().enabled {
            return 1.0;
        }
        PolarizationModel::multiplier(traj.angle_rad(t_s) - act, floor)
    }

    /// Detection probability per photon at `t_s`, including polarization.
    pub fn detection_probability(&mut self, station: Station, t_s: f64) -> f64 {
        if self.is_dark(t_s) {
            return 0.0;
        }
        let eta = match station {
            Station::Alice => self.eta_a,
            Station::Bob => self.eta_b,
        };
        eta * self.polarization_multiplier(station, t_s)
    }

    /// Residual Franson phase `φ_A + φ_B` after actuator correction.
    pub fn phase_sum(&self, t_s: f64) -> f64 {
        self.sc.phase_a.phase_rad(t_s) + self.actuators.phase_a_rad + self.sc.phase_b.phase_rad(t_s) + self.actuators.phase_b_rad
    }

    fn visibility(&self) -> f64 {
        self.sc.phase_a.visibility * self.sc.phase_b.visibility
    }

    fn jitter(&mut self) -> f64 {
        match &self.jitter {
            Some(n) => n.sample(&mut self.rng),
            None => 0.0,
        }
    }

    fn emit(&mut self, t_ps: f64, det_a: bool, det_b: bool) {
        let id = self.next_pair;
        self.next_pair += 1;
        let t_s = t_ps * 1e-12;
        let pick = |rng: &mut ChaCha8Rng| (rng.random_bool(0.5), rng.random_bool(0.5));
        let (x_a, del_a) = pick(&mut self.rng);
        let (x_b, del_b) = pick(&mut self.rng);
        let z_out = |d: bool| if d { BasisOutcome::ZLong } else { BasisOutcome::ZShort };
        let uniform_x = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { BasisOutcome::XMinus } else { BasisOutcome::XPlus };
        let (mut o_a, mut o_b) = (z_out(del_a), z_out(del_b));
        if x_a && x_b && del_a == del_b {
            let (a, b) = franson_outcome(self.phase_sum(t_s), 0.0, self.visibility(), &mut self.rng);
            o_a = a;
            o_b = b;
        } else {
            if x_a {
                o_a = uniform_x(&mut self.rng);
            }
            if x_b {
                o_b = uniform_x(&mut self.rng);
            }
        }
        if det_a {
            let delay = if !del_a { 0.0 } else if x_a { self.tau_x_a } else { self.tau_z };
            let t = t_ps + delay + self.jitter();
            let ch = self.table.channel(o_a);
            self.out_a.push(t, ch, TagOrigin { pair: Some(id), delayed: del_a });
        }
        if det_b {
            let delay = if !del_b { 0.0 } else if x_b { self.tau_x_b } else { self.tau_z };
            let t = t_ps + delay + self.jitter();
            let ch = self.table.channel(o_b);
            self.out_b.push(t, ch, TagOrigin { pair: Some(id), delayed: del_b });
        }
    }

    fn add_darks(&mut self, t0_ps: u64, t1_ps: u64) {
        let rate = self.sc.detector.dark_rate_hz;
        if rate <= 0.0 || t1_ps <= t0_ps {
            return;
        }
        let span = (t1_ps - t0_ps) as f64;
        let mean = rate * span * 1e-12;
        for station in [Station::Alice, Station::Bob] {
            for ch in 0..self.table.len() as u16 {
                let n = Poisson::new(mean).expect("positive mean").sample(&mut self.rng) as u64;
                for _ in 0..n {
                    let t = t0_ps as f64 + self.rng.random::<f64>() * span;
                    if self.is_dark(t * 1e-12) {
                        continue;
                    }
                    let origin = TagOrigin { pair: None, delayed: false };
                    match station {
                        Station::Alice => self.out_a.push(t, ch, origin),
                        Station::Bob => self.out_b.push(t, ch, origin),
                    }
                }
            }
        }
    }

    fn drain(&mut self, end_ps: u64, flush: bool) -> (StationStream, StationStream) {
        let dead = self.sc.detector.dead_time_ps as i64;
        let margin = 2_000.0 + 10.0 * self.sc.detector.jitter_ps;
        let end_s = end_ps as f64 * 1e-12;
        let cut_a = (!flush).then(|| (end_ps as f64 + self.out_a.clock.offset_ps(end_s) - margin) as i64);
        let cut_b = (!flush).then(|| (end_ps as f64 + self.out_b.clock.offset_ps(end_s) - margin) as i64);
        (self.out_a.drain(cut_a, dead), self.out_b.drain(cut_b, dead))
    }

    /// Detects every photon of the given pairs independently, then flushes.
    pub fn detect_pairs(&mut self, pairs: &[u64], end_ps: u64) -> (StationStream, StationStream) {
        let start = self.now_ps;
        for &t in pairs {
            let t_s = t as f64 * 1e-12;
            let p_a = self.detection_probability(Station::Alice, t_s);
            let p_b = self.detection_probability(Station::Bob, t_s);
            let det_a = self.rng.random::<f64>() < p_a;
            let det_b = self.rng.random::<f64>() < p_b;
            if det_a || det_b {
                self.emit(t as f64, det_a, det_b);
            } else {
                self.next_pair += 1;
            }
        }
        self.add_darks(start, end_ps);
        self.now_ps = end_ps;
        self.drain(end_ps, true)
    }

    /// Advances by `duration_s`, sampling only pairs with at least one detected
    /// photon (a thinned Poisson process with rate `R·(1-(1-p_A)(1-p_B))`).
    pub fn next_batch(&mut self, duration_s: f64) -> Batch {
        let t0 = self.now_ps;
        let t1 = t0 + (duration_s * 1e12).round() as u64;
        let mid_s = (t0 + t1) as f64 * 0.5e-12;
        let rate = self.sc.pair_rate_at(self.actuators.pump_attenuation_db);
        let p_a = self.eta_a * self.polarization_multiplier(Station::Alice, mid_s);
        let p_b = self.eta_b * self.polarization_multiplier(Station::Bob, mid_s);
        let p_any = 1.0 - (1.0 - p_a) * (1.0 - p_b);
        if rate * p_any > 0.0 {
            let gap = Exp::new(rate * p_any * 1e-12).expect("positive rate");
            let both = p_a * p_b / p_any;
            let only_a = p_a * (1.0 - p_b) / p_any;
            let mut t = t0 as f64;
            loop {
                t += gap.sample(&mut self.rng);
                if t >= t1 as f64 {
                    break;
                }
                if self.is_dark(t * 1e-12) {
                    continue;
                }
                let u: f64 = self.rng.random();
                let (da, db) = if u < both {
                    (true, true)
                } else if u < both + only_a {
                    (true, false)
                } else {
                    (false, true)
                };
                self.emit(t, da, db);
            }
        }
        self.add_darks(t0, t1);
        self.now_ps = t1;
        let (a, b) = self.drain(t1, false);
        Batch {
            t_start_s: t0 as f64 * 1e-12,
            t_end_s: t1 as f64 * 1e-12,
            a,
            b,
        }
    }
}
