use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use super::calibration::{fit_calibration, operating_point, settled_attenuation, CalibrationReport, SteadyStateModel};
use super::config::{Experiment, ExperimentConfig};
use super::report::{write_csv, write_summary, write_telemetry, Check, Headline, Summary};
use crate::control::Downtime;
use crate::model::{LinkScenario, Station};
use crate::netlink::{loopback_pair, Channel, TcpTransport, Transport};
use crate::pa::{secrecy_budget, FiniteKeyParams, SkrModel};
use crate::pipeline::{
    run_alice, run_bob, run_link, CascadeProfile, EngineConfig, FaultSchedule, LinkReport, RateEngine, RunReport,
    StationReport, SyncModel,
};
use crate::{Error, Result};

/// How the two station engines of `single_link` are connected.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TransportMode {
    /// Both stations in this process over an in-memory channel.
    #[default]
    Loopback,
    /// Both stations in this process over a local stream socket.
    Socket,
    /// Run Alice, waiting for Bob on this address.
    Listen(String),
    /// Run Bob against an Alice listening on this address.
    Connect(String),
}

/// Invocation settings outside the config file.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: u64,
    /// Simulated seconds per engine tick, times 1000. The default 1000 gives 1 s ticks.
    pub time_scale: f64,
    pub transport: TransportMode,
    /// Result directory; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { seed: 1, time_scale: 1000.0, transport: TransportMode::Loopback, out_dir: None }
    }
}

/// Calibrated scenario and the measured Cascade table shared by all experiments.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: LinkScenario,
    pub profile: Arc<CascadeProfile>,
    pub model: SteadyStateModel,
    pub calibration: Option<CalibrationReport>,
}

/// Measures the Cascade profile and fits the scenario to the anchors.
pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    cfg.validate()?;
    let p = &cfg.profile;
    let profile = Arc::new(CascadeProfile::measure(cfg.engine.cascade_block_bits, &cfg.engine.cascade, &p.grid, p.trials, p.seed)?);
    let mut model = SteadyStateModel::new(
        SkrModel { sample_fraction: cfg.engine.sift.sample_fraction, pa_block_bits: cfg.engine.pa_block_bits as f64, ..cfg.skr },
        cfg.engine.pump,
    );
    model.profile = Some(profile.clone());
    model.timing = cfg.engine.cascade_timing;
    model.max_parallel = Some(cfg.engine.max_parallel);
    let mut scenario = LinkScenario { seed, ..cfg.scenario.clone() };
    let mut calibration = None;
    if cfg.calibration.enabled {
        let c = fit_calibration(&scenario, &cfg.calibration.anchors, &model)?;
        log::info!(
            "calibrated pair rate {:.4e} Hz, collection efficiency {:.4}",
            c.report.pair_rate_hz,
            c.report.collection_efficiency
        );
        scenario = c.scenario;
        calibration = Some(c.report);
    }
    Ok(Prepared { scenario, profile, model, calibration })
}

/// Prepares and runs one experiment, writing results when `opts.out_dir` is set.
pub fn run_experiment(exp: Experiment, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Summary> {
    let prepared = prepare(cfg, opts.seed)?;
    run_prepared(exp, cfg, &prepared, opts)
}

/// Runs one experiment on an already prepared scenario.
pub fn run_prepared(exp: Experiment, cfg: &ExperimentConfig, p: &Prepared, opts: &RunOptions) -> Result<Summary> {
    if !(opts.time_scale > 0.0 && opts.time_scale.is_finite()) {
        return Err(Error::Argument(format!("time scale must be positive, got {}", opts.time_scale)));
    }
    if exp != Experiment::SingleLink && matches!(opts.transport, TransportMode::Listen(_) | TransportMode::Connect(_)) {
        return Err(Error::Argument(format!("{exp} runs in one process; --listen/--connect apply to single_link")));
    }
    let out = opts.out_dir.as_deref();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("scenario.toml"), p.scenario.to_toml_string())?;
    }
    let mut s = Summary::new(exp, opts.seed, opts.time_scale);
    s.calibration = p.calibration.clone();
    if out.is_some() {
        s.files.push("scenario.toml".into());
    }
    match exp {
        Experiment::Endurance => endurance(cfg, p, opts, &mut s)?,
        Experiment::LossSweep => loss_sweep(cfg, p, out, &mut s)?,
        Experiment::ChannelSweep => channel_sweep(cfg, p, out, &mut s)?,
        Experiment::SyncStress => sync_stress(cfg, p, out, &mut s)?,
        Experiment::SingleLink => single_link(cfg, p, opts, &mut s)?,
    }
    if let Some(dir) = out {
        s.files.push("summary.json".into());
        write_summary(&dir.join("summary.json"), &s)?;
    }
    Ok(s)
}

fn save_csv<T: Serialize>(out: Option<&Path>, s: &mut Summary, name: &str, rows: &[T]) -> Result<()> {
    if let Some(dir) = out {
        write_csv(&dir.join(name), rows)?;
        s.files.push(name.into());
    }
    Ok(())
}

fn downtime_s(d: &[Downtime], end_s: f64) -> f64 {
    d.iter().map(|x| x.end_s.unwrap_or(end_s) - x.start_s).fold(0.0, |a, b| a + b)
}

fn max_residual(r: &RunReport) -> f64 {
    if r.sync_updates.is_empty() {
        r.telemetry.iter().map(|t| t.clock_residual_ps.abs()).fold(0.0, f64::max)
    } else {
        r.max_abs_sync_residual_ps()
    }
}

fn headline(r: &RunReport) -> Headline {
    Headline {
        mean_skr_bps: r.skr_bps,
        mean_qber_z: r.mean_qber_z,
        mean_qber_x: r.mean_qber_x,
        max_sync_residual_ps: max_residual(r),
        restarts: r.restarts,
        downtime_s: downtime_s(&r.downtime, r.duration_s),
    }
}

#[derive(Debug, Clone, Serialize)]
struct DowntimeRow {
    start_s: f64,
    end_s: Option<f64>,
    cause: String,
}

fn endurance(cfg: &ExperimentConfig, p: &Prepared, opts: &RunOptions, s: &mut Summary) -> Result<()> {
    let e = &cfg.endurance;
    let mut sc = p.scenario.clone();
    if let Some(l) = e.loss_db {
        sc = sc.with_channel_loss(l);
    }
    let engine = EngineConfig {
        duration_s: e.duration_h * 3600.0,
        tick_s: opts.time_scale / 1000.0,
        telemetry_every_ticks: e.telemetry_every_ticks,
        faults: e.faults.clone(),
        ..cfg.engine.clone()
    };
    let run = RateEngine::new(sc.clone(), engine.clone(), p.profile.clone())?.run()?;
    let mut ref_sc = sc;
    ref_sc.detector.evaporation = false;
    let reference_cfg = EngineConfig { faults: FaultSchedule::default(), ..engine };
    let reference = RateEngine::new(ref_sc, reference_cfg, p.profile.clone())?.run()?;
    let deficit = if reference.skr_bps > 0.0 { 1.0 - run.skr_bps / reference.skr_bps } else { f64::NAN };

    s.headline = headline(&run);
    s.metric("reference_skr_bps", reference.skr_bps);
    s.metric("keyrate_deficit", deficit);
    s.metric("duty_cycle", run.duty_cycle);
    s.metric("evaporation_cycles", run.evaporation_cycles as f64);
    s.metric("secret_bits", run.secret_bits as f64);
    s.metric("blocks_dropped", run.blocks_dropped as f64);
    s.metric("blocks_failed", run.blocks_failed as f64);
    s.metric("halted", run.halted as u8 as f64);
    if let Some(r) = e.expect_restarts {
        s.check(Check::equals("restarts", run.restarts as f64, r as f64));
    }
    if let Some(n) = e.min_evaporations {
        s.check(Check::at_least("evaporation_cycles", run.evaporation_cycles as f64, n as f64));
    }
    if let Some([lo, hi]) = e.deficit_range {
        s.check(Check::range("keyrate_deficit", deficit, lo, hi));
    }
    if let Some([lo, hi]) = e.skr_range_bps {
        s.check(Check::range("mean_skr_bps", run.skr_bps, lo, hi));
    }
    s.check(Check::holds("never_halted", !run.halted));

    let out = opts.out_dir.as_deref();
    if let Some(dir) = out {
        write_telemetry(&dir.join("telemetry.csv"), &run.telemetry)?;
        s.files.push("telemetry.csv".into());
    }
    let rows: Vec<DowntimeRow> = run
        .downtime
        .iter()
        .map(|d| DowntimeRow { start_s: d.start_s, end_s: d.end_s, cause: format!("{:?}", d.cause).to_lowercase() })
        .collect();
    save_csv(out, s, "downtime.csv", &rows)?;
    save_csv(out, s, "pa_blocks.csv", &run.pa_blocks)?;
    Ok(())
}

/// Steady-state key rate projected from a short run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Projection {
    /// Sifted key bits per second of run time, downtime included.
    pub key_rate_bps: f64,
    /// Throughput of the configured Cascade instances at the measured QBERz.
    pub cascade_capacity_bps: f64,
    /// Finite-key secret bits per reconciled bit for a full PA block.
    pub secret_fraction: f64,
    pub skr_bps: f64,
}

/// Projects a short run onto full privacy-amplification blocks: the measured
/// key rate, capped by Cascade throughput, times the finite-key fraction of a
/// `pa_block_bits` block with the run's QBERs and the profile's leakage.
pub fn project_skr(r: &RunReport, profile: &CascadeProfile, cfg: &EngineConfig) -> Projection {
    let key_rate = if r.duration_s > 0.0 { r.key_bits as f64 / r.duration_s } else { 0.0 };
    let (qz, qx) = (r.mean_qber_z, r.mean_qber_x);
    let cap = profile.capacity_bps(qz, &cfg.cascade_timing, cfg.max_parallel);
    let mut fraction = 0.0;
    if r.key_bits > 0 && r.x_events > 0 {
        let n_z = cfg.pa_block_bits;
        let n_x = ((n_z as f64) * r.x_events as f64 / r.key_bits as f64).round().max(1.0) as u64;
        let p = FiniteKeyParams {
            eps_sec: cfg.eps_sec,
            eps_cor: cfg.eps_cor,
            n_z,
            n_x,
            e_x: qx.min(0.5),
            leak_ec: profile.at(qz).leak_fraction * n_z as f64,
            f_ec: 0.0,
        };
        if let Ok(Some(b)) = secrecy_budget(&p) {
            fraction = (b / n_z as f64).max(0.0);
        }
    }
    Projection {
        key_rate_bps: key_rate,
        cascade_capacity_bps: cap,
        secret_fraction: fraction,
        skr_bps: key_rate.min(cap) * fraction,
    }
}

/// Short Histogram-mode run with the pump started at its settled value and
/// the clocks warm. Evaporation and faults are off.
fn short_run(sc: &LinkScenario, cfg: &ExperimentConfig, p: &Prepared, run_s: f64, tick_s: f64) -> Result<(RunReport, EngineConfig)> {
    let mut sc = sc.clone();
    sc.detector.evaporation = false;
    sc.pump_attenuation_db = settled_attenuation(&sc, &cfg.engine.pump);
    let engine = EngineConfig {
        duration_s: run_s,
        tick_s,
        sync_model: SyncModel::Histogram,
        warm_start: true,
        faults: FaultSchedule::default(),
        ..cfg.engine.clone()
    };
    let r = RateEngine::new(sc, engine.clone(), p.profile.clone())?.run()?;
    Ok((r, engine))
}

/// One row of `loss_sweep.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossPoint {
    pub loss_db: f64,
    pub pump_attenuation_db: f64,
    pub acquisitions: u32,
    pub acquisition_failures: u32,
    pub max_sync_residual_ps: f64,
    pub duty_cycle: f64,
    pub qber_z: f64,
    pub qber_x: f64,
    pub key_rate_bps: f64,
    pub cascade_capacity_bps: f64,
    pub secret_fraction: f64,
    pub skr_bps: f64,
    /// Steady-state prediction with the same instance cap.
    pub model_skr_bps: f64,
}

/// One row of `cascade_ceiling.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CeilingPoint {
    pub loss_db: f64,
    pub capped_skr_bps: f64,
    pub uncapped_skr_bps: f64,
    pub capped_blocks_dropped: u64,
    /// Steady-state finite-key prediction without any throughput limit.
    pub optimum_skr_bps: f64,
}

/// Losses the acceptance checks read.
pub const SWEEP_CHECK_LOSSES_DB: [f64; 4] = [33.5, 56.0, 56.6, 60.0];

fn sweep_losses(listed: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = listed.iter().copied().chain(SWEEP_CHECK_LOSSES_DB).collect();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    v
}

/// Runs every loss point of the sweep.
pub fn sweep_points(cfg: &ExperimentConfig, p: &Prepared) -> Result<Vec<LossPoint>> {
    let ls = &cfg.loss_sweep;
    sweep_losses(&ls.losses_db)
        .into_iter()
        .map(|loss| {
            let sc = p.scenario.clone().with_channel_loss(loss);
            let (r, engine) = short_run(&sc, cfg, p, ls.run_s, ls.tick_s)?;
            let proj = project_skr(&r, &p.profile, &engine);
            log::debug!("loss {loss} dB: {proj:?}");
            Ok(LossPoint {
                loss_db: loss,
                pump_attenuation_db: settled_attenuation(&sc, &cfg.engine.pump),
                acquisitions: r.acquisitions,
                acquisition_failures: r.acquisition_failures,
                max_sync_residual_ps: r.max_abs_sync_residual_ps(),
                duty_cycle: r.duty_cycle,
                qber_z: r.mean_qber_z,
                qber_x: r.mean_qber_x,
                key_rate_bps: proj.key_rate_bps,
                cascade_capacity_bps: proj.cascade_capacity_bps,
                secret_fraction: proj.secret_fraction,
                skr_bps: proj.skr_bps,
                model_skr_bps: operating_point(&p.scenario, loss, &p.model).prediction.skr_bps,
            })
        })
        .collect()
}

/// Low-loss runs with the configured instance cap and with it lifted.
pub fn ceiling_points(cfg: &ExperimentConfig, p: &Prepared) -> Result<Vec<CeilingPoint>> {
    let ls = &cfg.loss_sweep;
    let uncapped_model = SteadyStateModel { max_parallel: None, ..p.model.clone() };
    ls.ceiling_losses_db
        .iter()
        .map(|&loss| {
            let mut sc = p.scenario.clone().with_channel_loss(loss);
            sc.detector.evaporation = false;
            sc.pump_attenuation_db = settled_attenuation(&sc, &cfg.engine.pump);
            let run = |k: usize| {
                let e = EngineConfig {
                    duration_s: ls.ceiling_run_s,
                    sync_model: SyncModel::Analytic,
                    warm_start: true,
                    max_parallel: k,
                    faults: FaultSchedule::default(),
                    ..cfg.engine.clone()
                };
                RateEngine::new(sc.clone(), e, p.profile.clone())?.run()
            };
            let capped = run(cfg.engine.max_parallel)?;
            let uncapped = run(ls.uncapped_parallel)?;
            Ok(CeilingPoint {
                loss_db: loss,
                capped_skr_bps: capped.skr_bps,
                uncapped_skr_bps: uncapped.skr_bps,
                capped_blocks_dropped: capped.blocks_dropped,
                optimum_skr_bps: operating_point(&p.scenario, loss, &uncapped_model).prediction.skr_bps,
            })
        })
        .collect()
}

/// Largest spread `max/min` of capped rates still counted as a plateau.
pub const PLATEAU_MAX_SPREAD: f64 = 1.15;
/// The capped plateau stays below this fraction of the finite-key optimum.
pub const PLATEAU_MAX_OF_OPTIMUM: f64 = 0.9;
/// Lifting the cap must raise the lowest-loss rate at least this much.
pub const UNCAP_MIN_GAIN: f64 = 2.0;

fn skr_at(points: &[LossPoint], loss: f64) -> f64 {
    points.iter().find(|x| (x.loss_db - loss).abs() < 1e-9).map_or(f64::NAN, |x| x.skr_bps)
}

/// SKR-curve checks: field points within a factor of 3, key at 56 dB, none from 60 dB on.
pub fn sweep_checks(points: &[LossPoint]) -> Vec<Check> {
    let beyond = points.iter().filter(|x| x.loss_db >= 60.0 - 1e-9).map(|x| x.skr_bps).fold(0.0, f64::max);
    vec![
        Check::range("skr_33.5dB_bps", skr_at(points, 33.5), 175.0 / 3.0, 175.0 * 3.0),
        Check::range("skr_56.6dB_bps", skr_at(points, 56.6), 1.8 / 3.0, 1.8 * 3.0),
        Check::positive("skr_56dB_bps", skr_at(points, 56.0)),
        Check::at_most("max_skr_from_60dB_bps", beyond, 0.0),
    ]
}

/// Cascade-ceiling checks over the low-loss runs.
pub fn ceiling_checks(points: &[CeilingPoint]) -> Vec<Check> {
    let capped: Vec<f64> = points.iter().map(|x| x.capped_skr_bps).collect();
    let max = capped.iter().copied().fold(0.0, f64::max);
    let min = capped.iter().copied().fold(f64::INFINITY, f64::min);
    let of_optimum = points.iter().map(|x| x.capped_skr_bps / x.optimum_skr_bps).fold(0.0, f64::max);
    let first = points.iter().min_by(|a, b| a.loss_db.total_cmp(&b.loss_db));
    let gain = first.map_or(f64::NAN, |x| x.uncapped_skr_bps / x.capped_skr_bps);
    vec![
        Check::at_most("capped_plateau_spread", if min > 0.0 { max / min } else { f64::INFINITY }, PLATEAU_MAX_SPREAD),
        Check::at_most("capped_over_optimum", of_optimum, PLATEAU_MAX_OF_OPTIMUM),
        Check::at_least("uncapped_gain_at_lowest_loss", gain, UNCAP_MIN_GAIN),
    ]
}

fn loss_sweep(cfg: &ExperimentConfig, p: &Prepared, out: Option<&Path>, s: &mut Summary) -> Result<()> {
    let points = sweep_points(cfg, p)?;
    let ceiling = ceiling_points(cfg, p)?;
    let n = points.len().max(1) as f64;
    let producing: Vec<&LossPoint> = points.iter().filter(|x| x.skr_bps > 0.0).collect();
    let m = producing.len().max(1) as f64;
    s.headline = Headline {
        mean_skr_bps: points.iter().map(|x| x.skr_bps).sum::<f64>() / n,
        mean_qber_z: producing.iter().map(|x| x.qber_z).sum::<f64>() / m,
        mean_qber_x: producing.iter().map(|x| x.qber_x).sum::<f64>() / m,
        max_sync_residual_ps: producing.iter().map(|x| x.max_sync_residual_ps).fold(0.0, f64::max),
        restarts: 0,
        downtime_s: 0.0,
    };
    // first loss from which no point produces key
    let extinction = points
        .iter()
        .enumerate()
        .find(|(i, _)| points[*i..].iter().all(|x| x.skr_bps == 0.0))
        .map_or(f64::NAN, |(_, x)| x.loss_db);
    s.metric("extinction_loss_db", extinction);
    for c in sweep_checks(&points).into_iter().chain(ceiling_checks(&ceiling)) {
        s.check(c);
    }
    save_csv(out, s, "loss_sweep.csv", &points)?;
    save_csv(out, s, "cascade_ceiling.csv", &ceiling)?;
    Ok(())
}

/// One row of `channel_sweep.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlotPoint {
    pub slot: u8,
    pub alice_nm: f64,
    pub bob_nm: f64,
    pub transmission_a: f64,
    pub transmission_b: f64,
    pub pump_attenuation_db: f64,
    pub acquisitions: u32,
    pub qber_z: f64,
    pub qber_x: f64,
    pub key_rate_bps: f64,
    pub skr_bps: f64,
}

/// Runs every slot of the channel sweep.
pub fn slot_points(cfg: &ExperimentConfig, p: &Prepared) -> Result<Vec<SlotPoint>> {
    let cs = &cfg.channel_sweep;
    let mut base = p.scenario.clone();
    if let Some(l) = cs.loss_db {
        base = base.with_channel_loss(l);
    }
    cs.slots
        .iter()
        .map(|&slot| {
            let sc = LinkScenario { slot, ..base.clone() };
            let ps = sc.plan.slot(slot)?;
            let (ta, tb) = crate::model::channel_pair_transmission(&sc.plan, slot)?;
            let (r, engine) = short_run(&sc, cfg, p, cs.run_s, cs.tick_s)?;
            let proj = project_skr(&r, &p.profile, &engine);
            Ok(SlotPoint {
                slot,
                alice_nm: ps.alice_nm(),
                bob_nm: ps.bob_nm(),
                transmission_a: ta,
                transmission_b: tb,
                pump_attenuation_db: settled_attenuation(&sc, &cfg.engine.pump),
                acquisitions: r.acquisitions,
                qber_z: r.mean_qber_z,
                qber_x: r.mean_qber_x,
                key_rate_bps: proj.key_rate_bps,
                skr_bps: proj.skr_bps,
            })
        })
        .collect()
}

fn channel_sweep(cfg: &ExperimentConfig, p: &Prepared, out: Option<&Path>, s: &mut Summary) -> Result<()> {
    let points = slot_points(cfg, p)?;
    let live: Vec<&SlotPoint> = points.iter().filter(|x| x.skr_bps > 0.0).collect();
    let dead: Vec<u8> = points.iter().filter(|x| x.skr_bps <= 0.0).map(|x| x.slot).collect();
    let m = live.len().max(1) as f64;
    s.headline = Headline {
        mean_skr_bps: live.iter().map(|x| x.skr_bps).sum::<f64>() / m,
        mean_qber_z: live.iter().map(|x| x.qber_z).sum::<f64>() / m,
        mean_qber_x: live.iter().map(|x| x.qber_x).sum::<f64>() / m,
        ..Headline::default()
    };
    s.metric("key_slots", live.len() as f64);
    for &d in &dead {
        s.metric(&format!("dead_slot_{d:02}"), d as f64);
    }
    let cs = &cfg.channel_sweep;
    if let Some(n) = cs.expect_key_slots {
        s.check(Check::equals("key_slots", live.len() as f64, n as f64));
    }
    if let Some(expected) = &cs.expect_dead_slots {
        s.check(Check::holds("dead_slots_match", &dead == expected));
    }
    save_csv(out, s, "channel_sweep.csv", &points)?;
    Ok(())
}

/// Nominal and perturbed tracking runs of `sync_stress`.
pub fn sync_runs(cfg: &ExperimentConfig, p: &Prepared) -> Result<(RunReport, RunReport)> {
    let ss = &cfg.sync_stress;
    let mut sc = p.scenario.clone();
    if let Some(l) = ss.loss_db {
        sc = sc.with_channel_loss(l);
    }
    sc.detector.evaporation = false;
    let engine = EngineConfig {
        duration_s: ss.duration_s,
        tick_s: ss.tick_s,
        sync_model: SyncModel::Histogram,
        faults: FaultSchedule::default(),
        ..cfg.engine.clone()
    };
    let nominal = RateEngine::new(sc.clone(), engine.clone(), p.profile.clone())?.run()?;
    let mut perturbed_sc = sc;
    perturbed_sc.clock_b.perturbations.extend(ss.perturbations.iter().cloned());
    let perturbed = RateEngine::new(perturbed_sc, engine, p.profile.clone())?.run()?;
    Ok((nominal, perturbed))
}

fn sync_stress(cfg: &ExperimentConfig, p: &Prepared, out: Option<&Path>, s: &mut Summary) -> Result<()> {
    let ss = &cfg.sync_stress;
    let (nominal, perturbed) = sync_runs(cfg, p)?;
    s.headline = headline(&nominal);
    s.metric("nominal_updates", nominal.sync_updates.len() as f64);
    s.metric("perturbed_updates", perturbed.sync_updates.len() as f64);
    s.metric("perturbed_max_residual_ps", perturbed.max_abs_sync_residual_ps());
    let true_max = |r: &RunReport| r.sync_updates.iter().map(|u| u.true_residual_ps.abs()).fold(0.0, f64::max);
    s.metric("nominal_max_true_residual_ps", true_max(&nominal));
    s.metric("perturbed_max_true_residual_ps", true_max(&perturbed));
    s.check(Check::positive("nominal_updates", nominal.sync_updates.len() as f64));
    s.check(Check::equals("nominal_lock_losses", (nominal.acquisitions.saturating_sub(1)) as f64, 0.0));
    s.check(Check::at_most("nominal_max_residual_ps", nominal.max_abs_sync_residual_ps(), ss.nominal_limit_ps));
    s.check(Check::at_most("perturbed_max_residual_ps", perturbed.max_abs_sync_residual_ps(), ss.perturbed_limit_ps));
    if let Some(dir) = out {
        write_telemetry(&dir.join("telemetry.csv"), &nominal.telemetry)?;
        s.files.push("telemetry.csv".into());
    }
    save_csv(out, s, "sync_nominal.csv", &nominal.sync_updates)?;
    save_csv(out, s, "sync_perturbed.csv", &perturbed.sync_updates)?;
    Ok(())
}

/// Two connected TCP transports on the loopback interface.
pub fn socket_pair() -> Result<(TcpTransport, TcpTransport)> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let client = TcpStream::connect(listener.local_addr()?)?;
    let (server, _) = listener.accept()?;
    Ok((TcpTransport::new(server)?, TcpTransport::new(client)?))
}

fn connect_with_retry(addr: &str) -> Result<TcpStream> {
    let mut last = None;
    for _ in 0..100 {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) => last = Some(e),
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    Err(Error::Transport(format!("cannot reach {addr}: {}", last.map_or_else(String::new, |e| e.to_string()))))
}

/// Scenario of the tag-level run.
pub fn single_link_scenario(cfg: &ExperimentConfig, p: &Prepared) -> LinkScenario {
    let sl = &cfg.single_link;
    let mut sc = p.scenario.clone();
    if let Some(l) = sl.loss_db {
        sc = sc.with_channel_loss(l);
    }
    if let Some(r) = sl.pair_rate_hz {
        sc.pair_rate_hz = r;
    }
    sc.detector.evaporation = false;
    sc
}

/// Runs both station engines over the requested in-process transport.
pub fn run_single_link(cfg: &ExperimentConfig, p: &Prepared, mode: &TransportMode, keystore: Option<&Path>) -> Result<LinkReport> {
    let sc = single_link_scenario(cfg, p);
    let (a, b): (Box<dyn Transport>, Box<dyn Transport>) = match mode {
        TransportMode::Loopback => {
            let (a, b) = loopback_pair();
            (Box::new(a), Box::new(b))
        }
        TransportMode::Socket => {
            let (a, b) = socket_pair()?;
            (Box::new(a), Box::new(b))
        }
        _ => return Err(Error::Argument("separate-process transports run one station each".into())),
    };
    run_link(&sc, &cfg.station, Channel::new(sc.seed, a), Channel::new(sc.seed, b), keystore)
}

#[derive(Debug, Clone, Serialize)]
struct KeyRow {
    station: String,
    epoch: u64,
    len: usize,
    ledger_ok: bool,
    n_z: u64,
    qber_z: f64,
    e_x: f64,
    leak_ec: u64,
}

fn station_checks(s: &mut Summary, r: &StationReport, duration_s: f64) {
    s.check(Check::positive(format!("{}_secret_bits", station_name(r.station)), r.secret_bits as f64));
    s.check(Check::holds(format!("{}_ledger_ok", station_name(r.station)), r.keys.iter().all(|k| k.ledger_ok)));
    s.metric(&format!("{}_skr_bps", station_name(r.station)), r.skr_bps(duration_s));
    s.metric(&format!("{}_blocks_discarded", station_name(r.station)), r.blocks_discarded as f64);
}

fn station_name(st: Station) -> &'static str {
    match st {
        Station::Alice => "alice",
        Station::Bob => "bob",
    }
}

fn key_rows(r: &StationReport) -> Vec<KeyRow> {
    r.keys
        .iter()
        .map(|k| KeyRow {
            station: station_name(r.station).into(),
            epoch: k.epoch,
            len: k.len,
            ledger_ok: k.ledger_ok,
            n_z: k.provenance.n_z,
            qber_z: k.provenance.qber_z,
            e_x: k.provenance.e_x,
            leak_ec: k.provenance.leak_ec,
        })
        .collect()
}

fn station_headline(r: &StationReport, duration_s: f64) -> Headline {
    let ratio = |k: u64, n: u64| if n > 0 { k as f64 / n as f64 } else { 0.0 };
    Headline {
        mean_skr_bps: r.skr_bps(duration_s),
        mean_qber_z: ratio(r.sample_errors, r.sample_bits),
        mean_qber_x: ratio(r.x_errors, r.x_events),
        max_sync_residual_ps: r.sync_updates.iter().map(|u| u.1.abs()).fold(0.0, f64::max),
        restarts: 0,
        downtime_s: 0.0,
    }
}

fn single_link(cfg: &ExperimentConfig, p: &Prepared, opts: &RunOptions, s: &mut Summary) -> Result<()> {
    let out = opts.out_dir.as_deref();
    let duration = cfg.station.duration_s;
    let sc = single_link_scenario(cfg, p);
    let one_side = |report: StationReport, s: &mut Summary| -> Result<()> {
        s.headline = station_headline(&report, duration);
        station_checks(s, &report, duration);
        if out.is_some() {
            s.files.push(format!("{}.keys", station_name(report.station)));
        }
        save_csv(out, s, "keys.csv", &key_rows(&report))
    };
    match &opts.transport {
        TransportMode::Listen(addr) => {
            let listener = TcpListener::bind(addr)?;
            log::info!("alice waiting on {}", listener.local_addr()?);
            let (stream, peer) = listener.accept()?;
            log::info!("bob connected from {peer}");
            let ch = Channel::new(sc.seed, Box::new(TcpTransport::new(stream)?));
            one_side(run_alice(&sc, &cfg.station, &ch, out)?, s)
        }
        TransportMode::Connect(addr) => {
            let ch = Channel::new(sc.seed, Box::new(TcpTransport::new(connect_with_retry(addr)?)?));
            let report = run_bob(&sc, &cfg.station, &ch, out)?;
            if let Some(dir) = out {
                write_telemetry(&dir.join("telemetry.csv"), &report.telemetry)?;
                s.files.push("telemetry.csv".into());
            }
            one_side(report, s)
        }
        mode => {
            let r = run_single_link(cfg, p, mode, out)?;
            s.headline = station_headline(&r.bob, duration);
            s.check(Check::holds("keys_match", r.keys_match()));
            s.check(Check::equals("sample_errors_agree", r.alice.sample_errors as f64, r.bob.sample_errors as f64));
            s.check(Check::equals("tap_parity_equals_leakage", r.bob.channel.parity_bits as f64, r.bob.leaked_bits as f64));
            s.check(Check::equals("leakage_ledgers_agree", r.alice.leaked_bits as f64, r.bob.leaked_bits as f64));
            station_checks(s, &r.alice, duration);
            station_checks(s, &r.bob, duration);
            if let Some(t) = r.bob.phase_lock_s {
                s.metric("phase_lock_s", t);
            }
            s.metric("classical_bytes", (r.bob.channel.bytes_up + r.bob.channel.bytes_down) as f64);
            if let Some(dir) = out {
                write_telemetry(&dir.join("telemetry.csv"), &r.bob.telemetry)?;
                s.files.extend(["telemetry.csv".to_string(), "alice.keys".into(), "bob.keys".into()]);
            }
            let rows: Vec<KeyRow> = key_rows(&r.alice).into_iter().chain(key_rows(&r.bob)).collect();
            save_csv(out, s, "keys.csv", &rows)
        }
    }
}
