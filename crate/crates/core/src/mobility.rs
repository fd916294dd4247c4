//! Synthetic user mobility and the channel traces derived from it.
//!
//! The scene is two-dimensional: the base station sits at the origin with its
//! array broadside along +x, so the angle of departure towards the user is
//! simply the bearing `atan2(y, x)`. The user moves along piecewise-straight
//! lines at constant speed; Poisson-timed turn events rotate the heading, and
//! the heading is reflected whenever a step would leave the allowed sector
//! or come closer to the base station than `min_radius_m`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{BufRead, Read, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::channel::{check_aod, ArrayConfig, ChannelSnapshot, Path};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityConfig {
    pub speed_mps: f64,
    pub duration_s: f64,
    /// Resolution of the channel ground truth.
    pub sample_interval_s: f64,
    pub turn_event_rate_hz: f64,
    pub heading_change_std_radians: f64,
    /// Start radius is drawn uniformly over the annulus between these bounds.
    pub start_radius_bounds_m: (f64, f64),
    /// Trajectories stay `margin` away from the endfire directions.
    pub sector_margin_radians: f64,
    pub min_radius_m: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self {
            speed_mps: 10.0,
            duration_s: 1.0,
            sample_interval_s: 1e-3,
            turn_event_rate_hz: 0.0,
            heading_change_std_radians: 0.8,
            start_radius_bounds_m: (8.0, 30.0),
            sector_margin_radians: PI / 6.0,
            min_radius_m: 4.0,
        }
    }
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.speed_mps >= 0.0) {
            return bad("mobility.speed_mps must be >= 0");
        }
        if !(self.duration_s > 0.0) {
            return bad("mobility.duration_s must be > 0");
        }
        if !(self.sample_interval_s > 0.0) || self.sample_interval_s > self.duration_s {
            return bad("mobility.sample_interval_s must be in (0, duration_s]");
        }
        if !(self.turn_event_rate_hz >= 0.0) || !(self.heading_change_std_radians >= 0.0) {
            return bad("mobility turn parameters must be >= 0");
        }
        let (lo, hi) = self.start_radius_bounds_m;
        if !(lo > 0.0) || !(hi >= lo) {
            return bad("mobility start radius bounds must satisfy 0 < min <= max");
        }
        if !(self.sector_margin_radians >= 0.0) || self.sector_margin_radians >= FRAC_PI_2 {
            return bad("mobility.sector_margin_rad must be in [0, pi/2)");
        }
        if !(self.min_radius_m > 0.0) || self.min_radius_m > lo {
            return bad("mobility.min_radius_m must be in (0, start_radius_min_m]");
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s / self.sample_interval_s).round() as usize + 1
    }

    fn sector_half_width(&self) -> f64 {
        FRAC_PI_2 - self.sector_margin_radians
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub num_paths: usize,
    /// Power of each non-line-of-sight path relative to the LOS path, in dB.
    pub nlos_relative_gain_db: f64,
    pub nlos_angle_spread_radians: f64,
    pub pathloss_exponent: f64,
    pub reference_gain: f64,
    /// Slow phase rotation applied to every path; 0 keeps phases fixed.
    pub doppler_hz: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_paths: 2,
            nlos_relative_gain_db: -12.0,
            nlos_angle_spread_radians: 0.3,
            pathloss_exponent: 2.0,
            reference_gain: 15.0,
            doppler_hz: 0.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_paths == 0 {
            return Err(Error::Config("scene.num_paths must be >= 1".into()));
        }
        if !(self.nlos_angle_spread_radians >= 0.0) {
            return Err(Error::Config("scene.nlos_angle_spread_rad must be >= 0".into()));
        }
        if !(self.reference_gain > 0.0) {
            return Err(Error::Config("scene.reference_gain must be > 0".into()));
        }
        if !self.pathloss_exponent.is_finite() || !self.nlos_relative_gain_db.is_finite() {
            return Err(Error::Config("scene gains must be finite".into()));
        }
        Ok(())
    }
}

/// Sampled user positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times_s: Vec<f64>,
    pub positions_m: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_s.is_empty()
    }
}

fn bearing(p: [f64; 2]) -> f64 {
    p[1].atan2(p[0])
}

fn radius(p: [f64; 2]) -> f64 {
    p[0].hypot(p[1])
}

pub fn gen_trajectory<R: Rng + ?Sized>(cfg: &MobilityConfig, rng: &mut R) -> Result<Trajectory> {
    cfg.validate()?;
    let half = cfg.sector_half_width();
    let (r_lo, r_hi) = cfg.start_radius_bounds_m;

    // Uniform over the annulus area, uniform in bearing.
    let u: f64 = rng.random();
    let r0 = (r_lo * r_lo + u * (r_hi * r_hi - r_lo * r_lo)).sqrt();
    let b0 = rng.random_range(-1.0..=1.0) * half;
    let mut heading: f64 = rng.random_range(0.0..2.0 * PI);

    // Turn events are drawn up front so that the event schedule does not
    // depend on the speed.
    let mut turns: Vec<(f64, f64)> = Vec::new();
    if cfg.turn_event_rate_hz > 0.0 {
        let gap = Exp::new(cfg.turn_event_rate_hz).map_err(|e| Error::Config(e.to_string()))?;
        let delta = Normal::new(0.0, cfg.heading_change_std_radians)
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut t = 0.0;
        loop {
            t += gap.sample(rng);
            if t > cfg.duration_s {
                break;
            }
            turns.push((t, delta.sample(rng)));
        }
    }

    let n = cfg.sample_count();
    let dt = cfg.sample_interval_s;
    let step = cfg.speed_mps * dt;
    let mut times = Vec::with_capacity(n);
    let mut positions = Vec::with_capacity(n);
    let mut p = [r0 * b0.cos(), r0 * b0.sin()];
    let mut next_turn = 0;
    for k in 0..n {
        let t = k as f64 * dt;
        times.push(t);
        positions.push(p);
        if k + 1 == n {
            break;
        }
        while next_turn < turns.len() && turns[next_turn].0 <= t + dt {
            heading += turns[next_turn].1;
            next_turn += 1;
        }
        let (np, nh) = advance(p, heading, step, half, cfg.min_radius_m);
        p = np;
        heading = nh;
    }
    Ok(Trajectory {
        times_s: times,
        positions_m: positions,
    })
}

fn inside(p: [f64; 2], half: f64, min_radius: f64) -> bool {
    bearing(p).abs() <= half && radius(p) >= min_radius
}

/// One constant-length step with reflection at the region boundary.
fn advance(p: [f64; 2], heading: f64, step: f64, half: f64, min_radius: f64) -> ([f64; 2], f64) {
    let go = |h: f64| [p[0] + step * h.cos(), p[1] + step * h.sin()];
    let candidate = go(heading);
    if step == 0.0 || inside(candidate, half, min_radius) {
        return (candidate, heading);
    }
    let mut h = heading;
    let b = bearing(candidate);
    if b.abs() > half {
        // Mirror the heading about the boundary ray.
        let edge = half * b.signum();
        h = 2.0 * edge - h;
    } else {
        // Mirror about the tangent of the inner circle.
        let normal = bearing(p);
        h = 2.0 * (normal + FRAC_PI_2) - h;
    }
    let reflected = go(h);
    if inside(reflected, half, min_radius) {
        return (reflected, h);
    }
    // Corner case: head for the sector centre at the current radius.
    let r = radius(p).max(min_radius + step);
    let h = (0.0 - p[1]).atan2(r - p[0]);
    (go(h), h)
}

/// Time series of channel snapshots for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    pub array: ArrayConfig,
    pub snapshots: Vec<ChannelSnapshot>,
}

impl ChannelTrace {
    pub fn new(array: ArrayConfig, snapshots: Vec<ChannelSnapshot>) -> Result<Self> {
        let trace = Self { array, snapshots };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        let Some(first) = self.snapshots.first() else {
            return Ok(());
        };
        let paths = first.paths.len();
        for pair in self.snapshots.windows(2) {
            if !(pair[1].time_s > pair[0].time_s) {
                return Err(Error::Parse(format!(
                    "snapshot times must increase strictly ({} then {})",
                    pair[0].time_s, pair[1].time_s
                )));
            }
        }
        for s in &self.snapshots {
            if s.paths.len() != paths {
                return Err(Error::Parse(format!(
                    "snapshot at t={} has {} paths, expected {paths}",
                    s.time_s,
                    s.paths.len()
                )));
            }
            for p in &s.paths {
                check_aod(p.aod_radians)?;
            }
        }
        Ok(())
    }

    pub fn num_paths(&self) -> usize {
        self.snapshots.first().map_or(0, |s| s.paths.len())
    }

    pub fn start_time(&self) -> f64 {
        self.snapshots.first().map_or(0.0, |s| s.time_s)
    }

    pub fn end_time(&self) -> f64 {
        self.snapshots.last().map_or(0.0, |s| s.time_s)
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// Snapshot closest in time to `t` (no interpolation). Panics on an empty trace.
    pub fn nearest(&self, t: f64) -> &ChannelSnapshot {
        let idx = self.snapshots.partition_point(|s| s.time_s < t);
        if idx == 0 {
            return &self.snapshots[0];
        }
        if idx == self.snapshots.len() {
            return &self.snapshots[idx - 1];
        }
        let before = &self.snapshots[idx - 1];
        let after = &self.snapshots[idx];
        if t - before.time_s <= after.time_s - t {
            before
        } else {
            after
        }
    }
}

/// Geometric channel for every trajectory sample: one LOS path towards the
/// user plus `L-1` NLOS paths at fixed angular offsets from it.
pub fn channel_trace<R: Rng + ?Sized>(
    traj: &Trajectory,
    scene: &SceneConfig,
    array: &ArrayConfig,
    rng: &mut R,
) -> Result<ChannelTrace> {
    scene.validate()?;
    array.validate()?;
    if traj.is_empty() {
        return Err(Error::InvalidParameter("trajectory is empty".into()));
    }
    let los_phase = rng.random_range(0.0..2.0 * PI);
    let spread = Normal::new(0.0, scene.nlos_angle_spread_radians)
        .map_err(|e| Error::Config(e.to_string()))?;
    let nlos: Vec<(f64, f64)> = (1..scene.num_paths)
        .map(|_| (spread.sample(rng), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let doppler: Vec<f64> = (0..scene.num_paths)
        .map(|_| rng.random_range(-1.0..=1.0) * scene.doppler_hz)
        .collect();
    let nlos_scale = 10f64.powf(scene.nlos_relative_gain_db / 20.0);

    let mut snapshots = Vec::with_capacity(traj.len());
    for (&t, &p) in traj.times_s.iter().zip(&traj.positions_m) {
        let r = radius(p);
        if r <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "user at the base station position at t={t}"
            )));
        }
        let los_aod = bearing(p).clamp(-FRAC_PI_2, FRAC_PI_2);
        let magnitude = scene.reference_gain * r.powf(-scene.pathloss_exponent / 2.0);
        let rotation = |l: usize| 2.0 * PI * doppler[l] * t;
        let mut paths = Vec::with_capacity(scene.num_paths);
        paths.push(Path {
            gain: Complex64::from_polar(magnitude, los_phase + rotation(0)),
            aod_radians: los_aod,
        });
        for (l, &(offset, phase)) in nlos.iter().enumerate() {
            paths.push(Path {
                gain: Complex64::from_polar(magnitude * nlos_scale, phase + rotation(l + 1)),
                aod_radians: (los_aod + offset).clamp(-FRAC_PI_2, FRAC_PI_2),
            });
        }
        snapshots.push(ChannelSnapshot { time_s: t, paths });
    }
    Ok(ChannelTrace {
        array: *array,
        snapshots,
    })
}

/// `count` instants evenly spaced strictly inside one prediction period.
pub fn prediction_instants(stage_start_s: f64, period_s: f64, count: usize) -> Vec<f64> {
    let step = period_s / (count + 1) as f64;
    (1..=count).map(|i| stage_start_s + i as f64 * step).collect()
}

pub const TRACE_MAGIC: &[u8; 4] = b"BTRC";
pub const TRACE_VERSION: u16 = 1;

/// Writes the binary trace format (all fields little-endian).
pub fn save_trace<W: Write>(trace: &ChannelTrace, mut out: W) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + trace.snapshots.len() * (8 + trace.num_paths() * 24));
    buf.extend_from_slice(TRACE_MAGIC);
    buf.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(trace.array.num_antennas as u32).to_le_bytes());
    buf.extend_from_slice(&(trace.array.codebook_size as u32).to_le_bytes());
    buf.extend_from_slice(&trace.array.spacing.to_le_bytes());
    buf.extend_from_slice(&(trace.num_paths() as u32).to_le_bytes());
    buf.extend_from_slice(&(trace.snapshots.len() as u64).to_le_bytes());
    for s in &trace.snapshots {
        buf.extend_from_slice(&s.time_s.to_le_bytes());
        for p in &s.paths {
            buf.extend_from_slice(&p.gain.re.to_le_bytes());
            buf.extend_from_slice(&p.gain.im.to_le_bytes());
            buf.extend_from_slice(&p.aod_radians.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse(format!("truncated body while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_trace<R: Read>(mut input: R) -> Result<ChannelTrace> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < TRACE_MAGIC.len() + 2 {
        return Err(Error::Parse("missing header".into()));
    }
    if &bytes[..4] != TRACE_MAGIC {
        return Err(Error::Parse("missing header: bad magic".into()));
    }
    let mut cur = Cursor { bytes: &bytes, pos: 4 };
    let version = cur.u16("version")?;
    if version != TRACE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: TRACE_VERSION,
        });
    }
    let m = cur.u32("M")? as usize;
    let q = cur.u32("Q")? as usize;
    let spacing = cur.f64("spacing")?;
    let l = cur.u32("L")? as usize;
    let count = cur.u64("snapshot count")? as usize;
    let array = ArrayConfig::new(m, spacing, q).map_err(|e| Error::Parse(e.to_string()))?;
    let mut snapshots = Vec::with_capacity(count.min(bytes.len() / 8));
    for _ in 0..count {
        let time_s = cur.f64("snapshot time")?;
        let mut paths = Vec::with_capacity(l);
        for _ in 0..l {
            let re = cur.f64("gain")?;
            let im = cur.f64("gain")?;
            let aod = cur.f64("aod")?;
            paths.push(Path {
                gain: Complex64::new(re, im),
                aod_radians: aod,
            });
        }
        snapshots.push(ChannelSnapshot { time_s, paths });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Parse(format!(
            "{} trailing bytes after last snapshot",
            bytes.len() - cur.pos
        )));
    }
    ChannelTrace::new(array, snapshots)
}

/// Reads the plain-text import format: one row per (snapshot, path) with
/// columns `time, path_index, gain_re, gain_im, aod_rad`. Commas or
/// whitespace separate fields; `#` starts a comment; a non-numeric first
/// row is treated as a header.
pub fn import_text_trace<R: BufRead>(input: R, array: ArrayConfig) -> Result<ChannelTrace> {
    let mut rows: Vec<(f64, usize, Path)> = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if rows.is_empty() && fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if fields.len() != 5 {
            return Err(Error::Parse(format!(
                "line {}: expected 5 fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {}: bad number {:?}", lineno + 1, fields[i])))
        };
        let index = fields[1]
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("line {}: bad path index", lineno + 1)))?;
        rows.push((
            num(0)?,
            index,
            Path {
                gain: Complex64::new(num(2)?, num(3)?),
                aod_radians: num(4)?,
            },
        ));
    }
    let mut snapshots: Vec<(ChannelSnapshot, Vec<usize>)> = Vec::new();
    for (t, index, path) in rows {
        match snapshots.last_mut() {
            Some((s, idx)) if s.time_s == t => {
                s.paths.push(path);
                idx.push(index);
            }
            _ => snapshots.push((
                ChannelSnapshot {
                    time_s: t,
                    paths: vec![path],
                },
                vec![index],
            )),
        }
    }
    let snapshots = snapshots
        .into_iter()
        .map(|(s, idx)| {
            let mut order: Vec<usize> = (0..s.paths.len()).collect();
            order.sort_by_key(|&i| idx[i]);
            ChannelSnapshot {
                time_s: s.time_s,
                paths: order.into_iter().map(|i| s.paths[i]).collect(),
            }
        })
        .collect();
    ChannelTrace::new(array, snapshots)
}
