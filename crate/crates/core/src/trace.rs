//! Text particle-trace format.
//!
//! ```text
//! sdf-forge-trace 1
//! particles <max count> dt <seconds> steps <steps>
//! <step> <time> <n> x y z vx vy vz  (repeated n times, one line per snapshot)
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so reading a trace back
//! reproduces every value bit for bit.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::sim::{Particle, ParticleSnapshot, Vec3};

const MAGIC: &str = "sdf-forge-trace 1";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("trace line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub dt: f64,
    pub steps: u32,
    pub snapshots: Vec<ParticleSnapshot>,
}

impl Trace {
    pub fn max_particles(&self) -> usize {
        self.snapshots.iter().map(|s| s.len()).max().unwrap_or(0)
    }
}

pub fn write_trace<W: Write>(mut w: W, dt: f64, snapshots: &[ParticleSnapshot]) -> io::Result<()> {
    let steps = snapshots.len().saturating_sub(1);
    let max = snapshots.iter().map(|s| s.len()).max().unwrap_or(0);
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "particles {max} dt {dt:?} steps {steps}")?;
    let mut line = String::new();
    for s in snapshots {
        line.clear();
        let _ = write!(line, "{} {:?} {}", s.step, s.time, s.len());
        for p in &s.particles {
            for x in p.position.iter().chain(p.velocity.iter()) {
                let _ = write!(line, " {x:?}");
            }
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn trace_to_string(dt: f64, snapshots: &[ParticleSnapshot]) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, dt, snapshots).expect("writing to memory");
    String::from_utf8(buf).expect("trace is ASCII")
}

fn perr(line: usize, msg: impl Into<String>) -> TraceError {
    TraceError::Parse {
        line,
        msg: msg.into(),
    }
}

fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T, TraceError> {
    tok.ok_or_else(|| perr(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| perr(line, format!("bad {what}")))
}

pub fn read_trace<R: BufRead>(r: R) -> Result<Trace, TraceError> {
    let mut lines = r.lines().enumerate();
    let (_, magic) = lines.next().ok_or_else(|| perr(1, "empty trace"))?;
    if magic?.trim() != MAGIC {
        return Err(perr(1, "not an sdf-forge trace"));
    }
    let (_, header) = lines.next().ok_or_else(|| perr(2, "missing header"))?;
    let header = header?;
    let mut h = header.split_whitespace();
    let mut expect = |key: &str| {
        if h.next() == Some(key) {
            Ok(h.next())
        } else {
            Err(perr(2, format!("expected `{key}`")))
        }
    };
    let max: usize = num(expect("particles")?, 2, "particle count")?;
    let dt: f64 = num(expect("dt")?, 2, "dt")?;
    let steps: u32 = num(expect("steps")?, 2, "steps")?;

    let mut snapshots = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut t = line.split_whitespace();
        let step: u32 = num(t.next(), ln, "step")?;
        let time: f64 = num(t.next(), ln, "time")?;
        let n: usize = num(t.next(), ln, "particle count")?;
        let mut particles = Vec::with_capacity(n);
        for _ in 0..n {
            let mut v = [0.0f64; 6];
            for slot in &mut v {
                *slot = num(t.next(), ln, "coordinate")?;
            }
            particles.push(Particle::new(
                Vec3::new(v[0], v[1], v[2]),
                Vec3::new(v[3], v[4], v[5]),
            ));
        }
        if t.next().is_some() {
            return Err(perr(ln, "trailing values"));
        }
        snapshots.push(ParticleSnapshot {
            step,
            time,
            particles,
        });
    }
    let trace = Trace {
        dt,
        steps,
        snapshots,
    };
    if trace.snapshots.len() != steps as usize + 1 {
        return Err(perr(2, format!(
            "header declares {steps} steps but {} snapshots follow",
            trace.snapshots.len()
        )));
    }
    if trace.max_particles() != max {
        return Err(perr(2, "particle count does not match body"));
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_particle() -> impl Strategy<Value = Particle> {
        let f = || prop::num::f64::NORMAL | prop::num::f64::ZERO;
        (f(), f(), f(), f(), f(), f()).prop_map(|(a, b, c, d, e, g)| {
            Particle::new(Vec3::new(a, b, c), Vec3::new(d, e, g))
        })
    }

    proptest! {
        #[test]
        fn round_trips_bit_exact(
            frames in prop::collection::vec(prop::collection::vec(arb_particle(), 0..6), 1..5),
            dt in 1e-4f64..1.0,
        ) {
            let snaps: Vec<ParticleSnapshot> = frames
                .into_iter()
                .enumerate()
                .map(|(i, particles)| ParticleSnapshot { step: i as u32, time: i as f64 * dt, particles })
                .collect();
            let text = trace_to_string(dt, &snaps);
            let back = read_trace(text.as_bytes()).unwrap();
            prop_assert_eq!(back.dt.to_bits(), dt.to_bits());
            prop_assert_eq!(back.snapshots, snaps);
        }
    }

    #[test]
    fn rejects_truncated_body() {
        let text = "sdf-forge-trace 1\nparticles 1 dt 0.1 steps 1\n0 0.0 1 0 0 0 0 0\n";
        assert!(matches!(read_trace(text.as_bytes()), Err(TraceError::Parse { line: 3, .. })));
    }

    #[test]
    fn header_layout() {
        let s = ParticleSnapshot {
            step: 0,
            time: 0.0,
            particles: vec![Particle::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.5, 0.0, -1.0))],
        };
        let text = trace_to_string(0.1, &[s]);
        assert_eq!(
            text,
            "sdf-forge-trace 1\nparticles 1 dt 0.1 steps 0\n0 0.0 1 1.0 2.0 3.0 0.5 0.0 -1.0\n"
        );
    }
}
