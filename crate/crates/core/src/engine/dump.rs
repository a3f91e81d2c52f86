//! Versioned binary dump of a [`RunOutput`], the interchange format between
//! the `pt` CLI stage and the analysis stages.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"SPINPT1\n"
//! u32    header length, then that many bytes of UTF-8 `key value` lines:
//!        instance, seed, lane, replicas, n_t, n_sites, steps,
//!        sweeps_per_step, stride, blocks, min_energy, ladder (space-
//!        separated temperatures)
//! traces   replicas·n_t × { u64 len, len bytes of slot indices }
//! blocks   n_t·blocks f64 sums, then blocks u64 counts
//! snaps    u64 count × { u64 step, u32 replica, u32 copy, u8 slot,
//!          u32 n_words, words u64 }
//! final    replicas·n_t × { u8 slot, f64 energy, n_cfg_words u64 words }
//! ```

use std::io::{self, Read, Write};

use super::{EnergyBlocks, ReplicaSet, RunOutput, Snapshot, WalkTrace};
use crate::chimera::SpinConfig;

const MAGIC: &[u8; 8] = b"SPINPT1\n";

fn w_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}
fn w_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}
fn w_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}
fn r_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
fn r_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
fn r_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_run(w: &mut impl Write, out: &RunOutput) -> io::Result<()> {
    w.write_all(MAGIC)?;
    let mut hdr = String::new();
    use std::fmt::Write as _;
    writeln!(hdr, "instance {}", out.instance_id).unwrap();
    writeln!(hdr, "seed {}", out.master_seed).unwrap();
    writeln!(hdr, "lane {}", out.lane).unwrap();
    writeln!(hdr, "replicas {}", out.replicas).unwrap();
    writeln!(hdr, "n_t {}", out.n_t).unwrap();
    writeln!(hdr, "n_sites {}", out.n_sites).unwrap();
    writeln!(hdr, "steps {}", out.steps).unwrap();
    writeln!(hdr, "sweeps_per_step {}", out.sweeps_per_step).unwrap();
    writeln!(hdr, "stride {}", out.trace_stride).unwrap();
    writeln!(hdr, "blocks {}", out.energy_blocks.n_blocks).unwrap();
    writeln!(hdr, "min_energy {}", crate::util::fmt_roundtrip(out.min_energy)).unwrap();
    let temps: Vec<String> = out.ladder.iter().map(|t| crate::util::fmt_roundtrip(*t)).collect();
    writeln!(hdr, "ladder {}", temps.join(" ")).unwrap();
    w_u32(w, hdr.len() as u32)?;
    w.write_all(hdr.as_bytes())?;

    for t in &out.traces {
        w_u64(w, t.slots.len() as u64)?;
        w.write_all(&t.slots)?;
    }
    for s in &out.energy_blocks.sums {
        w_f64(w, *s)?;
    }
    for c in &out.energy_blocks.counts {
        w_u64(w, *c)?;
    }
    w_u64(w, out.snapshots.len() as u64)?;
    for s in &out.snapshots {
        w_u64(w, s.step)?;
        w_u32(w, s.replica)?;
        w_u32(w, s.copy)?;
        w.write_all(&[s.slot])?;
        w_u32(w, s.words.len() as u32)?;
        for word in &s.words {
            w_u64(w, *word)?;
        }
    }
    let n_cfg_words = (out.n_sites as usize).div_ceil(64);
    for (i, cfg) in out.final_state.configs.iter().enumerate() {
        w.write_all(&[out.final_state.slot_of[i]])?;
        w_f64(w, out.final_state.energies[i])?;
        let words = cfg.to_words();
        assert_eq!(words.len(), n_cfg_words);
        for word in words {
            w_u64(w, word)?;
        }
    }
    Ok(())
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn read_run(r: &mut impl Read) -> io::Result<RunOutput> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a SPINPT1 run dump"));
    }
    let hlen = r_u32(r)? as usize;
    let mut hbytes = vec![0u8; hlen];
    r.read_exact(&mut hbytes)?;
    let hdr = String::from_utf8(hbytes).map_err(|_| bad("header not UTF-8"))?;
    let mut instance_id = String::new();
    let mut seed = 0u64;
    let mut lane = 0u32;
    let mut replicas = 0u32;
    let mut n_t = 0u32;
    let mut n_sites = 0u32;
    let mut steps = 0u64;
    let mut sweeps_per_step = 0u32;
    let mut stride = 1u64;
    let mut blocks = 0usize;
    let mut min_energy = f64::INFINITY;
    let mut ladder = Vec::new();
    for line in hdr.lines() {
        let mut toks = line.split_whitespace();
        let key = match toks.next() {
            Some(k) => k,
            None => continue,
        };
        let rest: Vec<&str> = toks.collect();
        let one = || rest.first().copied().ok_or_else(|| bad(format!("header `{key}` empty")));
        match key {
            "instance" => instance_id = one()?.to_string(),
            "seed" => seed = one()?.parse().map_err(|_| bad("bad seed"))?,
            "lane" => lane = one()?.parse().map_err(|_| bad("bad lane"))?,
            "replicas" => replicas = one()?.parse().map_err(|_| bad("bad replicas"))?,
            "n_t" => n_t = one()?.parse().map_err(|_| bad("bad n_t"))?,
            "n_sites" => n_sites = one()?.parse().map_err(|_| bad("bad n_sites"))?,
            "steps" => steps = one()?.parse().map_err(|_| bad("bad steps"))?,
            "sweeps_per_step" => {
                sweeps_per_step = one()?.parse().map_err(|_| bad("bad sweeps_per_step"))?
            }
            "stride" => stride = one()?.parse().map_err(|_| bad("bad stride"))?,
            "blocks" => blocks = one()?.parse().map_err(|_| bad("bad blocks"))?,
            "min_energy" => min_energy = one()?.parse().map_err(|_| bad("bad min_energy"))?,
            "ladder" => {
                for t in rest {
                    ladder.push(t.parse().map_err(|_| bad("bad ladder value"))?);
                }
            }
            _ => return Err(bad(format!("unknown header key `{key}`"))),
        }
    }
    if n_t == 0 || replicas == 0 || ladder.len() != n_t as usize {
        return Err(bad("incomplete header"));
    }
    let copies = (replicas * n_t) as usize;
    let mut traces = Vec::with_capacity(copies);
    for i in 0..copies {
        let len = r_u64(r)? as usize;
        let mut slots = vec![0u8; len];
        r.read_exact(&mut slots)?;
        traces.push(WalkTrace {
            replica: i as u32 / n_t,
            copy: i as u32 % n_t,
            n_t,
            slots,
            stride_steps: stride,
            sweeps_per_step,
        });
    }
    let mut sums = vec![0.0; n_t as usize * blocks];
    for s in sums.iter_mut() {
        *s = r_f64(r)?;
    }
    let mut counts = vec![0u64; blocks];
    for c in counts.iter_mut() {
        *c = r_u64(r)?;
    }
    let n_snaps = r_u64(r)? as usize;
    let mut snapshots = Vec::with_capacity(n_snaps);
    for _ in 0..n_snaps {
        let step = r_u64(r)?;
        let replica = r_u32(r)?;
        let copy = r_u32(r)?;
        let mut slot = [0u8; 1];
        r.read_exact(&mut slot)?;
        let n_words = r_u32(r)? as usize;
        let mut words = vec![0u64; n_words];
        for word in words.iter_mut() {
            *word = r_u64(r)?;
        }
        snapshots.push(Snapshot { step, replica, copy, slot: slot[0], words });
    }
    let n_cfg_words = (n_sites as usize).div_ceil(64);
    let mut configs = Vec::with_capacity(copies);
    let mut slot_of = Vec::with_capacity(copies);
    let mut energies = Vec::with_capacity(copies);
    for _ in 0..copies {
        let mut slot = [0u8; 1];
        r.read_exact(&mut slot)?;
        slot_of.push(slot[0]);
        energies.push(r_f64(r)?);
        let mut words = vec![0u64; n_cfg_words];
        for word in words.iter_mut() {
            *word = r_u64(r)?;
        }
        configs.push(SpinConfig::from_words(&words, n_sites as usize));
    }
    Ok(RunOutput {
        instance_id,
        master_seed: seed,
        lane,
        replicas,
        n_t,
        n_sites,
        steps,
        sweeps_per_step,
        trace_stride: stride,
        ladder,
        traces,
        energy_blocks: EnergyBlocks { n_t: n_t as usize, n_blocks: blocks, sums, counts },
        snapshots,
        min_energy,
        final_state: ReplicaSet {
            n_t: n_t as usize,
            replicas: replicas as usize,
            configs,
            slot_of,
            energies,
        },
    })
}

#[cfg(test)]
mod tests {
    use crate::chimera::{build_chimera, generate_instance};
    use crate::engine::{default_ladder, run_one, RunConfig};
    use std::collections::BTreeSet;
    use std::sync::Arc;

    #[test]
    fn dump_roundtrip() {
        let g = Arc::new(build_chimera(1, 1, 4, &BTreeSet::new()).unwrap());
        let inst = generate_instance(g, 4);
        let ladder = default_ladder();
        let mut cfg = RunConfig::new(20, 11);
        cfg.checkpoints = 10;
        cfg.store_configs = true;
        let out = run_one(&inst, &ladder, &cfg).unwrap();
        let mut buf = Vec::new();
        super::write_run(&mut buf, &out).unwrap();
        let back = super::read_run(&mut buf.as_slice()).unwrap();
        assert_eq!(back.instance_id, out.instance_id);
        assert_eq!(back.final_state, out.final_state);
        assert_eq!(back.energy_blocks.sums, out.energy_blocks.sums);
        assert_eq!(back.snapshots.len(), out.snapshots.len());
        assert_eq!(
            back.traces.iter().map(|t| t.slots.clone()).collect::<Vec<_>>(),
            out.traces.iter().map(|t| t.slots.clone()).collect::<Vec<_>>()
        );
        assert_eq!(back.min_energy, out.min_energy);
    }
}
