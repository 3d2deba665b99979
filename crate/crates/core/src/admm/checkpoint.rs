//! `CPACRUN1` clustering-stage checkpoints.
//!
//! Layout (little-endian): magic; `u64` seed; `u64` completed epochs;
//! `u32` n; `u32` dim(Z); `f64` λ; `f64` dual step; schedule as `f64` μ1,
//! μ2, δ1, δ2, `u32` interval, `u64` schedule epoch; `U` then `ϑ` as
//! row-major `f64`; then the U optimizer followed by the network optimizer.
//!
//! An optimizer is `u8` kind (0 Adam, 1 RMSProp), `f64` learning rate,
//! `f64` epsilon, two `f64` hyperparameters (β1, β2 or decay, 0), `u64`
//! step, `u32` tensor count and per tensor a `u32` length followed by the
//! first moments (Adam only) and the second moments.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::state::AdmmState;
use crate::binio::*;
use crate::error::{Error, Result};
use crate::nn::{Optimizer, OptimizerKind};
use crate::penalty::PenaltySchedule;

pub const RUN_MAGIC: &[u8; 8] = b"CPACRUN1";

fn write_optimizer<W: Write>(w: &mut W, opt: &Optimizer) -> Result<()> {
    let (tag, h1, h2) = match opt.kind {
        OptimizerKind::Adam { beta1, beta2 } => (0u8, beta1, beta2),
        OptimizerKind::RmsProp { decay } => (1u8, decay, 0.0),
    };
    w.write_all(&[tag])?;
    write_f64(w, opt.learning_rate)?;
    write_f64(w, opt.epsilon)?;
    write_f64(w, h1)?;
    write_f64(w, h2)?;
    write_u64(w, opt.steps())?;
    let second = opt.second_moments();
    write_len(w, second.len(), "tensor count")?;
    for (t, v) in second.iter().enumerate() {
        write_len(w, v.len(), "tensor length")?;
        if tag == 0 {
            write_f64s(w, &opt.first_moments()[t])?;
        }
        write_f64s(w, v)?;
    }
    Ok(())
}

fn read_optimizer<R: Read>(r: &mut R) -> Result<Optimizer> {
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)
        .map_err(|_| Error::Format("truncated optimizer kind".into()))?;
    let lr = read_f64(r, "learning rate")?;
    let eps = read_f64(r, "epsilon")?;
    let h1 = read_f64(r, "hyperparameter")?;
    let h2 = read_f64(r, "hyperparameter")?;
    let kind = match tag[0] {
        0 => OptimizerKind::Adam {
            beta1: h1,
            beta2: h2,
        },
        1 => OptimizerKind::RmsProp { decay: h1 },
        t => return Err(Error::Format(format!("unknown optimizer kind {t}"))),
    };
    let step = read_u64(r, "optimizer step")?;
    let count = read_u32(r, "tensor count")? as usize;
    let mut first = Vec::new();
    let mut second = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(r, "tensor length")? as usize;
        if tag[0] == 0 {
            first.push(read_f64s(r, len, "first moments")?);
        }
        second.push(read_f64s(r, len, "second moments")?);
    }
    Ok(Optimizer::from_parts(kind, lr, eps, step, first, second))
}

pub fn write_run<W: Write>(w: &mut W, state: &AdmmState) -> Result<()> {
    w.write_all(RUN_MAGIC)?;
    write_u64(w, state.seed)?;
    write_u64(w, state.epoch as u64)?;
    let (n, dz) = state.u.dim();
    write_len(w, n, "rows")?;
    write_len(w, dz, "cols")?;
    write_f64(w, state.lambda)?;
    write_f64(w, state.dual_step)?;
    let s = &state.schedule;
    for v in [s.mu1, s.mu2, s.delta1, s.delta2] {
        write_f64(w, v)?;
    }
    write_len(w, s.update_interval, "interval")?;
    write_u64(w, s.epoch as u64)?;
    write_f64s(
        w,
        state
            .u
            .as_standard_layout()
            .as_slice()
            .expect("standard layout"),
    )?;
    write_f64s(
        w,
        state
            .dual
            .as_standard_layout()
            .as_slice()
            .expect("standard layout"),
    )?;
    write_optimizer(w, &state.u_optimizer)?;
    write_optimizer(w, &state.net_optimizer)?;
    Ok(())
}

pub fn read_run<R: Read>(r: &mut R) -> Result<AdmmState> {
    read_magic(r, RUN_MAGIC)?;
    let seed = read_u64(r, "seed")?;
    let epoch = read_u64(r, "epoch")? as usize;
    let n = read_u32(r, "rows")? as usize;
    let dz = read_u32(r, "cols")? as usize;
    let lambda = read_f64(r, "lambda")?;
    let dual_step = read_f64(r, "dual step")?;
    let mu1 = read_f64(r, "mu1")?;
    let mu2 = read_f64(r, "mu2")?;
    let delta1 = read_f64(r, "delta1")?;
    let delta2 = read_f64(r, "delta2")?;
    let update_interval = read_u32(r, "interval")? as usize;
    let sched_epoch = read_u64(r, "schedule epoch")? as usize;
    let shape_err = |e: ndarray::ShapeError| Error::Format(e.to_string());
    let u = Array2::from_shape_vec((n, dz), read_f64s(r, n * dz, "U")?).map_err(shape_err)?;
    let dual = Array2::from_shape_vec((n, dz), read_f64s(r, n * dz, "dual")?).map_err(shape_err)?;
    let u_optimizer = read_optimizer(r)?;
    let net_optimizer = read_optimizer(r)?;
    expect_eof(r)?;
    Ok(AdmmState {
        u,
        dual,
        dual_step,
        schedule: PenaltySchedule {
            mu1,
            mu2,
            delta1,
            delta2,
            update_interval,
            epoch: sched_epoch,
        },
        lambda,
        epoch,
        u_optimizer,
        net_optimizer,
        seed,
    })
}

pub fn save_run(path: &Path, state: &AdmmState) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_run(&mut w, state)?;
    w.flush()?;
    Ok(())
}

pub fn load_run(path: &Path) -> Result<AdmmState> {
    read_run(&mut BufReader::new(File::open(path)?))
}
