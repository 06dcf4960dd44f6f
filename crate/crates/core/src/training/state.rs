use thiserror::Error;

use super::LossRecord;

const STATE_MAGIC: &[u8; 4] = b"NRFS";
const STATE_VERSION: u32 = 1;

/// Full-precision snapshot sufficient to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub step: u64,
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub history: Vec<LossRecord>,
}

#[derive(Debug, Error)]
pub enum StateError {
    #[error("not a training state file")]
    BadMagic,
    #[error("unsupported training state version {0}")]
    Version(u32),
    #[error("training state is truncated")]
    Truncated,
}

pub fn write_state(state: &TrainState) -> Vec<u8> {
    let n = state.params.len();
    let mut out = Vec::with_capacity(32 + 24 * n + 40 * state.history.len());
    out.extend_from_slice(STATE_MAGIC);
    out.extend_from_slice(&STATE_VERSION.to_le_bytes());
    out.extend_from_slice(&(state.epoch as u64).to_le_bytes());
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for block in [&state.params, &state.m, &state.v] {
        assert_eq!(block.len(), n, "state vectors must share one length");
        for x in block.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out.extend_from_slice(&(state.history.len() as u64).to_le_bytes());
    for r in &state.history {
        out.extend_from_slice(&r.iteration.to_le_bytes());
        for x in [r.l_corr, r.l_ds, r.l_tol, r.lr] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], StateError> {
        if self.0.len() < N {
            return Err(StateError::Truncated);
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<u64, StateError> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, StateError> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, StateError> {
        if self.0.len() < n.saturating_mul(8) {
            return Err(StateError::Truncated);
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn read_state(bytes: &[u8]) -> Result<TrainState, StateError> {
    let mut r = Reader(bytes);
    if &r.take::<4>()? != STATE_MAGIC {
        return Err(StateError::BadMagic);
    }
    let version = u32::from_le_bytes(r.take()?);
    if version != STATE_VERSION {
        return Err(StateError::Version(version));
    }
    let epoch = r.u64()? as usize;
    let step = r.u64()?;
    let n = r.u64()? as usize;
    let params = r.f64s(n)?;
    let m = r.f64s(n)?;
    let v = r.f64s(n)?;
    let count = r.u64()? as usize;
    if r.0.len() < count.saturating_mul(40) {
        return Err(StateError::Truncated);
    }
    let mut history = Vec::with_capacity(count);
    for _ in 0..count {
        history.push(LossRecord {
            iteration: r.u64()?,
            l_corr: r.f64()?,
            l_ds: r.f64()?,
            l_tol: r.f64()?,
            lr: r.f64()?,
        });
    }
    Ok(TrainState {
        epoch,
        step,
        params,
        m,
        v,
        history,
    })
}
