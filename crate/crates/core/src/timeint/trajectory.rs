use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use super::IntegrationStats;
use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

const BINARY_MAGIC: &[u8; 8] = b"SMTRAJ01";

/// Time series of states with piecewise cubic Hermite dense output.
///
/// When derivatives are absent (e.g. data resampled from elsewhere) the dense
/// output is piecewise linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    times: Vec<T>,
    states: Vec<DVector<T>>,
    derivatives: Option<Vec<DVector<T>>>,
    pub stats: IntegrationStats,
}

impl<T: Real> Trajectory<T> {
    pub fn new(times: Vec<T>, states: Vec<DVector<T>>, derivatives: Option<Vec<DVector<T>>>) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() {
            return Err(Error::Dimension(format!(
                "{} times but {} states",
                times.len(),
                states.len()
            )));
        }
        if let Some(d) = &derivatives {
            if d.len() != times.len() {
                return Err(Error::Dimension("derivative count differs from time count".into()));
            }
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("trajectory times must increase strictly".into()));
        }
        let dim = states[0].len();
        if states.iter().any(|s| s.len() != dim) {
            return Err(Error::Dimension("states of differing length".into()));
        }
        if states.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "trajectory states".into(),
            });
        }
        Ok(Trajectory {
            times,
            states,
            derivatives,
            stats: IntegrationStats::default(),
        })
    }

    pub(crate) fn from_parts(
        times: Vec<T>,
        states: Vec<DVector<T>>,
        derivatives: Vec<DVector<T>>,
        stats: IntegrationStats,
    ) -> Self {
        Trajectory {
            times,
            states,
            derivatives: Some(derivatives),
            stats,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<T>] {
        &self.states
    }

    pub fn derivatives(&self) -> Option<&[DVector<T>]> {
        self.derivatives.as_deref()
    }

    pub fn start(&self) -> T {
        self.times[0]
    }

    pub fn end(&self) -> T {
        *self.times.last().expect("non-empty")
    }

    pub fn final_state(&self) -> &DVector<T> {
        self.states.last().expect("non-empty")
    }

    /// Number of accepted steps (grid points minus the initial one).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// States as columns of a `dim x len` matrix.
    pub fn snapshot_matrix(&self) -> DMatrix<T> {
        DMatrix::from_columns(&self.states)
    }

    /// Dense output at one time inside the span.
    pub fn at(&self, t: T) -> Result<DVector<T>> {
        let (start, end) = (self.start(), self.end());
        let slack = lit::<T>(1e-12) * (end - start).abs().max(T::one());
        if !(t >= start - slack && t <= end + slack) {
            return Err(Error::Extrapolation {
                t: to_f64(t),
                start: to_f64(start),
                end: to_f64(end),
            });
        }
        if self.times.len() == 1 {
            return Ok(self.states[0].clone());
        }
        let t = t.max(start).min(end);
        let idx = match self
            .times
            .binary_search_by(|probe| probe.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => return Ok(self.states[i].clone()),
            Err(i) => i.clamp(1, self.times.len() - 1),
        };
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (y0, y1) = (&self.states[idx - 1], &self.states[idx]);
        match &self.derivatives {
            Some(d) => {
                let s2 = s * s;
                let s3 = s2 * s;
                let two = lit::<T>(2.0);
                let three = lit::<T>(3.0);
                let h00 = two * s3 - three * s2 + T::one();
                let h10 = s3 - two * s2 + s;
                let h01 = -two * s3 + three * s2;
                let h11 = s3 - s2;
                Ok(y0 * h00 + &d[idx - 1] * (h10 * h) + y1 * h01 + &d[idx] * (h11 * h))
            }
            None => Ok(y0 * (T::one() - s) + y1 * s),
        }
    }

    /// Dense output at several times, as columns of a `dim x times.len()` matrix.
    pub fn interpolate(&self, times: &[T]) -> Result<DMatrix<T>> {
        let mut out = DMatrix::zeros(self.dim(), times.len());
        for (j, &t) in times.iter().enumerate() {
            out.set_column(j, &self.at(t)?);
        }
        Ok(out)
    }

    /// Resamples onto `times`, returning a trajectory without derivatives.
    pub fn resample(&self, times: &[T]) -> Result<Trajectory<T>> {
        let states = times.iter().map(|&t| self.at(t)).collect::<Result<Vec<_>>>()?;
        Trajectory::new(times.to_vec(), states, None)
    }

    /// Applies a linear map to every state (and derivative).
    pub fn map_linear(&self, map: &DMatrix<T>) -> Result<Trajectory<T>> {
        if map.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "map has {} columns, trajectory dimension {}",
                map.ncols(),
                self.dim()
            )));
        }
        Ok(Trajectory {
            times: self.times.clone(),
            states: self.states.iter().map(|s| map * s).collect(),
            derivatives: self.derivatives.as_ref().map(|d| d.iter().map(|s| map * s).collect()),
            stats: self.stats.clone(),
        })
    }

    /// CSV with a time column followed by one column per state component.
    pub fn write_csv<W: Write>(&self, mut out: W, labels: Option<&[String]>) -> Result<()> {
        let header: Vec<String> = match labels {
            Some(l) => l.to_vec(),
            None => (1..=self.dim()).map(|i| format!("x{i}")).collect(),
        };
        writeln!(out, "t,{}", header.join(","))?;
        for (t, s) in self.times.iter().zip(&self.states) {
            write!(out, "{:e}", to_f64(*t))?;
            for v in s.iter() {
                write!(out, ",{:e}", to_f64(*v))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Little-endian binary: magic, point count, dimension, derivative flag,
    /// then per point the time, the state and optionally the derivative.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        out.write_all(&(self.dim() as u64).to_le_bytes())?;
        out.write_all(&[u8::from(self.derivatives.is_some())])?;
        for i in 0..self.len() {
            out.write_all(&to_f64(self.times[i]).to_le_bytes())?;
            for v in self.states[i].iter() {
                out.write_all(&to_f64(*v).to_le_bytes())?;
            }
            if let Some(d) = &self.derivatives {
                for v in d[i].iter() {
                    out.write_all(&to_f64(*v).to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::InvalidArgument("not a trajectory file".into()));
        }
        let mut word = [0u8; 8];
        input.read_exact(&mut word)?;
        let len = u64::from_le_bytes(word) as usize;
        input.read_exact(&mut word)?;
        let dim = u64::from_le_bytes(word) as usize;
        let mut flag = [0u8; 1];
        input.read_exact(&mut flag)?;
        let read_f64 = |input: &mut R| -> Result<T> {
            let mut b = [0u8; 8];
            input.read_exact(&mut b)?;
            Ok(lit(f64::from_le_bytes(b)))
        };
        let mut times = Vec::with_capacity(len);
        let mut states = Vec::with_capacity(len);
        let mut derivs = Vec::new();
        for _ in 0..len {
            times.push(read_f64(&mut input)?);
            let s = (0..dim).map(|_| read_f64(&mut input)).collect::<Result<Vec<T>>>()?;
            states.push(DVector::from_vec(s));
            if flag[0] == 1 {
                let d = (0..dim).map(|_| read_f64(&mut input)).collect::<Result<Vec<T>>>()?;
                derivs.push(DVector::from_vec(d));
            }
        }
        Trajectory::new(times, states, (flag[0] == 1).then_some(derivs))
    }
}

/// `count` equidistant points covering `[start, end]` inclusive.
pub fn uniform_grid<T: Real>(start: T, end: T, count: usize) -> Vec<T> {
    if count == 1 {
        return vec![start];
    }
    let denom = lit::<T>((count - 1) as f64);
    (0..count)
        .map(|i| {
            if i + 1 == count {
                end
            } else {
                start + (end - start) * lit::<T>(i as f64) / denom
            }
        })
        .collect()
}
