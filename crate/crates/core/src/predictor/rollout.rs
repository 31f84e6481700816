//! Day-by-day rollout with a fixed-length context buffer.

use std::collections::VecDeque;

use chrono::{Days, NaiveDate};
use ndarray::{Array2, Array3};

use super::{driver_context, predict_day, Calendar, PredictorInput, PredictorSpec, StaticChannels};
use crate::error::{Error, Result};
use crate::raster::FieldStack;

/// The last `T_lag` fine fields, oldest first, ending at `current`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutState {
    buffer: VecDeque<Array2<f64>>,
    current: NaiveDate,
}

impl RolloutState {
    pub fn new(fields: Vec<Array2<f64>>, current: NaiveDate) -> Result<Self> {
        let first = fields.first().ok_or_else(|| Error::Empty("rollout state needs T_lag >= 1 fields".into()))?;
        if fields.iter().any(|f| f.dim() != first.dim()) {
            return Err(Error::ShapeMismatch("context fields differ in shape".into()));
        }
        Ok(Self { buffer: fields.into(), current })
    }

    /// Takes the `t_lag` consecutive days of `stack` ending at `end`.
    pub fn from_stack(stack: &FieldStack, end: NaiveDate, t_lag: usize) -> Result<Self> {
        if t_lag == 0 {
            return Err(Error::InvalidParameter("t_lag must be at least 1".into()));
        }
        let fields = (0..t_lag as u64)
            .rev()
            .map(|back| {
                let d = end - Days::new(back);
                stack
                    .date_index(d)
                    .map(|t| stack.day(t).to_owned())
                    .ok_or_else(|| Error::DateMismatch(format!("context day {d} missing")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(fields, end)
    }

    pub fn t_lag(&self) -> usize {
        self.buffer.len()
    }

    pub fn current_date(&self) -> NaiveDate {
        self.current
    }

    pub fn shape(&self) -> (usize, usize) {
        self.buffer[0].dim()
    }

    pub fn fields(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.buffer.iter()
    }

    pub fn newest(&self) -> &Array2<f64> {
        self.buffer.back().expect("non-empty")
    }

    /// Appends the field for the next day and drops the oldest.
    pub fn push(&mut self, field: Array2<f64>) -> Result<()> {
        if field.dim() != self.shape() {
            return Err(Error::ShapeMismatch(format!("field {:?} vs state {:?}", field.dim(), self.shape())));
        }
        self.buffer.pop_front();
        self.buffer.push_back(field);
        self.current = self.current + Days::new(1);
        Ok(())
    }
}

/// Where the context for each step comes from.
#[derive(Debug, Clone, Copy)]
pub enum ContextMode<'a> {
    /// Predictions re-enter the buffer.
    Autoregressive,
    /// True fields re-enter the buffer; the stack must hold every horizon day.
    Overlap(&'a FieldStack),
}

/// Predicts every driver day after the state's current date, in order.
/// Driver days must be consecutive; the driver stack may also hold the
/// context days, which then feed `driver_context_*` channels.
pub fn rollout(
    state: &mut RolloutState,
    drivers: &FieldStack,
    statics: &StaticChannels,
    calendar: &Calendar,
    spec: &PredictorSpec,
    mode: ContextMode<'_>,
) -> Result<FieldStack> {
    spec.validate()?;
    if state.t_lag() != spec.t_lag {
        return Err(Error::InvalidParameter(format!(
            "state holds {} fields, spec needs {}",
            state.t_lag(),
            spec.t_lag
        )));
    }
    if drivers.grid().shape() != state.shape() || statics.shape() != state.shape() {
        return Err(Error::ShapeMismatch("drivers, statics and state differ in shape".into()));
    }
    let horizon: Vec<NaiveDate> = drivers.dates().iter().copied().filter(|&d| d > state.current).collect();
    if horizon.is_empty() {
        return Err(Error::Empty(format!("no driver days after {}", state.current)));
    }
    for (k, &d) in horizon.iter().enumerate() {
        let want = state.current + Days::new(k as u64 + 1);
        if d != want {
            return Err(Error::DriverGap(format!("expected driver for {want}, found {d}")));
        }
    }
    if let ContextMode::Overlap(truth) = mode {
        if truth.grid().shape() != state.shape() {
            return Err(Error::ShapeMismatch("truth and state differ in shape".into()));
        }
        if let Some(d) = horizon.iter().find(|&&d| truth.date_index(d).is_none()) {
            return Err(Error::DateMismatch(format!("overlap truth lacks {d}")));
        }
    }

    let (h, w) = state.shape();
    let mut out = Array3::zeros((horizon.len(), h, w));
    for (k, &day) in horizon.iter().enumerate() {
        let t = drivers.date_index(day).expect("horizon day");
        let pred = {
            let input = PredictorInput {
                date: day,
                driver: drivers.day(t),
                statics,
                calendar: calendar.features(day),
                context: state.fields().map(|f| f.view()).collect(),
                driver_context: driver_context(drivers, day, spec.t_lag),
            };
            predict_day(&input, spec)?
        };
        out.index_axis_mut(ndarray::Axis(0), k).assign(&pred);
        let next = match mode {
            ContextMode::Autoregressive => pred,
            ContextMode::Overlap(truth) => truth.day(truth.date_index(day).expect("checked")).to_owned(),
        };
        state.push(next)?;
    }
    FieldStack::new(out, horizon, drivers.grid().clone(), drivers.space(), "prediction")
}
