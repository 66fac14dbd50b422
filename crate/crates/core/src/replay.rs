//! Feedback journal CSV and replay.
//!
//! Columns: `event_type, txn_id, gateway, dimension, config, explored,
//! timestamp` (milliseconds). Replaying a journal into a loop built with the
//! same score-space parameters repeats the original calls one for one.

use std::io;

use crate::domain::{
    ConfigurationId, DimensionKey, GatewayId, OutcomeStatus, Timestamp, TxnId,
};
use crate::error::{Error, Result};
use crate::feedback::{EventKind, FeedbackEvent, FeedbackLoop, JournalRow, PendingTransaction};

pub fn write_journal<W: io::Write>(rows: &[JournalRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_journal<R: io::Read>(input: R) -> Result<Vec<JournalRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Replay(format!("row {}: {e}", i + 1))))
        .collect()
}

fn field<T>(row: usize, name: &str, parsed: Result<T>) -> Result<T> {
    parsed.map_err(|e| Error::Replay(format!("row {row}: {name}: {e}")))
}

/// Applies every row to `target` in order.
pub fn replay(rows: &[JournalRow], target: &mut FeedbackLoop) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        let row = i + 1;
        let at = Timestamp(r.timestamp);
        let key = || -> Result<(GatewayId, DimensionKey, ConfigurationId)> {
            Ok((
                field(row, "gateway", GatewayId::new(&r.gateway))?,
                field(row, "dimension", DimensionKey::parse(&r.dimension))?,
                field(row, "config", ConfigurationId::new(&r.config))?,
            ))
        };
        let txn = || field(row, "txn_id", TxnId::new(&r.txn_id));
        let outcome = match r.event_type {
            EventKind::Initiate => {
                let (g, d, c) = key()?;
                let p = PendingTransaction::new(txn()?, g, d, c, r.explored, at, target.config());
                target.register_initiation(p)
            }
            EventKind::InitFail => {
                let (g, d, c) = key()?;
                target
                    .register_init_failure(&txn()?, &g, &d, &c, r.explored, at)
                    .map(|_| ())
            }
            EventKind::Success | EventKind::Failure => {
                let kind = if r.event_type == EventKind::Success {
                    OutcomeStatus::Success
                } else {
                    OutcomeStatus::Failure
                };
                let ev = FeedbackEvent { txn: txn()?, kind, at };
                target.submit_feedback(&ev).map(|_| ())
            }
            EventKind::Tick => target.apply_timeouts(at).map(|_| ()),
            EventKind::Detect => {
                let (g, d, c) = key()?;
                target.detect(&c, &d, &g, at).map(|_| ())
            }
        };
        outcome.map_err(|e| Error::Replay(format!("row {row}: {e}")))?;
    }
    Ok(())
}
