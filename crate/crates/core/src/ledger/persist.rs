use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::state::LEDGER_FORMAT;
use super::{ChainRef, LedgerIoError, LedgerState, TxRecord, TxStatus};

/// Re-applies a transaction log from genesis, checking every outcome matches the record.
pub fn replay(chain: ChainRef, records: &[TxRecord]) -> Result<LedgerState, LedgerIoError> {
    let mut state = LedgerState::genesis(chain);
    for record in records {
        let outcome = state.apply_tx(record.tx.clone());
        let matches = match (&outcome, &record.status) {
            (Ok(receipt), TxStatus::Applied { receipt: logged }) => receipt == logged,
            (Err(e), TxStatus::Rejected { error }) => e.to_string() == *error,
            _ => false,
        };
        if !matches || state.log.last().map(|r| r.seq) != Some(record.seq) {
            return Err(LedgerIoError::ReplayDiverged {
                seq: record.seq,
                reason: format!("logged {:?}, replayed {:?}", record.status, outcome),
            });
        }
    }
    Ok(state)
}

/// Writes the state snapshot and appends any log records not yet in the JSONL file.
pub fn save_ledger(state: &LedgerState, state_path: &Path, log_path: &Path) -> Result<(), LedgerIoError> {
    let persisted = if log_path.exists() {
        BufReader::new(fs::File::open(log_path)?).lines().count()
    } else {
        0
    };
    if persisted > state.log.len() {
        return Err(LedgerIoError::ReplayDiverged {
            seq: state.log.len() as u64,
            reason: format!("log file holds {persisted} records but state has {}", state.log.len()),
        });
    }
    let mut log = OpenOptions::new().create(true).append(true).open(log_path)?;
    for record in &state.log[persisted..] {
        serde_json::to_writer(&mut log, record)?;
        log.write_all(b"\n")?;
    }
    let tmp = state_path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(state)?)?;
    fs::rename(tmp, state_path)?;
    Ok(())
}

/// Loads a snapshot and its log, refusing unknown formats and snapshots the log does not reproduce.
pub fn load_ledger(state_path: &Path, log_path: &Path) -> Result<LedgerState, LedgerIoError> {
    let snapshot: LedgerState = serde_json::from_slice(&fs::read(state_path)?)?;
    if snapshot.format != LEDGER_FORMAT {
        return Err(LedgerIoError::UnsupportedFormat(snapshot.format));
    }
    let mut records = Vec::new();
    if log_path.exists() {
        for line in BufReader::new(fs::File::open(log_path)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str::<TxRecord>(&line)?);
            }
        }
    }
    let replayed = replay(snapshot.chain.clone(), &records)?;
    if replayed.state_digest() != snapshot.state_digest() {
        return Err(LedgerIoError::ReplayDiverged {
            seq: records.len() as u64,
            reason: "snapshot does not match replayed log".into(),
        });
    }
    Ok(replayed)
}
