use std::fmt::Write as _;

/// Metrics recorded at the end of one epoch. Accuracy and IoU figures are
/// from infer-mode passes over each split.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches, weighted by batch size.
    pub loss: f64,
    pub train_acc: f64,
    pub train_miou: f64,
    pub val_acc: f64,
    pub val_miou: f64,
    /// Wall time of the epoch. Not stored in checkpoints.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    entries: Vec<HistoryEntry>,
}

pub const CSV_HEADER: &str = "epoch,loss,train_acc,train_miou,val_acc,val_miou,seconds";

impl History {
    pub fn push(&mut self, entry: HistoryEntry) {
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&HistoryEntry> {
        self.entries.last()
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", CSV_HEADER);
        for e in &self.entries {
            writeln!(
                out,
                "{},{:.8},{:.6},{:.6},{:.6},{:.6},{:.3}",
                e.epoch, e.loss, e.train_acc, e.train_miou, e.val_acc, e.val_miou, e.seconds
            )
            .unwrap();
        }
        out
    }

    /// Little-endian: u32 count, then per entry u32 epoch and five f64
    /// metrics. Wall time is left out so that identical runs produce
    /// identical bytes.
    pub(crate) fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.epoch as u32).to_le_bytes());
            for v in [e.loss, e.train_acc, e.train_miou, e.val_acc, e.val_miou] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }

    pub(crate) fn decode(bytes: &[u8]) -> Option<History> {
        let n = u32::from_le_bytes(bytes.get(..4)?.try_into().ok()?) as usize;
        const ENTRY: usize = 4 + 5 * 8;
        if bytes.len() != 4 + n * ENTRY {
            return None;
        }
        let entries = bytes[4..]
            .chunks_exact(ENTRY)
            .map(|c| {
                let f = |i: usize| f64::from_le_bytes(c[4 + 8 * i..12 + 8 * i].try_into().unwrap());
                HistoryEntry {
                    epoch: u32::from_le_bytes(c[..4].try_into().unwrap()) as usize,
                    loss: f(0),
                    train_acc: f(1),
                    train_miou: f(2),
                    val_acc: f(3),
                    val_miou: f(4),
                    seconds: 0.0,
                }
            })
            .collect();
        Some(History { entries })
    }
}
