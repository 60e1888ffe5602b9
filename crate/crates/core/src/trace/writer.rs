//! Background JSON-lines trace writer.
//!
//! Producers hand records to a dedicated writer thread through a bounded
//! channel. When the channel is full, counter samples are dropped (and
//! counted) while task records wait for space.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use serde::{Deserialize, Serialize};

use super::record::{CounterRecord, MetaRecord, TaskRecord, TraceRecord};

pub const DEFAULT_CAPACITY: usize = 16 * 1024;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStats {
    pub tasks_written: u64,
    pub counters_written: u64,
    pub counters_dropped: u64,
    /// First I/O error; tracing stopped at that point.
    pub error: Option<String>,
}

#[derive(Default)]
struct Counters {
    dropped: AtomicU64,
    /// Records refused because the writer thread is gone.
    lost: AtomicU64,
}

/// Cloneable producer side of a trace.
enum Msg {
    Record(TraceRecord),
    Close,
}

#[derive(Clone)]
pub struct TraceSender {
    tx: SyncSender<Msg>,
    counters: Arc<Counters>,
}

impl TraceSender {
    pub fn task(&self, rec: TaskRecord) {
        if self.tx.send(Msg::Record(TraceRecord::Task(rec))).is_err() {
            self.counters.lost.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn counter(&self, rec: CounterRecord) {
        match self.tx.try_send(Msg::Record(TraceRecord::Counter(rec))) {
            Ok(()) => {}
            Err(TrySendError::Full(_)) => {
                self.counters.dropped.fetch_add(1, Ordering::Relaxed);
            }
            Err(TrySendError::Disconnected(_)) => {
                self.counters.lost.fetch_add(1, Ordering::Relaxed);
            }
        }
    }
}

pub struct TraceWriter {
    path: PathBuf,
    sender: Option<TraceSender>,
    close: Option<SyncSender<Msg>>,
    counters: Arc<Counters>,
    thread: Option<JoinHandle<TraceStats>>,
}

impl TraceWriter {
    /// Creates the file and writes the meta line synchronously.
    pub fn create(path: impl AsRef<Path>, meta: MetaRecord) -> io::Result<Self> {
        Self::with_capacity(path, meta, DEFAULT_CAPACITY)
    }

    pub fn with_capacity(
        path: impl AsRef<Path>,
        meta: MetaRecord,
        capacity: usize,
    ) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "{}", TraceRecord::Meta(meta).to_line())?;
        out.flush()?;
        let (tx, rx) = mpsc::sync_channel(capacity.max(1));
        let counters = Arc::new(Counters::default());
        let close = tx.clone();
        let thread = thread::Builder::new()
            .name("trace-writer".into())
            .spawn(move || write_loop(out, rx))?;
        Ok(Self {
            path,
            sender: Some(TraceSender {
                tx,
                counters: counters.clone(),
            }),
            close: Some(close),
            counters,
            thread: Some(thread),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn sender(&self) -> TraceSender {
        self.sender.clone().expect("trace writer already finished")
    }

    /// Writes everything sent so far, closes the file and returns totals.
    /// Records sent afterwards through surviving senders are lost and
    /// reported in `error`.
    pub fn finish(mut self) -> TraceStats {
        self.finish_inner()
    }

    fn finish_inner(&mut self) -> TraceStats {
        self.sender = None;
        if let Some(close) = self.close.take() {
            let _ = close.send(Msg::Close);
        }
        let mut stats = match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| TraceStats {
                error: Some("trace writer thread panicked".into()),
                ..TraceStats::default()
            }),
            None => TraceStats::default(),
        };
        stats.counters_dropped = self.counters.dropped.load(Ordering::Relaxed);
        let lost = self.counters.lost.load(Ordering::Relaxed);
        if lost > 0 && stats.error.is_none() {
            stats.error = Some(format!("{lost} records arrived after the writer stopped"));
        }
        stats
    }
}

impl Drop for TraceWriter {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.finish_inner();
        }
    }
}

fn write_loop(mut out: BufWriter<File>, rx: Receiver<Msg>) -> TraceStats {
    let mut stats = TraceStats::default();
    let mut failed = false;
    let mut write = |rec: TraceRecord, stats: &mut TraceStats, out: &mut BufWriter<File>| {
        if failed {
            return;
        }
        let is_task = matches!(rec, TraceRecord::Task(_));
        match writeln!(out, "{}", rec.to_line()) {
            Ok(()) => {
                if is_task {
                    stats.tasks_written += 1;
                } else {
                    stats.counters_written += 1;
                }
            }
            Err(e) => {
                log::error!("trace write failed, tracing disabled: {e}");
                stats.error = Some(e.to_string());
                failed = true;
            }
        }
    };
    let mut open = true;
    while open {
        let Ok(msg) = rx.recv() else { break };
        let mut next = Some(msg);
        // Drain what is already queued, then flush so the file stays valid
        // up to the last complete line.
        while let Some(msg) = next.take() {
            match msg {
                Msg::Record(rec) => write(rec, &mut stats, &mut out),
                Msg::Close => {
                    open = false;
                    break;
                }
            }
            next = rx.try_recv().ok();
        }
        if let Err(e) = out.flush() {
            if stats.error.is_none() {
                stats.error = Some(e.to_string());
            }
        }
    }
    drop(rx);
    if let Err(e) = out.flush() {
        if stats.error.is_none() {
            stats.error = Some(e.to_string());
        }
    }
    stats
}

/// Writes a complete trace in one go.
pub fn write_trace<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a TraceRecord>,
) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        writeln!(out, "{}", r.to_line())?;
    }
    out.flush()
}
