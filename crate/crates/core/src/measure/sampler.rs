//! Periodic (third-person) counter sampling.

use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::RunClock;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CounterKind {
    /// Never decreases (event counts).
    Monotonic,
    /// Instantaneous level.
    Gauge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterSample {
    pub name: String,
    pub timestamp_ns: u64,
    pub value: f64,
}

/// Something the sampler can poll.
pub trait CounterSource: Send {
    fn name(&self) -> &str;

    fn kind(&self) -> CounterKind;

    /// Whether the platform exposes this counter at all.
    fn available(&self) -> bool {
        true
    }

    /// Reads the counter. `now_ns` is the run-clock timestamp the sample
    /// will carry. `None` skips this tick.
    fn sample(&mut self, now_ns: u64) -> Option<f64>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceStatus {
    pub name: String,
    pub kind: CounterKind,
    pub available: bool,
}

/// In-memory sample store: one writer (the sampler) plus readers.
#[derive(Default)]
pub struct CounterStore {
    samples: Mutex<Vec<CounterSample>>,
    sources: Mutex<Vec<SourceStatus>>,
}

impl CounterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, sample: CounterSample) {
        self.samples.lock().unwrap().push(sample);
    }

    pub fn samples(&self) -> Vec<CounterSample> {
        self.samples.lock().unwrap().clone()
    }

    pub fn series(&self, name: &str) -> Vec<CounterSample> {
        self.samples
            .lock()
            .unwrap()
            .iter()
            .filter(|s| s.name == name)
            .cloned()
            .collect()
    }

    pub fn first_value(&self, name: &str) -> Option<f64> {
        self.samples
            .lock()
            .unwrap()
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.value)
    }

    pub fn last_value(&self, name: &str) -> Option<f64> {
        self.samples
            .lock()
            .unwrap()
            .iter()
            .rev()
            .find(|s| s.name == name)
            .map(|s| s.value)
    }

    pub fn sources(&self) -> Vec<SourceStatus> {
        self.sources.lock().unwrap().clone()
    }

    pub fn kind_of(&self, name: &str) -> Option<CounterKind> {
        self.sources
            .lock()
            .unwrap()
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.kind)
    }

    fn register(&self, status: SourceStatus) {
        self.sources.lock().unwrap().push(status);
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SamplerError {
    #[error("sampling period must be at least 1 ms (got {0:?})")]
    PeriodTooShort(Duration),
}

type SampleSink = Arc<dyn Fn(&CounterSample, CounterKind) + Send + Sync>;

pub struct SamplerBuilder {
    period: Duration,
    sources: Vec<Box<dyn CounterSource>>,
    clock: RunClock,
    store: Arc<CounterStore>,
    sink: Option<SampleSink>,
}

impl SamplerBuilder {
    pub fn new(period: Duration, clock: RunClock) -> Self {
        Self {
            period,
            sources: Vec::new(),
            clock,
            store: Arc::new(CounterStore::new()),
            sink: None,
        }
    }

    pub fn source(mut self, source: Box<dyn CounterSource>) -> Self {
        self.sources.push(source);
        self
    }

    pub fn sources(mut self, sources: impl IntoIterator<Item = Box<dyn CounterSource>>) -> Self {
        self.sources.extend(sources);
        self
    }

    pub fn store(mut self, store: Arc<CounterStore>) -> Self {
        self.store = store;
        self
    }

    /// Also hands every sample to `sink` (e.g. a trace writer).
    pub fn sink(
        mut self,
        sink: impl Fn(&CounterSample, CounterKind) + Send + Sync + 'static,
    ) -> Self {
        self.sink = Some(Arc::new(sink));
        self
    }

    pub fn start(self) -> Result<SamplerHandle, SamplerError> {
        start_sampler_with(self)
    }
}

/// Starts a sampling thread that polls every available source once right
/// away, then once per `period`, and a final time when stopped.
pub fn start_sampler(
    period: Duration,
    sources: Vec<Box<dyn CounterSource>>,
    clock: RunClock,
) -> Result<SamplerHandle, SamplerError> {
    SamplerBuilder::new(period, clock).sources(sources).start()
}

fn start_sampler_with(b: SamplerBuilder) -> Result<SamplerHandle, SamplerError> {
    if b.period < Duration::from_millis(1) {
        return Err(SamplerError::PeriodTooShort(b.period));
    }
    let mut active = Vec::new();
    for s in b.sources {
        let available = s.available();
        b.store.register(SourceStatus {
            name: s.name().to_owned(),
            kind: s.kind(),
            available,
        });
        if available {
            active.push(s);
        } else {
            log::warn!(
                "counter source `{}` is unavailable on this platform",
                s.name()
            );
        }
    }
    if active.is_empty() {
        log::warn!("sampler started without any available counter source");
    }
    let stop = Arc::new((Mutex::new(false), Condvar::new()));
    let store = b.store.clone();
    let (period, clock, sink) = (b.period, b.clock, b.sink);
    let stop2 = stop.clone();
    let thread = thread::Builder::new()
        .name("counter-sampler".into())
        .spawn(move || sampler_loop(period, clock, active, &store, sink, &stop2))
        .expect("failed to spawn sampler thread");
    Ok(SamplerHandle {
        store: b.store,
        stop,
        thread: Some(thread),
    })
}

fn sampler_loop(
    period: Duration,
    clock: RunClock,
    mut sources: Vec<Box<dyn CounterSource>>,
    store: &CounterStore,
    sink: Option<SampleSink>,
    stop: &(Mutex<bool>, Condvar),
) -> u64 {
    let mut taken = 0;
    let mut poll = |sources: &mut Vec<Box<dyn CounterSource>>| {
        let now = clock.now_ns();
        for s in sources.iter_mut() {
            if let Some(value) = s.sample(now) {
                let sample = CounterSample {
                    name: s.name().to_owned(),
                    timestamp_ns: now,
                    value,
                };
                if let Some(sink) = &sink {
                    sink(&sample, s.kind());
                }
                store.push(sample);
                taken += 1;
            }
        }
    };
    poll(&mut sources);
    let start = Instant::now();
    let mut tick: u32 = 1;
    let (lock, cv) = stop;
    loop {
        let deadline = start + period * tick;
        let mut stopped = lock.lock().unwrap();
        while !*stopped {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            stopped = cv.wait_timeout(stopped, deadline - now).unwrap().0;
        }
        let done = *stopped;
        drop(stopped);
        // Final flush on stop, otherwise a regular tick.
        poll(&mut sources);
        if done {
            break;
        }
        // Skip ticks that were missed entirely.
        let elapsed = start.elapsed();
        tick = (elapsed.as_nanos() / period.as_nanos()) as u32 + 1;
    }
    taken
}

pub struct SamplerHandle {
    store: Arc<CounterStore>,
    stop: Arc<(Mutex<bool>, Condvar)>,
    thread: Option<JoinHandle<u64>>,
}

impl SamplerHandle {
    pub fn store(&self) -> &Arc<CounterStore> {
        &self.store
    }

    /// Stops sampling after one final sample per source; returns the store.
    pub fn stop(mut self) -> Arc<CounterStore> {
        self.shutdown();
        self.store.clone()
    }

    fn shutdown(&mut self) {
        if let Some(t) = self.thread.take() {
            *self.stop.0.lock().unwrap() = true;
            self.stop.1.notify_all();
            let _ = t.join();
        }
    }
}

impl Drop for SamplerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// A source backed by a closure; handy for custom runtime gauges.
pub struct FnSource<F> {
    name: String,
    kind: CounterKind,
    f: F,
}

impl<F: FnMut(u64) -> Option<f64> + Send> FnSource<F> {
    pub fn new(name: impl Into<String>, kind: CounterKind, f: F) -> Self {
        Self {
            name: name.into(),
            kind,
            f,
        }
    }
}

impl<F: FnMut(u64) -> Option<f64> + Send> CounterSource for FnSource<F> {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> CounterKind {
        self.kind
    }

    fn sample(&mut self, now_ns: u64) -> Option<f64> {
        (self.f)(now_ns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Unavailable;

    impl CounterSource for Unavailable {
        fn name(&self) -> &str {
            "nothing"
        }
        fn kind(&self) -> CounterKind {
            CounterKind::Gauge
        }
        fn available(&self) -> bool {
            false
        }
        fn sample(&mut self, _: u64) -> Option<f64> {
            Some(0.0)
        }
    }

    #[test]
    fn rejects_sub_millisecond_period() {
        let r = start_sampler(Duration::from_micros(500), Vec::new(), RunClock::new());
        assert!(matches!(r, Err(SamplerError::PeriodTooShort(_))));
    }

    #[test]
    fn constant_source_and_unavailable_source() {
        let sources: Vec<Box<dyn CounterSource>> = vec![
            Box::new(FnSource::new("seven", CounterKind::Gauge, |_| Some(7.0))),
            Box::new(Unavailable),
        ];
        let h = start_sampler(Duration::from_millis(5), sources, RunClock::new()).unwrap();
        thread::sleep(Duration::from_millis(30));
        let store = h.stop();
        let seven = store.series("seven");
        assert!(seven.len() >= 3);
        assert!(seven.iter().all(|s| s.value == 7.0));
        assert!(seven
            .windows(2)
            .all(|w| w[0].timestamp_ns <= w[1].timestamp_ns));
        assert!(store.series("nothing").is_empty());
        let status = store.sources();
        assert!(
            !status
                .iter()
                .find(|s| s.name == "nothing")
                .unwrap()
                .available
        );
    }

    #[test]
    fn no_sources_still_runs() {
        let h = start_sampler(Duration::from_millis(1), Vec::new(), RunClock::new()).unwrap();
        assert!(h.stop().samples().is_empty());
    }
}
