//! The HTTP transport logs raw wire bytes, request headers included, at
//! TRACE level. Any logger installed next to this crate should be wrapped in
//! [`WireLogFilter`] so the api key cannot reach log output.

use log::{Level, Log, Metadata, Record};

/// Whether a record is an unredacted transport wire dump.
pub fn is_wire_dump(metadata: &Metadata) -> bool {
    metadata.level() == Level::Trace && metadata.target().starts_with("ureq")
}

/// Drops transport wire dumps and forwards everything else.
pub struct WireLogFilter<L> {
    inner: L,
}

impl<L: Log> WireLogFilter<L> {
    pub const fn new(inner: L) -> Self {
        WireLogFilter { inner }
    }
}

impl<L: Log> Log for WireLogFilter<L> {
    fn enabled(&self, metadata: &Metadata) -> bool {
        !is_wire_dump(metadata) && self.inner.enabled(metadata)
    }

    fn log(&self, record: &Record) {
        if !is_wire_dump(record.metadata()) {
            self.inner.log(record);
        }
    }

    fn flush(&self) {
        self.inner.flush();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_transport_trace_is_dropped() {
        let meta = |level, target| Metadata::builder().level(level).target(target).build();
        assert!(is_wire_dump(&meta(Level::Trace, "ureq_proto::util")));
        assert!(is_wire_dump(&meta(Level::Trace, "ureq::unversioned")));
        assert!(!is_wire_dump(&meta(Level::Debug, "ureq_proto::util")));
        assert!(!is_wire_dump(&meta(Level::Trace, "jointinf_remote::client")));
    }
}
