#![no_main]

use libfuzzer_sys::fuzz_target;
use oal_core::ingest::{parse_report_line, parse_reports, report_line};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = parse_reports(text);
    if let Ok(report) = parse_report_line(text) {
        let line = report_line(&report);
        assert_eq!(parse_report_line(&line).unwrap(), report);
    }
});
