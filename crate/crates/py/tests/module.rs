//! The module imports into an embedded interpreter and round-trips core calls.

use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<R>(f: impl FnOnce(Python<'_>, &Bound<'_, PyModule>) -> PyResult<R>) -> R {
    static INIT: std::sync::Once = std::sync::Once::new();
    INIT.call_once(|| {
        pyo3::append_to_inittab!(hcla);
        Python::initialize();
    });
    Python::attach(|py| {
        let m = py.import("hcla")?;
        f(py, &m)
    })
    .unwrap()
}

use hcla::hcla;

#[test]
fn parse_returns_plain_dicts() {
    let kind: String = with_module(|py, m| {
        let kwargs = PyDict::new(py);
        kwargs.set_item("now", "2024-06-15T12:00:00+00:00")?;
        kwargs.set_item("wallet", "1BoatSLRHtKNngkdXEeobR76b53LETtpyT")?;
        let out = m.getattr("parse")?.call(("Analyze my wallet for the past week.",), Some(&kwargs))?;
        assert_eq!(out.get_item("intent")?.get_item("day_range")?.extract::<u32>()?, 7);
        out.get_item("intent")?.get_item("kind")?.extract()
    });
    assert_eq!(kind, "window_analysis");
}

#[test]
fn generate_and_bad_arguments() {
    with_module(|py, m| {
        let kwargs = PyDict::new(py);
        kwargs.set_item("n", 500)?;
        let data = m.getattr("generate")?.call((), Some(&kwargs))?;
        assert_eq!(data.len()?, 500);
        assert_eq!(data.getattr("anomalous")?.extract::<usize>()?, 89);

        kwargs.set_item("anomaly_rate", 2.0)?;
        let err = m.getattr("generate")?.call((), Some(&kwargs)).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py));

        let err = m.getattr("Model")?.call_method1("load", ("/nonexistent/model.json",)).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyRuntimeError>(py));
        Ok(())
    });
}
