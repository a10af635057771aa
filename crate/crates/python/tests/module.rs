use pyo3::prelude::*;
use pyo3::types::PyModule;

fn with_module<F: FnOnce(&Bound<'_, PyModule>)>(f: F) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "zsc").unwrap();
        zsc::zsc(&m).unwrap();
        f(&m);
    });
}

#[test]
fn functions_are_exported() {
    with_module(|m| {
        let hm: f64 = m.getattr("harmonic_mean").unwrap().call1((7.3, 19.2)).unwrap().extract().unwrap();
        assert!((hm - 10.578_113_2).abs() < 1e-6);
        let r: f64 = m
            .getattr("rouge_l")
            .unwrap()
            .call1(("a b c d", vec!["a c b d"]))
            .unwrap()
            .extract()
            .unwrap();
        assert_eq!(r, 0.75);
        assert!(m.getattr("Experiment").is_ok());
    });
}

#[test]
fn core_errors_become_python_exceptions() {
    with_module(|m| {
        let err = m.getattr("harmonic_mean").unwrap().call1((-1.0, 1.0)).unwrap_err();
        Python::attach(|py| {
            let ty = m.getattr("ZscError").unwrap();
            assert!(err.get_type(py).is(&ty));
        });
    });
}
