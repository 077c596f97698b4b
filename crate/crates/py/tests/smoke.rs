use std::ffi::CString;

use aflow::aflow_module;
use pyo3::prelude::*;

/// Runs python/smoke_test.py against the module registered in an embedded
/// interpreter, so the bindings are exercised without a wheel build.
#[test]
fn python_smoke_script() {
    pyo3::append_to_inittab!(aflow_module);
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/python/smoke_test.py");
    let source = CString::new(std::fs::read_to_string(path).unwrap()).unwrap();
    Python::attach(|py| {
        let module = PyModule::from_code(py, &source, c"smoke_test.py", c"smoke_test").unwrap();
        if let Err(e) = module.getattr("main").unwrap().call0() {
            e.print(py);
            panic!("smoke test failed: {e}");
        }
    });
}
