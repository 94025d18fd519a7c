use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(code: &str) {
    Python::initialize();
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(mitocount::mitocount)(py);
        let globals = PyDict::new(py);
        globals.set_item("mitocount", module).unwrap();
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn hpf_search_from_python() {
    run(r#"
pts = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (1e6, 1e6)]
r = mitocount.find_best_hpf(pts, 1.0)
assert r.count == 3 and r.member_ids == [0, 1, 2]
assert repr(mitocount.find_best_hpf([], 0.25)) == "HpfRegion(center=None, count=0)"
b = mitocount.brute_force_best_hpf(pts, 1.0)
assert (b.center, b.count) == (r.center, r.count)
"#);
}

#[test]
fn errors_map_to_python_exceptions() {
    run(r#"
for call, exc in [
    (lambda: mitocount.hpf_geometry(-1.0), ValueError),
    (lambda: mitocount.Annotation.from_xml("<annotation"), ValueError),
    (lambda: mitocount.Annotation.read("/nonexistent/a.xml"), OSError),
    (lambda: mitocount.Store("/tmp").append("a", "maybe"), (ValueError, OSError)),
]:
    try:
        call()
    except exc:
        pass
    else:
        raise AssertionError("no exception")
"#);
}

#[test]
fn merge_and_otsu_from_python() {
    run(r#"
centers, clusters = mitocount.merge_global([(0, 0), (40, 0), (1000, 0)], 0.25)
assert clusters == [[0, 1], [2]]
h = [0] * 256
h[10] = 3; h[90] = 3
assert mitocount.otsu_threshold(h) == 10
"#);
}
