use pyo3::prelude::*;

#[pymodule]
fn noether_py(_m: &Bound<PyModule>) -> PyResult<()> { Ok(()) }
