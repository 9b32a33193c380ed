//! Fixed-precision number formatting shared by all CSV writers.

pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.10}")
    }
}
