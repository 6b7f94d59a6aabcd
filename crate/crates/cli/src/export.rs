use fieldmem::sparse::SparseField;

/// `row,col,value` for every active cell.
pub fn field_csv(field: &SparseField) -> String {
    let mut out = String::from("row,col,value\n");
    for (cell, v) in field.iter() {
        out.push_str(&format!("{},{},{}\n", cell.row, cell.col, v));
    }
    out
}

/// Binary 8-bit PGM of `|phi|` scaled so the largest magnitude maps to 255.
pub fn field_pgm(field: &SparseField) -> Vec<u8> {
    let n = field.grid_size();
    let max = field.max_abs();
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    let start = out.len();
    out.resize(start + n * n, 0);
    if max > 0.0 {
        for (cell, v) in field.iter() {
            let px = (v.abs() / max * 255.0).round().clamp(0.0, 255.0) as u8;
            out[start + cell.row * n + cell.col] = px;
        }
    }
    out
}
