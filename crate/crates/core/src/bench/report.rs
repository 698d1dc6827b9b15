use std::io::Write;

use serde::Serialize;

use crate::error::Result;

/// Writes one CSV record per row, with a header from the field names.
pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write, T: Serialize + ?Sized>(out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(out, value)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        image: &'static str,
        error: f64,
        extra: Option<f64>,
    }

    #[test]
    fn csv_header_and_empty_optionals() {
        let mut buf = Vec::new();
        let rows = [
            Row { image: "a", error: 0.5, extra: None },
            Row { image: "b", error: 0.25, extra: Some(1.0) },
        ];
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "image,error,extra\na,0.5,\nb,0.25,1.0\n");
    }
}
