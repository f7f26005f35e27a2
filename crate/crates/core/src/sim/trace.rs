//! Per-tick trace rows and their CSV form.

use std::fmt::Write as _;

pub const TRACE_HEADER: &str = "t,vehicle_id,role,s,x,y,v,a,slot,intersection,est_err,mode";

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub vehicle_id: u32,
    pub role: &'static str,
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub a: f64,
    pub slot: Option<u32>,
    pub intersection: Option<u32>,
    pub est_err: Option<f64>,
    pub mode: &'static str,
}

impl TraceRow {
    /// Appends the row with a trailing newline. Fixed precision keeps reruns byte-identical.
    pub fn write_csv(&self, out: &mut String) {
        let _ = write!(
            out,
            "{:.2},{},{},{:.3},{:.3},{:.3},{:.4},{:.4},",
            self.t, self.vehicle_id, self.role, self.s, self.x, self.y, self.v, self.a
        );
        if let Some(s) = self.slot {
            let _ = write!(out, "{s}");
        }
        out.push(',');
        if let Some(i) = self.intersection {
            let _ = write!(out, "{i}");
        }
        out.push(',');
        if let Some(e) = self.est_err {
            let _ = write!(out, "{e:.4}");
        }
        let _ = writeln!(out, ",{}", self.mode);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_format() {
        let row = TraceRow {
            t: 1.0,
            vehicle_id: 7,
            role: "npc_cav",
            s: 12.3456,
            x: 1.0,
            y: -2.0,
            v: 8.04,
            a: -0.5,
            slot: Some(3),
            intersection: None,
            est_err: Some(0.01234),
            mode: "cooperative",
        };
        let mut s = String::new();
        row.write_csv(&mut s);
        assert_eq!(s, "1.00,7,npc_cav,12.346,1.000,-2.000,8.0400,-0.5000,3,,0.0123,cooperative\n");
        assert_eq!(TRACE_HEADER.split(',').count(), s.trim_end().split(',').count());
    }
}
