//! Plain-text output helpers shared by the field, map and run writers.

use std::io::Write;

use crate::grid::MissionGrid;

/// Formats `x` with 9 significant digits, `%.9g` style.
pub fn fmt_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    // rounding can push e.g. 9.999999999 to 10.0000000
    let sci = format!("{:.8e}", x);
    let exp = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse::<i32>().ok())
        .unwrap_or(exp);
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, x);
        trim_zeros(&s)
    } else {
        let (mantissa, e) = sci.split_once('e').unwrap();
        let sign = if e.starts_with('-') { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mantissa), sign, e.trim_start_matches('-').parse::<i32>().unwrap())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// Writes frames in the block layout: a `# t=<k>` line followed by `ny` rows
/// of `nx` comma-separated values.
pub fn write_blocks<'a, W, I>(mut w: W, grid: &MissionGrid, frames: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = (usize, &'a [f64])>,
{
    for (t, values) in frames {
        writeln!(w, "# t={t}")?;
        for j in 0..grid.ny {
            let row = &values[j * grid.nx..(j + 1) * grid.nx];
            let line: Vec<String> = row.iter().map(|&v| fmt_g9(v)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
    }
    Ok(())
}
