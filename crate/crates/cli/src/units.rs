//! Bandwidth and list arguments.
//!
//! Bandwidth is bytes per second. Decimal suffixes `B`, `KB`, `MB`, `GB`
//! multiply by powers of 1000; `KiB`, `MiB`, `GiB` by powers of 1024. A
//! trailing `ps` or `/s` is accepted, so `300KB`, `300KBps` and `300KB/s`
//! are all 300000 bytes per second. A bare number is bytes per second.

pub fn parse_bandwidth(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let t = t
        .strip_suffix("/s")
        .or_else(|| t.strip_suffix("ps"))
        .unwrap_or(t);
    let split = t
        .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
        .unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let scale = match unit {
        "" | "B" => 1.0,
        "KB" | "kB" => 1e3,
        "MB" => 1e6,
        "GB" => 1e9,
        "KiB" => 1024.0,
        "MiB" => 1024.0 * 1024.0,
        "GiB" => 1024.0 * 1024.0 * 1024.0,
        other => return Err(format!("unknown bandwidth unit {other:?} in {s:?}")),
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("invalid bandwidth {s:?}"))?;
    let bw = v * scale;
    if !(bw.is_finite() && bw > 0.0) {
        return Err(format!("bandwidth must be positive, got {s:?}"));
    }
    Ok(bw)
}

pub fn parse_bit_depths(s: &str) -> Result<Vec<u8>, String> {
    let depths: Vec<u8> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<u8>()
                .ok()
                .filter(|c| (1..=16).contains(c))
                .ok_or_else(|| format!("invalid bit depth {p:?} (expected 1..=16)"))
        })
        .collect::<Result<_, _>>()?;
    if depths.is_empty() {
        return Err("empty bit-depth list".into());
    }
    Ok(depths)
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("invalid number {p:?}")))
        .collect()
}

pub fn parse_bandwidth_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(parse_bandwidth).collect()
}
