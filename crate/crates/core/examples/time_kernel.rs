//! Encodes a few elapsed times and shows that the induced kernel depends on
//! the gap between two times only.

use coupa::time_encoding::{encode, kernel_closed_form, kernel_value, TimeEncodingConfig, HOUR};

fn main() -> coupa::Result<()> {
    let cfg = TimeEncodingConfig::default();
    println!("{} periods, {} entries each, {} dims", cfg.k(), cfg.d, cfg.dim());

    for hours in [0.0, 0.25, 0.5, 3.0, 30.0] {
        let phi = encode(hours * HOUR, &cfg)?;
        let head: Vec<String> = phi.iter().take(5).map(|v| format!("{v:+.3}")).collect();
        println!("Φ({hours:>5}h) = [{} ...]", head.join(", "));
    }

    println!("\n gap   K(t, t+gap) at t=0   at t=1000h   closed form");
    for gap in [0.0, 1.0, 6.0, 23.0, 24.0, 167.0, 168.0] {
        let a = kernel_value(0.0, gap * HOUR, &cfg)?;
        let b = kernel_value(1000.0 * HOUR, (1000.0 + gap) * HOUR, &cfg)?;
        let c = kernel_closed_form(0.0, gap * HOUR, &cfg)?;
        println!("{gap:>4}h   {a:>18.6}   {b:>10.6}   {c:>11.6}");
    }
    Ok(())
}
