//! Generates a small log and checks the planted structure: periodic and
//! decaying revisit gaps, and per-type click curves over positions.

use coupa::data::{click_share_by_position, generate, interval_histogram, CategoryId, GeneratorSpec};

fn main() -> coupa::Result<()> {
    let spec = GeneratorSpec {
        users: 1000,
        ..GeneratorSpec::default()
    };
    let log = generate(&spec)?;
    let clicks = log.events.iter().filter(|e| e.is_click()).count();
    println!("{} events, {clicks} clicks, {} intents", log.events.len(), log.truth.intents.len());

    for (c, label) in [(0 as CategoryId, "periodic"), (1, "decaying")] {
        let hist = interval_histogram(&log.truth, c, 6.0, 72.0);
        let bars: Vec<String> = hist.iter().map(|n| n.to_string()).collect();
        println!("{label:>8} category {c}, gaps per 6h bin up to 72h: {}", bars.join(" "));
    }

    for (ty, profile) in spec.position_types.iter().enumerate() {
        let users: Vec<bool> = log.truth.user_type.iter().map(|&t| t == ty).collect();
        let events: Vec<_> = log.events.iter().filter(|e| users[e.user as usize]).cloned().collect();
        let share: Vec<String> = click_share_by_position(&events, spec.positions())
            .iter()
            .map(|s| format!("{:.2}", s))
            .collect();
        println!("{:>6} click share by position: {}", profile.name, share.join(" "));
    }
    Ok(())
}
