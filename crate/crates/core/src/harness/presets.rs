//! Named experiments. Each preset is config text, so it goes through the
//! same parser as user files.

pub struct Preset {
    pub id: &'static str,
    /// `benchmark` (full size) or `desk` (minutes on a laptop).
    pub scale: &'static str,
    pub about: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset { id: "gmm-d10-k10-equal", scale: "benchmark", about: "D=10, K=10, equal weights, 4 chains, 800 s" },
    Preset { id: "gmm-d10-k10-prop", scale: "benchmark", about: "D=10, K=10, weights proportional to index, 4 chains, 800 s" },
    Preset { id: "gmm-d20-k10-equal", scale: "benchmark", about: "D=20, K=10, equal weights, 4 chains, 800 s" },
    Preset { id: "gmm-d20-k10-prop", scale: "benchmark", about: "D=20, K=10, proportional weights, 4 chains, 800 s" },
    Preset { id: "gmm-d40-k10-equal", scale: "benchmark", about: "D=40, K=10, equal weights, 4 chains, 800 s" },
    Preset { id: "gmm-d40-k10-prop", scale: "benchmark", about: "D=40, K=10, proportional weights, 4 chains, 800 s" },
    Preset { id: "gmm-d100-k10-equal", scale: "benchmark", about: "D=100, K=10, equal weights, 4 chains, 2000 s" },
    Preset { id: "gmm-d100-k10-prop", scale: "benchmark", about: "D=100, K=10, proportional weights, 4 chains, 2000 s" },
    Preset { id: "gmm-d20-k20-equal", scale: "benchmark", about: "D=20, K=20, equal weights, 4 chains, 800 s" },
    Preset { id: "gmm-d20-k20-prop", scale: "benchmark", about: "D=20, K=20, proportional weights, 4 chains, 800 s" },
    Preset { id: "gmm-d10-k5-equal", scale: "desk", about: "D=10, K=5, equal weights, 4 chains, 60 s" },
    Preset { id: "gmm-d10-k5-prop", scale: "desk", about: "D=10, K=5, proportional weights, 4 chains, 60 s" },
    Preset { id: "gmm-d2-k2-equal", scale: "desk", about: "D=2, K=2, equal weights, 4 chains, 60 s" },
    Preset {
        id: "sensor-ns8",
        scale: "benchmark",
        about: "N_s=8 (D=16), R=0.3, sigma=0.02, 3 anchors, KDE modes, F=0.01, 2 chains, 1000 s",
    },
    Preset {
        id: "sensor-ns3",
        scale: "desk",
        about: "N_s=3 (D=6), R=0.3, sigma=0.02, 3 anchors, KDE modes, F=0.01, 2 chains, 60 s",
    },
];

pub fn find_preset(id: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.id == id)
}

/// Config text of a preset.
pub fn preset_config(id: &str) -> Option<String> {
    let p = find_preset(id)?;
    let mut s = format!("target = {}\n", p.id);
    if p.id.starts_with("sensor") {
        let budget = if p.scale == "desk" { 60 } else { 1000 };
        s.push_str(&format!(
            "chains = 2\nschedule = forced-update\nbudget_seconds = {budget}\n\
             [hmc]\nstep_size = 0.014\nsteps = 10\ntune = false\n\
             [wormhole]\nF = 0.01\n\
             [modefinder]\nmodel = kde\n\
             [schedule]\nperiod = 100\n"
        ));
    } else {
        let budget = match (p.scale, p.id.starts_with("gmm-d100")) {
            ("desk", _) => 60,
            (_, true) => 2000,
            _ => 800,
        };
        s.push_str(&format!(
            "chains = 4\nschedule = on-the-fly\nbudget_seconds = {budget}\n\
             [wormhole]\nF = 0.1\n"
        ));
    }
    Some(s)
}

pub fn list_presets() -> String {
    let mut s = String::new();
    for p in PRESETS {
        s.push_str(&format!("{:<20} {:<10} {}\n", p.id, p.scale, p.about));
    }
    s
}
