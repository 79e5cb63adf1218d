//! Bundled experiment presets, compiled into the binary so `--config fig1`
//! works without a file on disk.

pub const PRESETS: &[(&str, &str)] = &[
    ("fig1", include_str!("../presets/fig1.toml")),
    ("fig2", include_str!("../presets/fig2.toml")),
    ("fig3", include_str!("../presets/fig3.toml")),
    ("tab1", include_str!("../presets/tab1.toml")),
    ("validate", include_str!("../presets/validate.toml")),
];

pub fn lookup(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    #[test]
    fn every_preset_parses() {
        for (name, text) in PRESETS {
            let cfg = ExperimentConfig::parse(text)
                .unwrap_or_else(|e| panic!("preset {name} failed to parse: {e}"));
            assert!(!cfg.raw.is_empty());
        }
    }
}
