//! Bundled model descriptions and preprocessing recipes.

pub const QUADRATIC_MODEL: &str = include_str!("../presets/quadratic.model");
pub const CONSUMER_MODEL: &str = include_str!("../presets/consumer.model");
pub const CONSUMER_UNANCHORED_MODEL: &str = include_str!("../presets/consumer_unanchored.model");
pub const ABALONE_MODEL: &str = include_str!("../presets/abalone.model");
pub const ABALONE_RECIPE: &str = include_str!("../presets/abalone.recipe");
pub const HOUSING_MODEL: &str = include_str!("../presets/housing.model");
pub const HOUSING_RECIPE: &str = include_str!("../presets/housing.recipe");

/// Abalone measurements without sex and ring count.
pub const ABALONE_COLUMNS: [&str; 7] = [
    "length",
    "diameter",
    "height",
    "whole_weight",
    "shucked_weight",
    "viscera_weight",
    "shell_weight",
];

/// Path of a bundled dataset (`abalone.csv`, `housing.csv`) in the source tree.
pub fn data_path(file: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(file)
}

/// Model text for a preset name.
pub fn model(name: &str) -> Option<&'static str> {
    Some(match name {
        "quadratic" => QUADRATIC_MODEL,
        "consumer" | "consumer-synthetic" => CONSUMER_MODEL,
        "consumer-unanchored" => CONSUMER_UNANCHORED_MODEL,
        "abalone" => ABALONE_MODEL,
        "housing" => HOUSING_MODEL,
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_csv, preprocess, Recipe};
    use crate::graph::{parse_model_spec, validate_graph};

    #[test]
    fn bundled_models_validate() {
        for name in ["quadratic", "consumer", "consumer-unanchored", "abalone", "housing"] {
            let g = parse_model_spec(model(name).unwrap()).unwrap();
            assert!(validate_graph(&g).is_valid(), "{name}");
        }
    }

    #[test]
    fn housing_recipe() {
        let g = parse_model_spec(HOUSING_MODEL).unwrap();
        let raw = load_csv(&data_path("housing.csv"), Some(&g.indicator_names())).unwrap();
        let ds = preprocess(&raw, &Recipe::parse(HOUSING_RECIPE).unwrap()).unwrap();
        // RAD must be read for the filter, and it is one of the indicators
        assert_eq!(ds.n_rows(), 374);
        assert_eq!(ds.n_cols(), 11);
        assert_eq!(ds.records.iter().filter(|r| r.log).count(), 4);
        for k in 0..11 {
            let m: f64 = ds.column(k).iter().sum::<f64>() / 374.0;
            assert!(m.abs() < 1e-9);
        }
    }

    #[test]
    fn abalone_columns() {
        let cols: Vec<String> = ABALONE_COLUMNS.iter().map(|s| s.to_string()).collect();
        let ds = load_csv(&data_path("abalone.csv"), Some(&cols)).unwrap();
        assert_eq!(ds.n_cols(), 7);
        assert_eq!(ds.n_rows(), 4177);
    }
}
