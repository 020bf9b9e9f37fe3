// SPDX-License-Identifier: Apache-2.0
#![no_main]

use libfuzzer_sys::fuzz_target;
use rulemask::config::PipelineConfig;
use rulemask_llm::ModelConfig;

fuzz_target!(|text: &str| {
    if let Ok(config) = PipelineConfig::from_toml(text) {
        let _ = config.validate();
        let _ = config.selected_rules();
    }
    let _ = PipelineConfig::from_json(text);
    let _ = toml::from_str::<ModelConfig>(text).map(|m| m.validate());
});
