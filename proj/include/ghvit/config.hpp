#pragma once

// Flat key=value run configuration: every model, optimizer, batching, and
// path knob, parseable from a file and from command-line overrides, and
// serializable back out so each run's artifact carries its effective
// configuration verbatim.

#include <cstddef>
#include <cstdint>
#include <string>

#include "ghvit/data.hpp"
#include "ghvit/model.hpp"
#include "ghvit/train.hpp"

namespace ghvit {

struct RunConfig {
    std::string variant{"gcn_hvit_1"};
    std::string dataset{"mnist"};
    std::string data_dir{};  // empty: GHVIT_DATA_DIR, falling back to "data"
    std::size_t classes{10};
    std::size_t embed_dim{64};
    std::size_t layers{4};
    std::size_t heads{4};
    float lr{1e-3f};
    float beta1{0.9f};
    float beta2{0.999f};
    float adam_eps{1e-8f};
    std::size_t batch_size{128};
    bool drop_last{false};
    std::size_t epochs{30};
    std::uint64_t seed{0};
    std::size_t train_limit{0};  // 0 = whole split
    std::size_t test_limit{0};
    std::string out{"runs"};
    std::string checkpoint{};
};

// Applies one key=value assignment; unknown keys and malformed values are
// rejected with a message naming the key.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses `key=value` lines ('#' starts a comment, blank lines allowed) on
// top of defaults. Duplicate keys are rejected.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

// Every key in a fixed order; parse_config_text round-trips it.
std::string serialize_config(const RunConfig& cfg);

// data_dir if set, else $GHVIT_DATA_DIR, else "data".
std::string resolve_data_dir(const RunConfig& cfg);

ModelConfig to_model_config(const RunConfig& cfg, std::size_t image_h, std::size_t image_w,
                            std::size_t channels = 1);
AdamConfig to_adam_config(const RunConfig& cfg);
BatchPlan to_batch_plan(const RunConfig& cfg);

}  // namespace ghvit
