#pragma once

// Training loop pieces: Adam, accuracy evaluation, the epoch loop, and the
// binary checkpoint format.
//
// Checkpoint wire format (version 1), all multi-byte fields little-endian
// unless noted: ASCII magic "GHVT", 1-byte version, 32-bit length +
// UTF-8 config block (key=value lines; the trainer appends reserved keys
// `seed`, `epoch`, `adam.t` so a run is resumable from the file alone),
// 32-bit tensor count, then per tensor: 16-bit name length, name bytes,
// 8-bit rank, 32-bit extents, raw float32 payload. Optimizer moments ride
// in the tensor section under "adam.m."/"adam.v." name prefixes. A final
// 32-bit length + UTF-8 block holds the metric history, one
// `epoch,train_loss,test_accuracy` record per line.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ghvit/data.hpp"
#include "ghvit/loss.hpp"
#include "ghvit/model.hpp"
#include "ghvit/rng.hpp"
#include "ghvit/tensor.hpp"

namespace ghvit {

struct AdamConfig {
    float lr{1e-3f};
    float beta1{0.9f};
    float beta2{0.999f};
    float eps{1e-8f};
};

// Moments are kept parallel to ModelParams::named registration order.
struct AdamState {
    std::uint64_t t{0};
    std::vector<std::vector<float>> m, v;
};

AdamState init_adam(const ModelParams<float>& params);

// One bias-corrected Adam update from the gradients currently accumulated
// on the parameters. Increments t first.
void adam_step(ModelParams<float>& params, AdamState& state, const AdamConfig& cfg);

void zero_param_grads(ModelParams<float>& params);

// Fraction of examples whose argmax logit matches the label; ties break
// toward the lowest class index. Runs without building autodiff graphs.
double evaluate(const ModelConfig& cfg, const ModelParams<float>& params, const DatasetSplit& split,
                std::size_t batch_size = 256);

struct EpochRecord {
    std::uint64_t epoch{0};  // 1-based
    float train_loss{0.0f};
    double test_accuracy{0.0};
};

std::string format_metric_records(const std::vector<EpochRecord>& history);
std::vector<EpochRecord> parse_metric_records(const std::string& text);

struct TrainSettings {
    AdamConfig adam;
    BatchPlan plan;
    std::size_t epochs{30};
    std::uint64_t seed{0};
    // Written at the end of every epoch when non-empty; a mid-epoch abort
    // leaves the previous epoch's file untouched.
    std::string checkpoint_path;
    std::string config_echo;  // stored verbatim in the checkpoint
    // Called after each epoch's evaluation (progress reporting).
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    ModelParams<float> params;
    AdamState adam;
    std::vector<EpochRecord> history;
};

// Initializes parameters from settings.seed, then runs shuffled minibatch
// Adam for settings.epochs epochs, recording per-epoch mean train loss and
// test accuracy. A non-finite batch loss aborts with the batch index.
TrainResult train_model(const ModelConfig& cfg, const DatasetPair& data,
                        const TrainSettings& settings);

// ---------------------------------------------------------------------------
// Checkpoint I/O

constexpr std::uint8_t kCheckpointVersion = 1;

struct CheckpointData {
    std::uint8_t version{kCheckpointVersion};
    std::string config_text;  // key=value lines, reserved keys included
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    std::string metrics_text;  // one epoch record per line

    std::vector<EpochRecord> history() const { return parse_metric_records(metrics_text); }
    const Tensor<float>* find(const std::string& name) const;
    // Reserved-key lookup in config_text; throws if absent.
    std::string config_value(const std::string& key) const;
};

void write_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::string& path);

CheckpointData make_checkpoint(const std::string& config_echo, const ModelParams<float>& params,
                               const AdamState& adam, std::uint64_t epoch, std::uint64_t seed,
                               const std::vector<EpochRecord>& history);

// Overwrites params (and optionally Adam moments) from checkpoint tensors,
// matching by name with shape checks.
void fill_params_from_checkpoint(const CheckpointData& data, ModelParams<float>& params,
                                 AdamState* adam);

}  // namespace ghvit
