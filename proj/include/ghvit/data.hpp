#pragma once

// IDX-format dataset loading and deterministic batch planning.
//
// IDX wire format: big-endian 32-bit magic (0x00000803 for image files,
// 0x00000801 for label files), one big-endian 32-bit extent per dimension,
// then the unsigned-byte payload in row-major order.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ghvit/tensor.hpp"

namespace ghvit {

struct DatasetSplit {
    Tensor<float> images;     // [count,H,W,1], pixel values in [0,1]
    std::vector<int> labels;  // one per image

    std::size_t count() const { return labels.size(); }
    std::size_t height() const { return images.extent(1); }
    std::size_t width() const { return images.extent(2); }
};

struct DatasetPair {
    DatasetSplit train, test;
};

// Reads an images/labels file pair; pixels are scaled by 1/255.
DatasetSplit load_idx_pair(const std::string& images_path, const std::string& labels_path);

// Loads <root>/<name>/{train-images-idx3-ubyte, train-labels-idx1-ubyte,
// t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte}.
DatasetPair load_dataset(const std::string& name, const std::string& root);

// First `limit` examples of a split (0 = whole split).
DatasetSplit head_subset(const DatasetSplit& split, std::size_t limit);

struct BatchPlan {
    std::size_t batch_size{128};
    std::uint64_t seed{0};
    bool drop_last{false};
};

struct Batch {
    Tensor<float> images;
    std::vector<int> labels;
};

// Example indices for one epoch: a Fisher-Yates shuffle seeded by the plan
// seed with the epoch index mixed in, cut into batches. Identical plan and
// epoch give the identical sequence.
std::vector<std::vector<std::size_t>> epoch_batch_indices(std::size_t count, const BatchPlan& plan,
                                                          std::uint64_t epoch);

Batch gather_batch(const DatasetSplit& split, const std::vector<std::size_t>& indices);

// Convenience for tests and small splits: every batch of one epoch.
std::vector<Batch> batches(const DatasetSplit& split, const BatchPlan& plan, std::uint64_t epoch);

}  // namespace ghvit
