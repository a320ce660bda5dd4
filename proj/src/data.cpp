#include "ghvit/data.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <utility>

#include "ghvit/rng.hpp"

namespace ghvit {

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::string& path) {
    if (offset + 4 > bytes.size()) {
        throw std::runtime_error("'" + path + "' truncated at byte " + std::to_string(offset));
    }
    return (std::uint32_t(bytes[offset]) << 24) | (std::uint32_t(bytes[offset + 1]) << 16) |
           (std::uint32_t(bytes[offset + 2]) << 8) | std::uint32_t(bytes[offset + 3]);
}

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::string hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08x", v);
    return buf;
}

}  // namespace

DatasetSplit load_idx_pair(const std::string& images_path, const std::string& labels_path) {
    const std::vector<unsigned char> ib = read_file(images_path);
    const std::uint32_t imagic = read_be32(ib, 0, images_path);
    if (imagic != kImagesMagic) {
        throw std::runtime_error("'" + images_path + "': bad magic " + hex32(imagic) +
                                 " at byte 0, expected " + hex32(kImagesMagic));
    }
    const std::size_t count = read_be32(ib, 4, images_path);
    const std::size_t h = read_be32(ib, 8, images_path);
    const std::size_t w = read_be32(ib, 12, images_path);
    const std::size_t payload = count * h * w;
    if (ib.size() != 16 + payload) {
        throw std::runtime_error("'" + images_path + "': expected " + std::to_string(payload) +
                                 " payload bytes at byte 16, file has " +
                                 std::to_string(ib.size() - 16));
    }

    const std::vector<unsigned char> lb = read_file(labels_path);
    const std::uint32_t lmagic = read_be32(lb, 0, labels_path);
    if (lmagic != kLabelsMagic) {
        throw std::runtime_error("'" + labels_path + "': bad magic " + hex32(lmagic) +
                                 " at byte 0, expected " + hex32(kLabelsMagic));
    }
    const std::size_t lcount = read_be32(lb, 4, labels_path);
    if (lb.size() != 8 + lcount) {
        throw std::runtime_error("'" + labels_path + "': expected " + std::to_string(lcount) +
                                 " payload bytes at byte 8, file has " + std::to_string(lb.size() - 8));
    }
    if (lcount != count) {
        throw std::runtime_error("image count " + std::to_string(count) + " in '" + images_path +
                                 "' != label count " + std::to_string(lcount) + " in '" + labels_path +
                                 "'");
    }

    DatasetSplit split;
    std::vector<float> pixels(payload);
    for (std::size_t i = 0; i < payload; ++i) {
        pixels[i] = static_cast<float>(ib[16 + i]) * (1.0f / 255.0f);
    }
    split.images = Tensor<float>::from_vector({count, h, w, 1}, std::move(pixels));
    split.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) split.labels[i] = lb[8 + i];
    return split;
}

DatasetPair load_dataset(const std::string& name, const std::string& root) {
    const std::string dir = root + "/" + name;
    DatasetPair pair;
    pair.train = load_idx_pair(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
    pair.test = load_idx_pair(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
    return pair;
}

DatasetSplit head_subset(const DatasetSplit& split, std::size_t limit) {
    if (limit == 0 || limit >= split.count()) return split;
    const std::size_t h = split.height(), w = split.width();
    DatasetSplit out;
    const auto& src = split.images.values();
    std::vector<float> pixels(src.begin(),
                              src.begin() + static_cast<std::ptrdiff_t>(limit * h * w));
    out.images = Tensor<float>::from_vector({limit, h, w, 1}, std::move(pixels));
    out.labels.assign(split.labels.begin(), split.labels.begin() + static_cast<std::ptrdiff_t>(limit));
    return out;
}

std::vector<std::vector<std::size_t>> epoch_batch_indices(std::size_t count, const BatchPlan& plan,
                                                          std::uint64_t epoch) {
    if (plan.batch_size == 0) throw std::invalid_argument("BatchPlan: batch_size must be >= 1");
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    Rng rng(epoch_seed(plan.seed, epoch));
    rng.shuffle(order);

    std::vector<std::vector<std::size_t>> result;
    for (std::size_t start = 0; start < count; start += plan.batch_size) {
        const std::size_t end = std::min(count, start + plan.batch_size);
        if (plan.drop_last && end - start < plan.batch_size) break;
        result.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                            order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return result;
}

Batch gather_batch(const DatasetSplit& split, const std::vector<std::size_t>& indices) {
    const std::size_t h = split.height(), w = split.width(), px = h * w;
    std::vector<float> pixels(indices.size() * px);
    Batch batch;
    batch.labels.resize(indices.size());
    const auto& src = split.images.values();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::size_t idx = indices[i];
        if (idx >= split.count()) {
            throw std::invalid_argument("gather_batch: index " + std::to_string(idx) +
                                        " outside split of " + std::to_string(split.count()));
        }
        std::copy(src.begin() + static_cast<std::ptrdiff_t>(idx * px),
                  src.begin() + static_cast<std::ptrdiff_t>((idx + 1) * px),
                  pixels.begin() + static_cast<std::ptrdiff_t>(i * px));
        batch.labels[i] = split.labels[idx];
    }
    batch.images = Tensor<float>::from_vector({indices.size(), h, w, 1}, std::move(pixels));
    return batch;
}

std::vector<Batch> batches(const DatasetSplit& split, const BatchPlan& plan, std::uint64_t epoch) {
    std::vector<Batch> out;
    for (const auto& idx : epoch_batch_indices(split.count(), plan, epoch)) {
        out.push_back(gather_batch(split, idx));
    }
    return out;
}

}  // namespace ghvit
