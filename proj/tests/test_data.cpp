// IDX loading against hand-built byte fixtures, the error paths with byte
// offsets, and deterministic batch planning.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "ghvit/data.hpp"
#include "test_util.hpp"

using namespace ghvit;

namespace {

void put_be32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Two 2x3 images with distinct pixel values plus matching labels.
struct Fixture {
    std::filesystem::path images, labels;
    std::vector<std::uint8_t> pixels = {0, 1, 2, 3, 4, 255, 250, 200, 150, 100, 50, 10};

    explicit Fixture(const std::string& tag) {
        auto dir = testutil::scratch_dir(tag);
        images = dir / "images-idx3-ubyte";
        labels = dir / "labels-idx1-ubyte";
        std::string img;
        put_be32(img, 0x00000803);
        put_be32(img, 2);
        put_be32(img, 2);
        put_be32(img, 3);
        for (auto b : pixels) img.push_back(static_cast<char>(b));
        write_bytes(images, img);
        std::string lab;
        put_be32(lab, 0x00000801);
        put_be32(lab, 2);
        lab.push_back(7);
        lab.push_back(0);
        write_bytes(labels, lab);
    }
};

}  // namespace

TEST_SUITE("data") {

// ---------------------------------------------------------------------------
// load_idx_pair

TEST_CASE("hand-built fixture recovers exact pixel values") {
    Fixture fx("data_fixture");
    DatasetSplit split = load_idx_pair(fx.images.string(), fx.labels.string());
    REQUIRE(split.count() == 2);
    CHECK(split.height() == 2);
    CHECK(split.width() == 3);
    CHECK(split.images.shape() == Shape{2, 2, 3, 1});
    for (std::size_t i = 0; i < fx.pixels.size(); ++i) {
        CHECK(split.images.values()[i] == static_cast<float>(fx.pixels[i]) * (1.0f / 255.0f));
    }
    CHECK(split.labels == std::vector<int>{7, 0});
}

TEST_CASE("pixel range stays within [0,1]") {
    Fixture fx("data_range");
    DatasetSplit split = load_idx_pair(fx.images.string(), fx.labels.string());
    float lo = 1.0f, hi = 0.0f;
    for (float v : split.images.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo >= 0.0f);
    CHECK(hi <= 1.0f);
    CHECK(hi == 1.0f);  // the fixture contains a 255 pixel
}

TEST_CASE("loading is idempotent") {
    Fixture fx("data_idempotent");
    DatasetSplit a = load_idx_pair(fx.images.string(), fx.labels.string());
    DatasetSplit b = load_idx_pair(fx.images.string(), fx.labels.string());
    CHECK(a.images.values() == b.images.values());
    CHECK(a.labels == b.labels);
}

TEST_CASE("count mismatch names both counts") {
    Fixture fx("data_mismatch");
    std::string lab;
    put_be32(lab, 0x00000801);
    put_be32(lab, 3);
    lab.push_back(1);
    lab.push_back(2);
    lab.push_back(3);
    write_bytes(fx.labels, lab);
    CHECK_THROWS_WITH_AS(load_idx_pair(fx.images.string(), fx.labels.string()),
                         doctest::Contains("image count 2"), std::runtime_error);
    CHECK_THROWS_WITH_AS(load_idx_pair(fx.images.string(), fx.labels.string()),
                         doctest::Contains("label count 3"), std::runtime_error);
}

TEST_CASE("bad magic is rejected with its byte offset") {
    Fixture fx("data_magic");
    std::string img;
    put_be32(img, 0x00000804);
    put_be32(img, 1);
    put_be32(img, 1);
    put_be32(img, 1);
    img.push_back(5);
    write_bytes(fx.images, img);
    CHECK_THROWS_WITH_AS(load_idx_pair(fx.images.string(), fx.labels.string()),
                         doctest::Contains("byte 0"), std::runtime_error);
}

TEST_CASE("truncated payload is rejected with the payload offset") {
    Fixture fx("data_trunc");
    std::string img;
    put_be32(img, 0x00000803);
    put_be32(img, 2);
    put_be32(img, 2);
    put_be32(img, 3);
    for (int i = 0; i < 5; ++i) img.push_back(1);  // 12 bytes promised, 5 present
    write_bytes(fx.images, img);
    CHECK_THROWS_WITH_AS(load_idx_pair(fx.images.string(), fx.labels.string()),
                         doctest::Contains("byte 16"), std::runtime_error);
}

TEST_CASE("missing file is rejected naming the path") {
    CHECK_THROWS_WITH_AS(load_idx_pair("/nonexistent/images", "/nonexistent/labels"),
                         doctest::Contains("/nonexistent/images"), std::runtime_error);
}

TEST_CASE("mnist train split has the canonical extent") {
    if (!testutil::dataset_present("mnist")) return;  // dataset not staged
    DatasetPair data = load_dataset("mnist", testutil::data_root());
    CHECK(data.train.count() == 60000);
    CHECK(data.test.count() == 10000);
    CHECK(data.train.height() == 28);
    CHECK(data.train.width() == 28);
    for (int label : data.train.labels) {
        CHECK(label >= 0);
        CHECK(label < 10);
    }
}

// ---------------------------------------------------------------------------
// head_subset

TEST_CASE("head_subset takes a prefix and zero means everything") {
    Fixture fx("data_subset");
    DatasetSplit split = load_idx_pair(fx.images.string(), fx.labels.string());
    DatasetSplit one = head_subset(split, 1);
    CHECK(one.count() == 1);
    CHECK(one.labels == std::vector<int>{7});
    CHECK(one.images.shape() == Shape{1, 2, 3, 1});
    CHECK(head_subset(split, 0).count() == 2);
    CHECK(head_subset(split, 99).count() == 2);
}

// ---------------------------------------------------------------------------
// batch planning

TEST_CASE("identical plans give identical index order") {
    BatchPlan plan;
    plan.batch_size = 4;
    plan.seed = 99;
    auto a = epoch_batch_indices(21, plan, 3);
    auto b = epoch_batch_indices(21, plan, 3);
    CHECK(a == b);
    // A different epoch reshuffles.
    CHECK(a != epoch_batch_indices(21, plan, 4));
}

TEST_CASE("every index appears exactly once per epoch") {
    BatchPlan plan;
    plan.batch_size = 5;
    plan.seed = 7;
    auto batches_idx = epoch_batch_indices(23, plan, 0);
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto& batch : batches_idx) {
        for (auto i : batch) {
            CHECK(i < 23);
            seen.insert(i);
            ++total;
        }
    }
    CHECK(total == 23);
    CHECK(seen.size() == 23);
}

TEST_CASE("batch size equal to the count gives one full batch") {
    BatchPlan plan;
    plan.batch_size = 23;
    plan.seed = 1;
    auto batches_idx = epoch_batch_indices(23, plan, 0);
    REQUIRE(batches_idx.size() == 1);
    CHECK(batches_idx[0].size() == 23);
}

TEST_CASE("drop_last discards the ragged tail") {
    BatchPlan plan;
    plan.batch_size = 3;
    plan.seed = 2;
    plan.drop_last = true;
    auto batches_idx = epoch_batch_indices(10, plan, 0);
    REQUIRE(batches_idx.size() == 3);
    for (const auto& b : batches_idx) CHECK(b.size() == 3);

    plan.drop_last = false;
    auto keep = epoch_batch_indices(10, plan, 0);
    REQUIRE(keep.size() == 4);
    CHECK(keep[3].size() == 1);
}

TEST_CASE("gather_batch pulls the right images and labels") {
    Fixture fx("data_gather");
    DatasetSplit split = load_idx_pair(fx.images.string(), fx.labels.string());
    Batch b = gather_batch(split, {1, 0});
    CHECK(b.labels == std::vector<int>{0, 7});
    CHECK(b.images.shape() == Shape{2, 2, 3, 1});
    // First gathered image is example 1 of the fixture.
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(b.images.values()[i] == static_cast<float>(fx.pixels[6 + i]) * (1.0f / 255.0f));
    }
}

}  // TEST_SUITE
