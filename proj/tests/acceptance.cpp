// Acceptance gate: one check per criterion, each printing a single
// PASS/FAIL line (with supporting detail indented underneath). Run all
// criteria or a selection via --criterion N.
//
//   1  gradient suite (< 1e-5 ops, < 1e-4 end-to-end, under a minute)
//   2  GCN vs dense oracle, 100 random 4x4 instances, both modes
//   3  adjacency counts, 2x2 edge set, row-stochastic normalization
//   4  one-way locality on the 4x4 grid, exhaustive
//   5  forward-trace shapes for all five variants on 28x28
//   6  smoke training floor: >= 92% on MNIST-10k test inside 15 minutes
//   7  extended: full MNIST, 30 epochs, >= 98.0%
//   8  extended: ablation ordering over 3 seeds on FashionMNIST-10k
//   9  bitwise-deterministic training artifacts
//   10 checkpoint round trip and eval agreement

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <vector>

#include "ghvit/config.hpp"
#include "ghvit/data.hpp"
#include "ghvit/gradcheck.hpp"
#include "ghvit/graph.hpp"
#include "ghvit/model.hpp"
#include "ghvit/rng.hpp"
#include "ghvit/train.hpp"

using namespace ghvit;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string data_root() {
    if (const char* env = std::getenv("GHVIT_DATA_DIR")) return env;
    return "data";
}

bool dataset_ready(const std::string& name) {
    return std::filesystem::exists(std::filesystem::path(data_root()) / name /
                                   "train-images-idx3-ubyte");
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::filesystem::path work_dir() {
    auto dir = std::filesystem::temp_directory_path() / "ghvit_acceptance";
    std::filesystem::create_directories(dir);
    return dir;
}

// ---------------------------------------------------------------------------
// 1: gradient suite

bool criterion_gradients() {
    const auto start = std::chrono::steady_clock::now();
    bool ok = true;
    double worst_op = 0.0, worst_model = 0.0;
    for (const auto& r : run_op_suite(20260822)) {
        worst_op = std::max(worst_op, r.max_rel_err);
        if (!r.pass(1e-5)) {
            ok = false;
            std::printf("  op %s max rel err %.3e exceeds 1e-5\n", r.name.c_str(), r.max_rel_err);
        }
    }
    for (const auto& r : run_model_suite(20260822)) {
        worst_model = std::max(worst_model, r.max_rel_err);
        if (!r.pass(1e-4)) {
            ok = false;
            std::printf("  model %s max rel err %.3e exceeds 1e-4\n", r.name.c_str(), r.max_rel_err);
        }
    }
    const double elapsed = seconds_since(start);
    std::printf("  worst op err %.3e (tol 1e-5), worst end-to-end err %.3e (tol 1e-4), %.1fs\n",
                worst_op, worst_model, elapsed);
    if (elapsed >= 60.0) {
        ok = false;
        std::printf("  runtime %.1fs exceeds the 1-minute budget\n", elapsed);
    }
    return ok;
}

// ---------------------------------------------------------------------------
// 2: GCN dense oracle

bool criterion_gcn_oracle() {
    const std::size_t n = 16, d = 8;
    Rng rng(20260822);
    double worst = 0.0;
    for (auto mode : {AdjacencyMode::kOneWay, AdjacencyMode::kBidirectional}) {
        const auto a_hat = normalize_adjacency(build_grid_adjacency(4, 4, mode));
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<float> x(n * d), w(d * d);
            for (auto& v : x) v = static_cast<float>(rng.normal());
            for (auto& v : w) v = static_cast<float>(rng.normal());
            Tensor<float> out = gcn_positional_embedding(
                Tensor<float>::from_vector({n, d}, x), a_hat, Tensor<float>::from_vector({d, d}, w));

            // Dense double-precision ReLU(A_hat X W), explicit loops.
            std::vector<double> ax(n * d, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    const double a = a_hat.at(i, j);
                    if (a == 0.0) continue;
                    for (std::size_t c = 0; c < d; ++c) ax[i * d + c] += a * x[j * d + c];
                }
            }
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t c = 0; c < d; ++c) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < d; ++k) acc += ax[i * d + k] * w[k * d + c];
                    const double expect = acc > 0.0 ? acc : 0.0;
                    worst = std::max(worst,
                                     std::fabs(static_cast<double>(out.values()[i * d + c]) - expect));
                }
            }
        }
    }
    std::printf("  max |impl - oracle| %.3e over 200 instances (tol 1e-6)\n", worst);
    return worst < 1e-6;
}

// ---------------------------------------------------------------------------
// 3: adjacency counts and normalization

bool criterion_adjacency() {
    bool ok = true;
    const auto one_way = build_grid_adjacency(4, 4, AdjacencyMode::kOneWay);
    const auto bi = build_grid_adjacency(4, 4, AdjacencyMode::kBidirectional);
    if (one_way.edge_count() != 24) {
        ok = false;
        std::printf("  one-way 4x4 has %zu edges, expected 24\n", one_way.edge_count());
    }
    if (bi.edge_count() != 48) {
        ok = false;
        std::printf("  bidirectional 4x4 has %zu edges, expected 48\n", bi.edge_count());
    }

    const auto small = build_grid_adjacency(2, 2, AdjacencyMode::kOneWay);
    std::set<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            if (small.at(i, j)) edges.insert({i, j});
        }
    }
    const std::set<std::pair<std::size_t, std::size_t>> expected = {{0, 1}, {2, 3}, {0, 2}, {1, 3}};
    if (edges != expected) {
        ok = false;
        std::printf("  2x2 one-way edge set deviates from {(0,1),(2,3),(0,2),(1,3)}\n");
    }

    double worst_row = 0.0;
    for (auto mode : {AdjacencyMode::kOneWay, AdjacencyMode::kBidirectional}) {
        const auto a_hat = normalize_adjacency(build_grid_adjacency(4, 4, mode));
        for (std::size_t i = 0; i < a_hat.n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < a_hat.n; ++j) s += a_hat.at(i, j);
            worst_row = std::max(worst_row, std::fabs(s - 1.0));
        }
    }
    std::printf("  edge counts 24/48, worst row-sum deviation %.3e (tol 1e-6)\n", worst_row);
    return ok && worst_row < 1e-6;
}

// ---------------------------------------------------------------------------
// 4: one-way locality

bool criterion_locality() {
    const auto a_hat = normalize_adjacency(build_grid_adjacency(4, 4, AdjacencyMode::kOneWay));
    Rng rng(20260822);
    const std::size_t n = 16, d = 8;
    std::vector<float> base(n * d), w(d * d);
    for (auto& v : base) v = static_cast<float>(rng.normal());
    for (auto& v : w) v = static_cast<float>(rng.normal());
    Tensor<float> w_t = Tensor<float>::from_vector({d, d}, w);
    Tensor<float> ref =
        gcn_positional_embedding(Tensor<float>::from_vector({n, d}, base), a_hat, w_t);

    std::size_t checked = 0;
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<float> perturbed = base;
        for (std::size_t c = 0; c < d; ++c) perturbed[j * d + c] += 2.0f;
        Tensor<float> out =
            gcn_positional_embedding(Tensor<float>::from_vector({n, d}, perturbed), a_hat, w_t);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ri = i / 4, ci = i % 4;
            const bool in_neighborhood = (i == j) || (ri == j / 4 && ci + 1 == j % 4) ||
                                         (ci == j % 4 && ri + 1 == j / 4);
            if (in_neighborhood) continue;
            ++checked;
            for (std::size_t c = 0; c < d; ++c) {
                if (out.values()[i * d + c] != ref.values()[i * d + c]) {
                    std::printf("  perturbing node %zu changed unrelated output row %zu\n", j, i);
                    return false;
                }
            }
        }
    }
    std::printf("  %zu (node, row) pairs outside the neighborhood: all outputs unchanged exactly\n",
                checked);
    return true;
}

// ---------------------------------------------------------------------------
// 5: forward-trace shapes

bool criterion_shapes() {
    bool ok = true;
    Rng data_rng(20260822);
    std::vector<float> img(2 * 28 * 28);
    for (auto& v : img) v = static_cast<float>(data_rng.uniform());
    Tensor<float> images = Tensor<float>::from_vector({2, 28, 28, 1}, img);

    auto expect = [&ok](const char* variant, const char* what, const Shape& got,
                        const Shape& want) {
        if (got != want) {
            ok = false;
            std::printf("  %s: %s is %s, expected %s\n", variant, what, shape_str(got).c_str(),
                        shape_str(want).c_str());
        }
    };

    for (const char* name : {"hvit", "gcn_hvit_1", "gcn_hvit_2"}) {
        auto cfg = build_variant(name, 28, 28);
        Rng rng(1);
        auto params = init_params<float>(cfg, rng);
        ForwardTrace<float> trace;
        Tensor<float> logits = forward(cfg, params, images, &trace);
        const bool gcn = cfg.pos_mode == PosMode::kGcn;
        expect(name, "f1", trace.f1.shape(), {2, 4, 4, 64});
        expect(name, "x_p", trace.x_p.shape(), {2, 16, 64});
        expect(name, "e_pos1", trace.e_pos1.shape(), gcn ? Shape{2, 16, 64} : Shape{16, 64});
        for (const auto& k : trace.k_layers) expect(name, "k", k.shape(), {2, 16, 64});
        expect(name, "z", trace.z.shape(), {2, 4, 4, 64});
        expect(name, "f2", trace.f2.shape(), {2, 2, 2, 64});
        expect(name, "z_p", trace.z_p.shape(), {2, 4, 64});
        expect(name, "e_pos2", trace.e_pos2.shape(), gcn ? Shape{2, 4, 64} : Shape{4, 64});
        expect(name, "h", trace.h_in.shape(), {2, 5, 64});
        for (const auto& h : trace.h_layers) expect(name, "h_n", h.shape(), {2, 5, 64});
        expect(name, "logits", logits.shape(), {2, 10});
        if (trace.k_layers.size() != 4 || trace.h_layers.size() != 4) {
            ok = false;
            std::printf("  %s: expected 4 encoder layers per level\n", name);
        }
    }
    for (const char* name : {"vit4", "vit16"}) {
        auto cfg = build_variant(name, 28, 28);
        Rng rng(1);
        auto params = init_params<float>(cfg, rng);
        ForwardTrace<float> trace;
        Tensor<float> logits = forward(cfg, params, images, &trace);
        const std::size_t side = cfg.grid_side(), ntok = cfg.tokens_level1();
        expect(name, "f1", trace.f1.shape(), {2, side, side, 64});
        expect(name, "x_p", trace.x_p.shape(), {2, ntok, 64});
        expect(name, "h", trace.h_in.shape(), {2, ntok + 1, 64});
        for (const auto& h : trace.h_layers) expect(name, "h_n", h.shape(), {2, ntok + 1, 64});
        expect(name, "logits", logits.shape(), {2, 10});
    }
    if (ok) {
        std::printf("  five variants on 28x28: every stage matches the pipeline table; "
                    "level-1 tokens 16, level-2 tokens 4 (+1 class)\n");
    }
    return ok;
}

// ---------------------------------------------------------------------------
// training protocols shared by 6-10

struct ProtocolResult {
    TrainResult train;
    ModelConfig model;
    DatasetPair data;
};

ProtocolResult run_protocol(const RunConfig& cfg, const std::string& checkpoint_path,
                            bool echo_epochs) {
    ProtocolResult r;
    r.data = load_dataset(cfg.dataset, data_root());
    r.data.train = head_subset(r.data.train, cfg.train_limit);
    r.data.test = head_subset(r.data.test, cfg.test_limit);
    r.model = to_model_config(cfg, r.data.train.height(), r.data.train.width(), 1);

    TrainSettings settings;
    settings.adam = to_adam_config(cfg);
    settings.plan = to_batch_plan(cfg);
    settings.epochs = cfg.epochs;
    settings.seed = cfg.seed;
    settings.checkpoint_path = checkpoint_path;
    settings.config_echo = serialize_config(cfg);
    if (echo_epochs) {
        settings.on_epoch = [](const EpochRecord& rec) {
            std::printf("  epoch %llu: train loss %.6f, test accuracy %.2f%%\n",
                        static_cast<unsigned long long>(rec.epoch),
                        static_cast<double>(rec.train_loss), rec.test_accuracy * 100.0);
            std::fflush(stdout);
        };
    }
    r.train = train_model(r.model, r.data, settings);
    return r;
}

// 6: the pinned smoke protocol — config defaults (seed 0, batch 128,
// lr 1e-3) at D=32, L=2 on the first 6,000 MNIST images, 5 epochs.
bool criterion_smoke() {
    if (!dataset_ready("mnist")) {
        std::printf("  mnist not present under %s\n", data_root().c_str());
        return false;
    }
    const auto start = std::chrono::steady_clock::now();
    RunConfig cfg;
    cfg.variant = "gcn_hvit_1";
    cfg.dataset = "mnist";
    cfg.embed_dim = 32;
    cfg.layers = 2;
    cfg.heads = 4;
    cfg.train_limit = 6000;
    cfg.epochs = 5;
    auto result = run_protocol(cfg, "", true);
    const double acc = result.train.history.back().test_accuracy;
    const double elapsed = seconds_since(start);
    std::printf("  final test accuracy %.2f%% (floor 92%%), %.0fs (budget 900s)\n", acc * 100.0,
                elapsed);
    return acc >= 0.92 && elapsed < 900.0;
}

// 7: full MNIST, 30 epochs, default hyperparameters.
bool criterion_table2() {
    if (!dataset_ready("mnist")) {
        std::printf("  mnist not present under %s\n", data_root().c_str());
        return false;
    }
    RunConfig cfg;  // defaults: gcn_hvit_1, D=64, L=4, heads=4, 30 epochs, seed 0
    auto result = run_protocol(cfg, (work_dir() / "table2.ckpt").string(), true);
    const double acc = result.train.history.back().test_accuracy;
    std::printf("  final test accuracy %.2f%% (floor 98.0%%)\n", acc * 100.0);
    return acc >= 0.98;
}

// 8: ablation ordering on a FashionMNIST subset over 3 seeds.
bool criterion_ablation() {
    if (!dataset_ready("fashion_mnist")) {
        std::printf("  fashion_mnist not present under %s\n", data_root().c_str());
        return false;
    }
    const std::vector<std::string> variants = {"vit4", "hvit", "gcn_hvit_1", "gcn_hvit_2"};
    const std::vector<std::uint64_t> seeds = {0, 1, 2};
    std::vector<double> means;
    for (const auto& variant : variants) {
        double total = 0.0;
        for (auto seed : seeds) {
            RunConfig cfg;
            cfg.variant = variant;
            cfg.dataset = "fashion_mnist";
            cfg.train_limit = 10000;
            cfg.epochs = 10;
            cfg.seed = seed;
            auto result = run_protocol(cfg, "", false);
            const double acc = result.train.history.back().test_accuracy;
            std::printf("  %s seed %llu: %.2f%%\n", variant.c_str(),
                        static_cast<unsigned long long>(seed), acc * 100.0);
            std::fflush(stdout);
            total += acc;
        }
        means.push_back(total / static_cast<double>(seeds.size()));
    }
    std::printf("  means: vit4 %.2f%%, hvit %.2f%%, gcn_hvit_1 %.2f%%, gcn_hvit_2 %.2f%%\n",
                means[0] * 100.0, means[1] * 100.0, means[2] * 100.0, means[3] * 100.0);
    std::printf("  required ordering: mean(gcn_hvit_1) > mean(vit4); hvit and gcn_hvit_2 reported "
                "without a hard requirement\n");
    return means[2] > means[0];
}

// Small deterministic protocol shared by criteria 9 and 10.
RunConfig small_protocol() {
    RunConfig cfg;
    cfg.variant = "gcn_hvit_1";
    cfg.dataset = "mnist";
    cfg.embed_dim = 32;
    cfg.layers = 2;
    cfg.heads = 4;
    cfg.train_limit = 1024;
    cfg.test_limit = 1000;
    cfg.epochs = 2;
    return cfg;
}

// 9: bitwise-identical artifacts from identical runs.
bool criterion_determinism() {
    if (!dataset_ready("mnist")) {
        std::printf("  mnist not present under %s\n", data_root().c_str());
        return false;
    }
    const auto dir = work_dir();
    const std::string ckpt_a = (dir / "det_a.ckpt").string();
    const std::string ckpt_b = (dir / "det_b.ckpt").string();
    auto a = run_protocol(small_protocol(), ckpt_a, false);
    auto b = run_protocol(small_protocol(), ckpt_b, false);

    const std::string metrics_a = format_metric_records(a.train.history);
    const std::string metrics_b = format_metric_records(b.train.history);
    std::ofstream(dir / "det_a.metrics", std::ios::binary) << metrics_a;
    std::ofstream(dir / "det_b.metrics", std::ios::binary) << metrics_b;

    const bool ckpt_same = read_bytes(ckpt_a) == read_bytes(ckpt_b);
    const bool metrics_same =
        read_bytes((dir / "det_a.metrics").string()) == read_bytes((dir / "det_b.metrics").string());
    std::printf("  checkpoints byte-identical: %s; metric files byte-identical: %s\n",
                ckpt_same ? "yes" : "no", metrics_same ? "yes" : "no");
    return ckpt_same && metrics_same;
}

// 10: save -> load -> save byte identity, and eval equals the logged value.
bool criterion_round_trip() {
    if (!dataset_ready("mnist")) {
        std::printf("  mnist not present under %s\n", data_root().c_str());
        return false;
    }
    const auto dir = work_dir();
    const std::string first = (dir / "rt_first.ckpt").string();
    auto run = run_protocol(small_protocol(), first, false);

    CheckpointData loaded = read_checkpoint(first);
    const std::string second = (dir / "rt_second.ckpt").string();
    write_checkpoint(second, loaded);
    const bool bytes_same = read_bytes(first) == read_bytes(second);

    Rng rng(0);
    ModelParams<float> params = init_params<float>(run.model, rng);
    fill_params_from_checkpoint(loaded, params, nullptr);
    const double acc = evaluate(run.model, params, run.data.test);
    const double logged = run.train.history.back().test_accuracy;
    std::printf("  save->load->save byte-identical: %s; eval after reload %.4f%% vs logged %.4f%%\n",
                bytes_same ? "yes" : "no", acc * 100.0, logged * 100.0);
    return bytes_same && acc == logged;
}

struct Criterion {
    int number;
    const char* summary;
    bool (*run)();
};

const Criterion kCriteria[] = {
    {1, "gradient suite: ops < 1e-5, end-to-end < 1e-4, under one minute", criterion_gradients},
    {2, "GCN embedding equals the dense oracle on 100 random 4x4 instances per mode",
     criterion_gcn_oracle},
    {3, "adjacency edge counts, 2x2 edge set, row-stochastic normalization", criterion_adjacency},
    {4, "one-way GCN locality on the 4x4 grid, exhaustive", criterion_locality},
    {5, "forward-trace shapes for all five variants on 28x28", criterion_shapes},
    {6, "smoke training reaches >= 92% on the MNIST test set within 15 minutes", criterion_smoke},
    {7, "full MNIST, 30 epochs, default hyperparameters reaches >= 98.0%", criterion_table2},
    {8, "FashionMNIST-10k ablation: mean(gcn_hvit_1) > mean(vit4) over 3 seeds",
     criterion_ablation},
    {9, "identical runs produce bitwise-identical checkpoints and metrics", criterion_determinism},
    {10, "checkpoint save->load->save byte identity and exact eval agreement",
     criterion_round_trip},
};

}  // namespace

int main(int argc, char** argv) {
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
            selected.push_back(std::atoi(argv[++i]));
        } else {
            std::fprintf(stderr, "usage: %s [--criterion N]...\n", argv[0]);
            return 2;
        }
    }
    if (selected.empty()) {
        for (const auto& c : kCriteria) selected.push_back(c.number);
    }

    bool all_ok = true;
    for (int number : selected) {
        const Criterion* found = nullptr;
        for (const auto& c : kCriteria) {
            if (c.number == number) found = &c;
        }
        if (found == nullptr) {
            std::fprintf(stderr, "no criterion %d\n", number);
            return 2;
        }
        const bool ok = found->run();
        all_ok = all_ok && ok;
        std::printf("criterion %d: %s — %s\n", found->number, ok ? "PASS" : "FAIL",
                    found->summary);
        std::fflush(stdout);
    }
    return all_ok ? 0 : 1;
}
