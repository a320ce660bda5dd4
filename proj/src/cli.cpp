#include "ghvit/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ghvit/config.hpp"
#include "ghvit/data.hpp"
#include "ghvit/gradcheck.hpp"
#include "ghvit/model.hpp"
#include "ghvit/train.hpp"

namespace ghvit {

namespace {

RunConfig effective_config(const CliOptions& opt) {
    RunConfig cfg = opt.config_path.empty() ? RunConfig{} : load_config_file(opt.config_path);
    if (opt.variant) apply_config_entry(cfg, "variant", *opt.variant);
    if (opt.dataset) apply_config_entry(cfg, "dataset", *opt.dataset);
    if (opt.data_dir) apply_config_entry(cfg, "data_dir", *opt.data_dir);
    if (opt.out) apply_config_entry(cfg, "out", *opt.out);
    if (opt.checkpoint) apply_config_entry(cfg, "checkpoint", *opt.checkpoint);
    if (opt.epochs) apply_config_entry(cfg, "epochs", std::to_string(*opt.epochs));
    if (opt.seed) apply_config_entry(cfg, "seed", std::to_string(*opt.seed));
    cfg.data_dir = resolve_data_dir(cfg);
    return cfg;
}

void require_dataset_files(const RunConfig& cfg) {
    const std::string dir = cfg.data_dir + "/" + cfg.dataset;
    for (const char* name : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"}) {
        const std::string path = dir + "/" + name;
        if (!std::filesystem::exists(path)) {
            throw std::runtime_error("dataset file missing: '" + path + "'");
        }
    }
}

DatasetPair load_limited(const RunConfig& cfg) {
    DatasetPair data = load_dataset(cfg.dataset, cfg.data_dir);
    data.train = head_subset(data.train, cfg.train_limit);
    data.test = head_subset(data.test, cfg.test_limit);
    return data;
}

// The checkpoint's embedded config, minus the reserved ckpt.* bookkeeping
// lines that are not RunConfig keys.
RunConfig parse_checkpoint_config(const std::string& text) {
    std::string filtered;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("ckpt.", 0) == 0) continue;
        filtered += line;
        filtered += '\n';
    }
    return parse_config_text(filtered);
}

}  // namespace

int cmd_train(const CliOptions& opt) {
    try {
        RunConfig cfg = effective_config(opt);
        require_dataset_files(cfg);
        if (!cfg.out.empty()) std::filesystem::create_directories(cfg.out);

        const DatasetPair data = load_limited(cfg);
        const ModelConfig model =
            to_model_config(cfg, data.train.height(), data.train.width(), 1);

        const std::string base =
            cfg.out + "/" + cfg.variant + "-" + cfg.dataset + "-s" + std::to_string(cfg.seed);
        const std::string ckpt_path = cfg.checkpoint.empty() ? base + ".ckpt" : cfg.checkpoint;
        const std::string metrics_path = base + ".metrics";

        TrainSettings settings;
        settings.adam = to_adam_config(cfg);
        settings.plan = to_batch_plan(cfg);
        settings.epochs = cfg.epochs;
        settings.seed = cfg.seed;
        settings.checkpoint_path = ckpt_path;
        settings.config_echo = serialize_config(cfg);
        settings.on_epoch = [](const EpochRecord& rec) {
            std::printf("epoch %llu: train loss %.6f, test accuracy %.2f%%\n",
                        static_cast<unsigned long long>(rec.epoch),
                        static_cast<double>(rec.train_loss), rec.test_accuracy * 100.0);
            std::fflush(stdout);
        };

        const TrainResult result = train_model(model, data, settings);

        std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
        if (!metrics) throw std::runtime_error("cannot write '" + metrics_path + "'");
        metrics << format_metric_records(result.history);
        metrics.close();

        std::printf("checkpoint: %s\nmetrics: %s\n", ckpt_path.c_str(), metrics_path.c_str());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

int cmd_eval(const CliOptions& opt) {
    try {
        std::string ckpt_path = opt.checkpoint.value_or("");
        if (ckpt_path.empty() && !opt.config_path.empty()) {
            ckpt_path = load_config_file(opt.config_path).checkpoint;
        }
        if (ckpt_path.empty()) throw std::runtime_error("no checkpoint given (--checkpoint)");
        if (opt.split != "train" && opt.split != "test") {
            throw std::runtime_error("--split must be 'train' or 'test', got '" + opt.split + "'");
        }

        const CheckpointData data = read_checkpoint(ckpt_path);
        RunConfig cfg = parse_checkpoint_config(data.config_text);
        if (opt.dataset) apply_config_entry(cfg, "dataset", *opt.dataset);
        if (opt.data_dir) apply_config_entry(cfg, "data_dir", *opt.data_dir);
        cfg.data_dir = resolve_data_dir(cfg);
        require_dataset_files(cfg);

        const DatasetPair pair = load_limited(cfg);
        const DatasetSplit& split = opt.split == "train" ? pair.train : pair.test;
        const ModelConfig model = to_model_config(cfg, split.height(), split.width(), 1);
        Rng rng(0);
        ModelParams<float> params = init_params<float>(model, rng);
        fill_params_from_checkpoint(data, params, nullptr);

        const double acc = evaluate(model, params, split);
        std::printf("%s accuracy: %.2f%%\n", opt.split.c_str(), acc * 100.0);
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

int cmd_gradcheck(std::uint64_t seed) {
    try {
        bool all_pass = true;
        std::string failures;
        auto report = [&](const GradCheckReport& r, double tol) {
            const bool ok = r.pass(tol);
            all_pass = all_pass && ok;
            if (!ok) failures += (failures.empty() ? "" : ", ") + r.name;
            std::printf("%-28s max rel err %.3e  (%zu values, tol %.0e)  %s\n", r.name.c_str(),
                        r.max_rel_err, r.checked, tol, ok ? "PASS" : "FAIL");
        };
        for (const auto& r : run_op_suite(seed)) report(r, 1e-5);
        for (const auto& r : run_model_suite(seed)) report(r, 1e-4);
        if (!all_pass) {
            std::fprintf(stderr, "gradcheck FAILED: %s\n", failures.c_str());
            return 1;
        }
        std::printf("gradcheck passed\n");
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

int cmd_metrics_export(const CliOptions& opt) {
    try {
        if (opt.metrics_path.empty()) throw std::runtime_error("no metrics file given");
        std::string out_path = opt.out.value_or("");
        if (out_path.empty()) throw std::runtime_error("no output path given (--out)");

        std::ifstream in(opt.metrics_path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open '" + opt.metrics_path + "'");
        std::ostringstream text;
        text << in.rdbuf();
        const std::vector<EpochRecord> history = parse_metric_records(text.str());

        std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + out_path + "'");
        out << "epoch,train_loss,test_accuracy\n" << format_metric_records(history);
        out.close();
        std::printf("wrote %zu rows to %s\n", history.size(), out_path.c_str());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace ghvit
