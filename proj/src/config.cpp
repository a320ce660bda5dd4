#include "ghvit/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ghvit {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T v{};
    const char* b = value.data();
    const char* e = b + value.size();
    auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc{} || res.ptr != e) {
        throw std::invalid_argument("config key '" + key + "': cannot parse value '" + value + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "0" || value == "false") return false;
    if (value == "1" || value == "true") return true;
    throw std::invalid_argument("config key '" + key + "': expected 0/1/true/false, got '" + value +
                                "'");
}

std::string format_float(float v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "variant") {
        parse_variant(value);  // reject unknown names early
        cfg.variant = value;
    } else if (key == "dataset") {
        cfg.dataset = value;
    } else if (key == "data_dir") {
        cfg.data_dir = value;
    } else if (key == "classes") {
        cfg.classes = parse_number<std::size_t>(key, value);
    } else if (key == "embed_dim") {
        cfg.embed_dim = parse_number<std::size_t>(key, value);
    } else if (key == "layers") {
        cfg.layers = parse_number<std::size_t>(key, value);
    } else if (key == "heads") {
        cfg.heads = parse_number<std::size_t>(key, value);
    } else if (key == "lr") {
        cfg.lr = parse_number<float>(key, value);
    } else if (key == "beta1") {
        cfg.beta1 = parse_number<float>(key, value);
    } else if (key == "beta2") {
        cfg.beta2 = parse_number<float>(key, value);
    } else if (key == "adam_eps") {
        cfg.adam_eps = parse_number<float>(key, value);
    } else if (key == "batch_size") {
        cfg.batch_size = parse_number<std::size_t>(key, value);
        if (cfg.batch_size == 0) throw std::invalid_argument("config key 'batch_size': must be >= 1");
    } else if (key == "drop_last") {
        cfg.drop_last = parse_bool(key, value);
    } else if (key == "epochs") {
        cfg.epochs = parse_number<std::size_t>(key, value);
    } else if (key == "seed") {
        cfg.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "train_limit") {
        cfg.train_limit = parse_number<std::size_t>(key, value);
    } else if (key == "test_limit") {
        cfg.test_limit = parse_number<std::size_t>(key, value);
    } else if (key == "out") {
        cfg.out = value;
    } else if (key == "checkpoint") {
        cfg.checkpoint = value;
    } else {
        throw std::invalid_argument("unknown config key '" + key + "'");
    }
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": expected key=value, got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key");
        }
        if (!seen.insert(key).second) {
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": duplicate key '" + key + "'");
        }
        apply_config_entry(cfg, key, value);
    }
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config_text(text.str());
}

std::string serialize_config(const RunConfig& cfg) {
    std::string out;
    auto kv = [&out](const std::string& key, const std::string& value) {
        out += key;
        out += '=';
        out += value;
        out += '\n';
    };
    kv("variant", cfg.variant);
    kv("dataset", cfg.dataset);
    kv("data_dir", cfg.data_dir);
    kv("classes", std::to_string(cfg.classes));
    kv("embed_dim", std::to_string(cfg.embed_dim));
    kv("layers", std::to_string(cfg.layers));
    kv("heads", std::to_string(cfg.heads));
    kv("lr", format_float(cfg.lr));
    kv("beta1", format_float(cfg.beta1));
    kv("beta2", format_float(cfg.beta2));
    kv("adam_eps", format_float(cfg.adam_eps));
    kv("batch_size", std::to_string(cfg.batch_size));
    kv("drop_last", cfg.drop_last ? "1" : "0");
    kv("epochs", std::to_string(cfg.epochs));
    kv("seed", std::to_string(cfg.seed));
    kv("train_limit", std::to_string(cfg.train_limit));
    kv("test_limit", std::to_string(cfg.test_limit));
    kv("out", cfg.out);
    kv("checkpoint", cfg.checkpoint);
    return out;
}

std::string resolve_data_dir(const RunConfig& cfg) {
    if (!cfg.data_dir.empty()) return cfg.data_dir;
    if (const char* env = std::getenv("GHVIT_DATA_DIR"); env && *env) return env;
    return "data";
}

ModelConfig to_model_config(const RunConfig& cfg, std::size_t image_h, std::size_t image_w,
                            std::size_t channels) {
    ModelConfig model = build_variant(cfg.variant, image_h, image_w, channels);
    model.embed_dim = cfg.embed_dim;
    model.layers_per_level = cfg.layers;
    model.heads = cfg.heads;
    model.num_classes = cfg.classes;
    model.validate();
    return model;
}

AdamConfig to_adam_config(const RunConfig& cfg) {
    AdamConfig adam;
    adam.lr = cfg.lr;
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.eps = cfg.adam_eps;
    return adam;
}

BatchPlan to_batch_plan(const RunConfig& cfg) {
    BatchPlan plan;
    plan.batch_size = cfg.batch_size;
    plan.seed = cfg.seed;
    plan.drop_last = cfg.drop_last;
    return plan;
}

}  // namespace ghvit
