#include "ghvit/train.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace ghvit {

AdamState init_adam(const ModelParams<float>& params) {
    AdamState state;
    state.m.reserve(params.named.size());
    state.v.reserve(params.named.size());
    for (const auto& [name, t] : params.named) {
        state.m.emplace_back(t.numel(), 0.0f);
        state.v.emplace_back(t.numel(), 0.0f);
    }
    return state;
}

void zero_param_grads(ModelParams<float>& params) {
    for (auto& [name, t] : params.named) t.zero_grad();
}

void adam_step(ModelParams<float>& params, AdamState& state, const AdamConfig& cfg) {
    if (state.m.size() != params.named.size()) {
        throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.m.size()) +
                                    " tensors, params have " + std::to_string(params.named.size()));
    }
    state.t += 1;
    const float bc1 = 1.0f - std::pow(cfg.beta1, static_cast<float>(state.t));
    const float bc2 = 1.0f - std::pow(cfg.beta2, static_cast<float>(state.t));
    for (std::size_t i = 0; i < params.named.size(); ++i) {
        auto& t = params.named[i].second;
        const auto& g = t.grad_accum();
        auto& values = t.mutable_values();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != values.size()) {
            throw std::invalid_argument("adam_step: moment size mismatch for '" +
                                        params.named[i].first + "'");
        }
        for (std::size_t j = 0; j < values.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0f - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0f - cfg.beta2) * g[j] * g[j];
            const float m_hat = m[j] / bc1;
            const float v_hat = v[j] / bc2;
            values[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
    }
}

double evaluate(const ModelConfig& cfg, const ModelParams<float>& params, const DatasetSplit& split,
                std::size_t batch_size) {
    NoGradGuard no_grad;
    const std::size_t count = split.count();
    std::size_t correct = 0;
    std::vector<std::size_t> indices;
    for (std::size_t start = 0; start < count; start += batch_size) {
        const std::size_t end = std::min(count, start + batch_size);
        indices.resize(end - start);
        for (std::size_t i = start; i < end; ++i) indices[i - start] = i;
        const Batch batch = gather_batch(split, indices);
        const Tensor<float> logits = forward(cfg, params, batch.images);
        const std::size_t k = logits.extent(1);
        const auto& lv = logits.values();
        for (std::size_t i = 0; i < batch.labels.size(); ++i) {
            const float* row = lv.data() + i * k;
            std::size_t best = 0;
            for (std::size_t j = 1; j < k; ++j) {
                if (row[j] > row[best]) best = j;
            }
            if (static_cast<int>(best) == batch.labels[i]) ++correct;
        }
    }
    return count == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(count);
}

namespace {

std::string format_float(float v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

std::string format_metric_records(const std::vector<EpochRecord>& history) {
    std::string out;
    for (const auto& rec : history) {
        out += std::to_string(rec.epoch);
        out += ',';
        out += format_float(rec.train_loss);
        out += ',';
        out += format_double(rec.test_accuracy);
        out += '\n';
    }
    return out;
}

std::vector<EpochRecord> parse_metric_records(const std::string& text) {
    std::vector<EpochRecord> history;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        ++line_no;
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        const std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.empty()) continue;
        const std::size_t c1 = line.find(',');
        const std::size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos) {
            throw std::runtime_error("metrics line " + std::to_string(line_no) +
                                     ": expected 3 comma-separated fields: '" + line + "'");
        }
        EpochRecord rec;
        const char* b = line.data();
        auto r1 = std::from_chars(b, b + c1, rec.epoch);
        auto r2 = std::from_chars(b + c1 + 1, b + c2, rec.train_loss);
        auto r3 = std::from_chars(b + c2 + 1, b + line.size(), rec.test_accuracy);
        if (r1.ec != std::errc{} || r1.ptr != b + c1 || r2.ec != std::errc{} || r2.ptr != b + c2 ||
            r3.ec != std::errc{} || r3.ptr != b + line.size()) {
            throw std::runtime_error("metrics line " + std::to_string(line_no) +
                                     ": malformed number in '" + line + "'");
        }
        history.push_back(rec);
    }
    return history;
}

TrainResult train_model(const ModelConfig& cfg, const DatasetPair& data,
                        const TrainSettings& settings) {
    cfg.validate();
    Rng rng(settings.seed);
    TrainResult result;
    result.params = init_params<float>(cfg, rng);
    result.adam = init_adam(result.params);

    auto save = [&](std::uint64_t epoch) {
        if (settings.checkpoint_path.empty()) return;
        write_checkpoint(settings.checkpoint_path,
                         make_checkpoint(settings.config_echo, result.params, result.adam, epoch,
                                         settings.seed, result.history));
    };

    for (std::uint64_t epoch = 0; epoch < settings.epochs; ++epoch) {
        const auto batch_indices = epoch_batch_indices(data.train.count(), settings.plan, epoch);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t bi = 0; bi < batch_indices.size(); ++bi) {
            const Batch batch = gather_batch(data.train, batch_indices[bi]);
            auto abort_nonfinite = [&](const std::string& detail) -> std::runtime_error {
                return std::runtime_error("non-finite loss at epoch " + std::to_string(epoch + 1) +
                                          ", batch " + std::to_string(bi) + detail +
                                          "; last completed epoch's checkpoint is preserved");
            };
            Tensor<float> loss;
            try {
                const Tensor<float> logits = forward(cfg, result.params, batch.images);
                loss = cross_entropy(logits, batch.labels);
            } catch (const std::invalid_argument& e) {
                // A diverging run usually surfaces as a non-finite value
                // inside an op before the loss itself overflows; fold that
                // into the same abort so the batch index is always reported.
                if (std::string(e.what()).find("non-finite") == std::string::npos) throw;
                throw abort_nonfinite(std::string(" (") + e.what() + ")");
            }
            const float loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                throw abort_nonfinite("");
            }
            zero_param_grads(result.params);
            loss.backward();
            adam_step(result.params, result.adam, settings.adam);
            loss_sum += static_cast<double>(loss_value) * static_cast<double>(batch.labels.size());
            seen += batch.labels.size();
        }
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.train_loss = seen == 0 ? 0.0f : static_cast<float>(loss_sum / static_cast<double>(seen));
        rec.test_accuracy = evaluate(cfg, result.params, data.test);
        result.history.push_back(rec);
        if (settings.on_epoch) settings.on_epoch(rec);
        save(epoch + 1);
    }
    if (settings.epochs == 0) save(0);
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

void append_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void append_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f32(std::string& out, float v) {
    append_u32(out, std::bit_cast<std::uint32_t>(v));
}

struct ByteReader {
    const std::vector<unsigned char>& bytes;
    std::size_t pos{0};

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) {
            throw std::runtime_error("checkpoint truncated at byte " + std::to_string(pos));
        }
    }
    std::uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = std::uint16_t(bytes[pos]) | (std::uint16_t(bytes[pos + 1]) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
};

constexpr char kMagic[4] = {'G', 'H', 'V', 'T'};

}  // namespace

const Tensor<float>* CheckpointData::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

std::string CheckpointData::config_value(const std::string& key) const {
    std::size_t pos = 0;
    while (pos < config_text.size()) {
        std::size_t eol = config_text.find('\n', pos);
        if (eol == std::string::npos) eol = config_text.size();
        const std::string line = config_text.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.size() > key.size() && line.compare(0, key.size(), key) == 0 &&
            line[key.size()] == '=') {
            return line.substr(key.size() + 1);
        }
    }
    throw std::runtime_error("checkpoint config has no key '" + key + "'");
}

void write_checkpoint(const std::string& path, const CheckpointData& data) {
    std::string out;
    out.append(kMagic, 4);
    out.push_back(static_cast<char>(data.version));
    append_u32(out, static_cast<std::uint32_t>(data.config_text.size()));
    out += data.config_text;
    append_u32(out, static_cast<std::uint32_t>(data.tensors.size()));
    for (const auto& [name, t] : data.tensors) {
        if (name.size() > 0xffff) {
            throw std::invalid_argument("checkpoint tensor name too long: '" + name + "'");
        }
        append_u16(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(t.rank()));
        for (std::size_t i = 0; i < t.rank(); ++i) {
            append_u32(out, static_cast<std::uint32_t>(t.extent(i)));
        }
        for (float v : t.values()) append_f32(out, v);
    }
    append_u32(out, static_cast<std::uint32_t>(data.metrics_text.size()));
    out += data.metrics_text;

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write '" + tmp + "'");
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw std::runtime_error("short write to '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    ByteReader r{bytes};

    const std::string magic = r.str(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        throw std::runtime_error("'" + path + "': bad checkpoint magic");
    }
    CheckpointData data;
    data.version = r.u8();
    if (data.version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint version " + std::to_string(data.version) +
                                 " != supported " + std::to_string(kCheckpointVersion));
    }
    data.config_text = r.str(r.u32());
    const std::uint32_t tensor_count = r.u32();
    data.tensors.reserve(tensor_count);
    for (std::uint32_t i = 0; i < tensor_count; ++i) {
        const std::string name = r.str(r.u16());
        const std::uint8_t rank = r.u8();
        Shape shape(rank);
        for (std::uint8_t d = 0; d < rank; ++d) shape[d] = r.u32();
        std::vector<float> values(shape_numel(shape));
        for (auto& v : values) v = r.f32();
        data.tensors.emplace_back(name, Tensor<float>::from_vector(std::move(shape), std::move(values)));
    }
    data.metrics_text = r.str(r.u32());
    if (r.pos != bytes.size()) {
        throw std::runtime_error("'" + path + "': " + std::to_string(bytes.size() - r.pos) +
                                 " trailing bytes after metrics block");
    }
    return data;
}

CheckpointData make_checkpoint(const std::string& config_echo, const ModelParams<float>& params,
                               const AdamState& adam, std::uint64_t epoch, std::uint64_t seed,
                               const std::vector<EpochRecord>& history) {
    CheckpointData data;
    data.config_text = config_echo;
    if (!data.config_text.empty() && data.config_text.back() != '\n') data.config_text += '\n';
    data.config_text += "ckpt.seed=" + std::to_string(seed) + '\n';
    data.config_text += "ckpt.epoch=" + std::to_string(epoch) + '\n';
    data.config_text += "ckpt.adam_t=" + std::to_string(adam.t) + '\n';
    for (const auto& [name, t] : params.named) data.tensors.emplace_back(name, t);
    for (std::size_t i = 0; i < params.named.size(); ++i) {
        data.tensors.emplace_back(
            "adam.m." + params.named[i].first,
            Tensor<float>::from_vector(params.named[i].second.shape(), adam.m[i]));
        data.tensors.emplace_back(
            "adam.v." + params.named[i].first,
            Tensor<float>::from_vector(params.named[i].second.shape(), adam.v[i]));
    }
    data.metrics_text = format_metric_records(history);
    return data;
}

void fill_params_from_checkpoint(const CheckpointData& data, ModelParams<float>& params,
                                 AdamState* adam) {
    for (auto& [name, t] : params.named) {
        const Tensor<float>* src = data.find(name);
        if (!src) throw std::runtime_error("checkpoint missing tensor '" + name + "'");
        if (src->shape() != t.shape()) {
            throw std::runtime_error("checkpoint tensor '" + name + "' has shape " +
                                     shape_str(src->shape()) + ", model expects " +
                                     shape_str(t.shape()));
        }
        t.mutable_values() = src->values();
    }
    if (adam) {
        *adam = init_adam(params);
        for (std::size_t i = 0; i < params.named.size(); ++i) {
            const std::string& pname = params.named[i].first;
            const Tensor<float>* m = data.find("adam.m." + pname);
            const Tensor<float>* v = data.find("adam.v." + pname);
            if (!m || !v) {
                throw std::runtime_error("checkpoint missing optimizer moments for '" + pname + "'");
            }
            adam->m[i] = m->values();
            adam->v[i] = v->values();
        }
        const std::string t_str = data.config_value("ckpt.adam_t");
        adam->t = std::stoull(t_str);
    }
}

}  // namespace ghvit
