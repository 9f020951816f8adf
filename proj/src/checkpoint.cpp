#include "sparsealloc/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <iterator>

#include "sparsealloc/errors.hpp"

namespace sparsealloc {

using nlohmann::json;

AllocationPolicy PolicySpec::instantiate(std::size_t batch, FeatureBudgets* budgets_out) const {
    if (batch == 0) throw InvalidArgument("batch size must be positive");
    AllocationPolicy policy;
    policy.criterion = criterion;
    policy.rectify = rectify;
    switch (kind) {
    case PolicyKind::TokenChoice: {
        const double k = std::round(expected_k);
        if (k < 1.0 || std::abs(k - expected_k) > 1e-9) {
            throw InvalidArgument("token choice needs an integer k >= 1, got " + std::to_string(expected_k));
        }
        policy.rule = TokenChoice{static_cast<std::size_t>(k)};
        break;
    }
    case PolicyKind::MutualChoice: {
        const double m = std::round(expected_k * static_cast<double>(batch));
        policy.rule = MutualChoice{static_cast<std::size_t>(std::max(1.0, m))};
        break;
    }
    case PolicyKind::FeatureChoice: {
        if (ranks.empty()) throw InvalidArgument("feature choice policy has no density ranks");
        BudgetRequest req;
        req.expected_k = expected_k;
        req.features = ranks.size();
        req.batch = batch;
        req.alpha = zipf_alpha;
        req.beta = zipf_beta;
        req.m_max = m_max;
        FeatureBudgets budgets = compute_feature_budgets(req);
        const std::size_t largest = *std::max_element(budgets.m.begin(), budgets.m.end());
        if (largest > batch) {
            throw BudgetError(BudgetFault::Infeasible,
                              "feature choice needs a sufficiently large minibatch: the densest feature is budgeted " +
                                  std::to_string(largest) + " tokens but a batch holds " + std::to_string(batch) +
                                  "; raise batch_size or cap zipf.m_max");
        }
        policy.rule = FeatureChoice{budgets_by_feature(budgets, ranks)};
        if (budgets_out) *budgets_out = std::move(budgets);
        break;
    }
    case PolicyKind::Relu:
        policy.rule = ReluBaseline{};
        break;
    }
    return policy;
}

json to_json(const PolicySpec& s) {
    json j;
    j["kind"] = policy_kind_name(s.kind);
    j["expected_k"] = s.expected_k;
    j["criterion"] = criterion_name(s.criterion);
    j["rectify"] = s.rectify;
    if (s.kind == PolicyKind::FeatureChoice) {
        j["ranks"] = s.ranks;
        j["zipf_alpha"] = s.zipf_alpha;
        j["zipf_beta"] = s.zipf_beta;
        j["m_max"] = s.m_max == std::numeric_limits<std::size_t>::max() ? json(nullptr) : json(s.m_max);
    }
    return j;
}

PolicySpec policy_spec_from_json(const json& j) {
    PolicySpec s;
    try {
        s.kind = parse_policy_kind(j.at("kind").get<std::string>());
        s.expected_k = j.at("expected_k").get<double>();
        s.criterion = parse_criterion(j.at("criterion").get<std::string>());
        s.rectify = j.at("rectify").get<bool>();
        if (s.kind == PolicyKind::FeatureChoice) {
            s.ranks = j.at("ranks").get<std::vector<std::size_t>>();
            s.zipf_alpha = j.at("zipf_alpha").get<double>();
            s.zipf_beta = j.at("zipf_beta").get<double>();
            s.m_max = j.at("m_max").is_null() ? std::numeric_limits<std::size_t>::max()
                                              : j.at("m_max").get<std::size_t>();
        }
    } catch (const json::exception& e) {
        throw FormatError(FormatFault::BadHeader, std::string("malformed policy in checkpoint: ") + e.what());
    }
    return s;
}

namespace {

struct BlockRef {
    const char* name;
    Eigen::Index rows;
    Eigen::Index cols;
};

void append_f32(std::string& out, const double* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(data[i]));
        for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
    }
}

void read_f32(const std::string& bytes, std::size_t offset, double* out, std::size_t count, const std::string& file) {
    if (offset + 4 * count > bytes.size()) throw FormatError(FormatFault::Truncated, file + " is truncated");
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + 4 * i + b])) << (8 * b);
        }
        const float v = std::bit_cast<float>(bits);
        if (!std::isfinite(v)) throw FormatError(FormatFault::NonFinite, file + " holds a non-finite value");
        out[i] = v;
    }
}

// Serialises the four parameter-shaped blocks and records their byte offsets.
template <typename Blocks>
json pack_blocks(std::string& out, const Blocks& b, const std::string& prefix) {
    json layout = json::array();
    auto emit = [&](const std::string& name, const double* data, Eigen::Index rows, Eigen::Index cols) {
        layout.push_back({{"name", prefix + name}, {"rows", rows}, {"cols", cols}, {"offset", out.size()}});
        append_f32(out, data, static_cast<std::size_t>(rows * cols));
    };
    emit("w_enc", b.w_enc.data(), b.w_enc.rows(), b.w_enc.cols());
    emit("b_enc", b.b_enc.data(), b.b_enc.size(), 1);
    emit("w_dec", b.w_dec.data(), b.w_dec.rows(), b.w_dec.cols());
    emit("b_pre", b.b_pre.data(), b.b_pre.size(), 1);
    return layout;
}

template <typename Blocks>
void unpack_blocks(const std::string& bytes, const json& layout, Blocks& b, const std::string& prefix,
                   const std::string& file) {
    auto find = [&](const std::string& name) -> const json& {
        for (const auto& entry : layout) {
            if (entry.at("name").get<std::string>() == prefix + name) return entry;
        }
        throw FormatError(FormatFault::BadHeader, file + ": block " + prefix + name + " missing from meta.json");
    };
    auto fill = [&](const std::string& name, double* data, Eigen::Index rows, Eigen::Index cols) {
        const json& e = find(name);
        if (e.at("rows").get<Eigen::Index>() != rows || e.at("cols").get<Eigen::Index>() != cols) {
            throw FormatError(FormatFault::BadHeader, file + ": block " + prefix + name + " has unexpected shape");
        }
        read_f32(bytes, e.at("offset").get<std::size_t>(), data, static_cast<std::size_t>(rows * cols), file);
    };
    fill("w_enc", b.w_enc.data(), b.w_enc.rows(), b.w_enc.cols());
    fill("b_enc", b.b_enc.data(), b.b_enc.size(), 1);
    fill("w_dec", b.w_dec.data(), b.w_dec.rows(), b.w_dec.cols());
    fill("b_pre", b.b_pre.data(), b.b_pre.size(), 1);
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw IoError("failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt, const std::string& created_at) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

    std::string tensors;
    json meta;
    meta["format_version"] = kCheckpointFormatVersion;
    meta["created_at"] = created_at;
    meta["features"] = ckpt.params.features();
    meta["d_model"] = ckpt.params.d_model();
    meta["policy"] = to_json(ckpt.policy);
    meta["budgets_clamped_to_one"] = ckpt.budgets_clamped_to_one;
    meta["config"] = ckpt.config;
    meta["tensors"] = {{"file", "tensors.bin"}, {"dtype", "f32le"}, {"blocks", pack_blocks(tensors, ckpt.params, "")}};

    std::string optim;
    if (ckpt.optim) {
        const AdamWState& s = *ckpt.optim;
        json blocks = pack_blocks(optim, s.m, "m.");
        for (auto& b : pack_blocks(optim, s.v, "v.")) blocks.push_back(b);
        meta["optim"] = {{"file", "optim.bin"},
                         {"dtype", "f32le"},
                         {"step", s.t},
                         {"lr", s.config.lr},
                         {"beta1", s.config.beta1},
                         {"beta2", s.config.beta2},
                         {"epsilon", s.config.epsilon},
                         {"weight_decay", s.config.weight_decay},
                         {"clip_norm", s.config.clip_norm},
                         {"blocks", blocks}};
    }

    write_file_atomic(dir / "tensors.bin", tensors);
    if (ckpt.optim) write_file_atomic(dir / "optim.bin", optim);
    write_file_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    const std::filesystem::path meta_path = dir / "meta.json";
    json meta;
    try {
        meta = json::parse(slurp(meta_path));
    } catch (const json::parse_error& e) {
        throw FormatError(FormatFault::BadHeader, meta_path.string() + " is not valid JSON: " + e.what());
    }
    Checkpoint ckpt;
    try {
        const int version = meta.at("format_version").get<int>();
        if (version != kCheckpointFormatVersion) {
            throw FormatError(FormatFault::VersionMismatch,
                              meta_path.string() + ": unsupported checkpoint version " + std::to_string(version));
        }
        const auto F = meta.at("features").get<std::size_t>();
        const auto N = meta.at("d_model").get<std::size_t>();
        ckpt.params = SaeParams::zeros(F, N);
        ckpt.policy = policy_spec_from_json(meta.at("policy"));
        ckpt.config = meta.value("config", json::object());
        ckpt.budgets_clamped_to_one = meta.value("budgets_clamped_to_one", std::size_t{0});

        const std::filesystem::path tensor_path = dir / meta.at("tensors").at("file").get<std::string>();
        const std::string bytes = slurp(tensor_path);
        unpack_blocks(bytes, meta.at("tensors").at("blocks"), ckpt.params, "", tensor_path.string());

        if (meta.contains("optim")) {
            const json& o = meta.at("optim");
            AdamWConfig cfg;
            cfg.lr = o.at("lr").get<double>();
            cfg.beta1 = o.at("beta1").get<double>();
            cfg.beta2 = o.at("beta2").get<double>();
            cfg.epsilon = o.at("epsilon").get<double>();
            cfg.weight_decay = o.at("weight_decay").get<double>();
            cfg.clip_norm = o.at("clip_norm").get<double>();
            AdamWState state = AdamWState::for_params(ckpt.params, cfg);
            state.t = o.at("step").get<std::uint64_t>();
            const std::filesystem::path optim_path = dir / o.at("file").get<std::string>();
            const std::string obytes = slurp(optim_path);
            unpack_blocks(obytes, o.at("blocks"), state.m, "m.", optim_path.string());
            unpack_blocks(obytes, o.at("blocks"), state.v, "v.", optim_path.string());
            ckpt.optim = std::move(state);
        }
    } catch (const json::exception& e) {
        throw FormatError(FormatFault::BadHeader, meta_path.string() + " is malformed: " + e.what());
    }
    if (ckpt.policy.kind == PolicyKind::FeatureChoice && ckpt.policy.ranks.size() != ckpt.params.features()) {
        throw FormatError(FormatFault::BadHeader, meta_path.string() + ": rank table does not match feature count");
    }
    return ckpt;
}

}  // namespace sparsealloc
