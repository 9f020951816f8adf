#include "sparsealloc/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "sparsealloc/errors.hpp"

namespace sparsealloc {

using nlohmann::json;

std::string policy_kind_name(PolicyKind k) {
    switch (k) {
    case PolicyKind::TokenChoice: return "tc";
    case PolicyKind::FeatureChoice: return "fc";
    case PolicyKind::MutualChoice: return "mc";
    case PolicyKind::Relu: return "relu";
    }
    return "mc";
}

PolicyKind parse_policy_kind(const std::string& name) {
    if (name == "tc" || name == "token_choice" || name == "topk") return PolicyKind::TokenChoice;
    if (name == "fc" || name == "feature_choice") return PolicyKind::FeatureChoice;
    if (name == "mc" || name == "mutual_choice") return PolicyKind::MutualChoice;
    if (name == "relu") return PolicyKind::Relu;
    throw InvalidArgument("unknown policy '" + name + "' (expected tc|fc|mc|relu)");
}

double RunConfig::resolved_expected_k(std::size_t features) const {
    if (feature_sparsity > 0.0) return std::max(1.0, std::round(feature_sparsity * static_cast<double>(features)));
    return expected_k;
}

void RunConfig::validate() const {
    if (!(expected_k > 0.0)) throw InvalidArgument("expected_k must be positive");
    if (feature_sparsity < 0.0 || feature_sparsity >= 1.0) throw InvalidArgument("feature_sparsity must be in [0, 1)");
    if (width_multiple == 0) throw InvalidArgument("width_multiple must be positive");
    if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
    if (accumulation_steps == 0) throw InvalidArgument("accumulation_steps must be positive");
    if (shuffle_buffer < batch_size) throw InvalidArgument("shuffle_buffer must be at least batch_size");
    if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) throw InvalidArgument("eval_fraction must be in [0, 1)");
    if (!(lr_base > 0.0) || !(n_ref > 0.0)) throw InvalidArgument("lr_base and n_ref must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw InvalidArgument("adam betas must be in [0, 1)");
    if (!(epsilon > 0.0) || weight_decay < 0.0 || !(clip_norm > 0.0)) {
        throw InvalidArgument("epsilon and clip_norm must be positive, weight_decay non-negative");
    }
    const auto& w = weights;
    if (w.lambda_sparsity < 0.0 || w.lambda_aux_k < 0.0 || w.lambda_aux_zipf < 0.0 || w.lambda_nfm < 0.0 ||
        w.lambda_nfm_inf < 0.0) {
        throw InvalidArgument("loss weights must be non-negative");
    }
    if ((w.lambda_aux_k > 0.0 || w.lambda_aux_zipf > 0.0) && w.k_aux < 1) {
        throw InvalidArgument("k_aux must be >= 1 when an auxiliary loss is enabled");
    }
    if (!(zipf.alpha > 0.0) || !(zipf.beta > -1.0) || zipf.m_max == 0) {
        throw InvalidArgument("zipf needs alpha > 0, beta > -1 and m_max >= 1");
    }
    if (tracking.density_window_tokens == 0 || tracking.dead_threshold_tokens == 0) {
        throw InvalidArgument("tracking windows must be positive");
    }
    if (early_stop.enabled && early_stop.window == 0) throw InvalidArgument("early_stop.window must be positive");
    if (phase2.enabled && policy != PolicyKind::MutualChoice) {
        throw InvalidArgument("phase 2 (feature choice fine-tuning) follows a mutual choice phase; set policy to mc");
    }
}

RunConfig preset_config(const std::string& name) {
    RunConfig c;
    c.preset = name;
    if (name == "desk") {
        c.lr_base = 4e-3;
        c.n_ref = 512.0;
        return c;
    }
    if (name == "smoke") {
        c.lr_base = 4e-3;
        c.n_ref = 512.0;
        c.steps = 200;
        c.batch_size = 512;
        c.shuffle_buffer = 8192;
        c.zipf.refit_interval = 50;
        return c;
    }
    if (name == "paper-ratio") {
        c.lr_base = 4e-3;
        c.n_ref = 512.0;
        c.feature_sparsity = 0.008;
        return c;
    }
    if (name == "paper") {
        c.width_multiple = 32;
        c.feature_sparsity = 0.008;
        c.steps = 10000;
        c.batch_size = 1536;
        c.tracking.density_window_tokens = 100000000;
        c.tracking.dead_threshold_tokens = 10000000;
        c.shuffle_buffer = 1 << 20;
        return c;
    }
    throw InvalidArgument("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() { return {"desk", "smoke", "paper-ratio", "paper"}; }

json to_json(const RunConfig& c) {
    json j;
    j["preset"] = c.preset;
    j["data_path"] = c.data_path;
    j["eval_fraction"] = c.eval_fraction;
    j["policy"] = policy_kind_name(c.policy);
    j["criterion"] = criterion_name(c.criterion);
    j["rectify"] = c.rectify;
    j["width_multiple"] = c.width_multiple;
    j["expected_k"] = c.expected_k;
    j["feature_sparsity"] = c.feature_sparsity;
    j["steps"] = c.steps;
    j["batch_size"] = c.batch_size;
    j["accumulation_steps"] = c.accumulation_steps;
    j["shuffle_buffer"] = c.shuffle_buffer;
    j["lr_base"] = c.lr_base;
    j["n_ref"] = c.n_ref;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["epsilon"] = c.epsilon;
    j["weight_decay"] = c.weight_decay;
    j["clip_norm"] = c.clip_norm;
    j["weights"] = {{"lambda_sparsity", c.weights.lambda_sparsity},
                    {"lambda_aux_k", c.weights.lambda_aux_k},
                    {"lambda_aux_zipf", c.weights.lambda_aux_zipf},
                    {"lambda_nfm", c.weights.lambda_nfm},
                    {"lambda_nfm_inf", c.weights.lambda_nfm_inf},
                    {"k_aux", c.weights.k_aux},
                    {"aux_decode_bias", c.weights.aux_decode_bias}};
    j["zipf"] = {{"alpha", c.zipf.alpha},
                 {"beta", c.zipf.beta},
                 {"m_max", c.zipf.m_max == std::numeric_limits<std::size_t>::max() ? json(nullptr) : json(c.zipf.m_max)},
                 {"fix_alpha", c.zipf.fix_alpha},
                 {"refit_interval", c.zipf.refit_interval}};
    j["tracking"] = {{"density_window_tokens", c.tracking.density_window_tokens},
                     {"dead_threshold_tokens", c.tracking.dead_threshold_tokens}};
    j["phase2"] = {{"enabled", c.phase2.enabled}, {"steps", c.phase2.steps}};
    j["early_stop"] = {{"enabled", c.early_stop.enabled},
                       {"min_rel_improvement", c.early_stop.min_rel_improvement},
                       {"window", c.early_stop.window}};
    j["progressive_k"] = c.progressive_k;
    j["seed"] = c.seed;
    return j;
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    if (!j.is_object()) throw InvalidArgument(where + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw InvalidArgument("unknown config key '" + where + key + "'");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("config key '") + key + "': " + e.what());
    }
}

}  // namespace

RunConfig config_from_json(const json& j, RunConfig c) {
    reject_unknown(j,
                   {"preset", "data_path", "eval_fraction", "policy", "criterion", "rectify", "width_multiple",
                    "expected_k", "feature_sparsity", "steps", "batch_size", "accumulation_steps", "shuffle_buffer",
                    "lr_base", "n_ref", "beta1", "beta2", "epsilon", "weight_decay", "clip_norm", "weights", "zipf",
                    "tracking", "phase2", "early_stop", "progressive_k", "seed"},
                   "");
    if (j.contains("preset")) {
        const std::string name = j.at("preset").get<std::string>();
        if (name != c.preset) {
            RunConfig base = preset_config(name);
            base.out_dir = c.out_dir;
            c = base;
        }
    }
    read(j, "data_path", c.data_path);
    read(j, "eval_fraction", c.eval_fraction);
    if (j.contains("policy")) c.policy = parse_policy_kind(j.at("policy").get<std::string>());
    if (j.contains("criterion")) c.criterion = parse_criterion(j.at("criterion").get<std::string>());
    read(j, "rectify", c.rectify);
    read(j, "width_multiple", c.width_multiple);
    read(j, "expected_k", c.expected_k);
    read(j, "feature_sparsity", c.feature_sparsity);
    read(j, "steps", c.steps);
    read(j, "batch_size", c.batch_size);
    read(j, "accumulation_steps", c.accumulation_steps);
    read(j, "shuffle_buffer", c.shuffle_buffer);
    read(j, "lr_base", c.lr_base);
    read(j, "n_ref", c.n_ref);
    read(j, "beta1", c.beta1);
    read(j, "beta2", c.beta2);
    read(j, "epsilon", c.epsilon);
    read(j, "weight_decay", c.weight_decay);
    read(j, "clip_norm", c.clip_norm);
    if (j.contains("weights")) {
        const json& w = j.at("weights");
        reject_unknown(w, {"lambda_sparsity", "lambda_aux_k", "lambda_aux_zipf", "lambda_nfm", "lambda_nfm_inf", "k_aux",
                           "aux_decode_bias"},
                       "weights.");
        read(w, "lambda_sparsity", c.weights.lambda_sparsity);
        read(w, "lambda_aux_k", c.weights.lambda_aux_k);
        read(w, "lambda_aux_zipf", c.weights.lambda_aux_zipf);
        read(w, "lambda_nfm", c.weights.lambda_nfm);
        read(w, "lambda_nfm_inf", c.weights.lambda_nfm_inf);
        read(w, "k_aux", c.weights.k_aux);
        read(w, "aux_decode_bias", c.weights.aux_decode_bias);
    }
    if (j.contains("zipf")) {
        const json& z = j.at("zipf");
        reject_unknown(z, {"alpha", "beta", "m_max", "fix_alpha", "refit_interval"}, "zipf.");
        read(z, "alpha", c.zipf.alpha);
        read(z, "beta", c.zipf.beta);
        if (z.contains("m_max")) {
            c.zipf.m_max = z.at("m_max").is_null() ? std::numeric_limits<std::size_t>::max()
                                                   : z.at("m_max").get<std::size_t>();
        }
        read(z, "fix_alpha", c.zipf.fix_alpha);
        read(z, "refit_interval", c.zipf.refit_interval);
    }
    if (j.contains("tracking")) {
        const json& t = j.at("tracking");
        reject_unknown(t, {"density_window_tokens", "dead_threshold_tokens"}, "tracking.");
        read(t, "density_window_tokens", c.tracking.density_window_tokens);
        read(t, "dead_threshold_tokens", c.tracking.dead_threshold_tokens);
    }
    if (j.contains("phase2")) {
        const json& p = j.at("phase2");
        reject_unknown(p, {"enabled", "steps"}, "phase2.");
        read(p, "enabled", c.phase2.enabled);
        read(p, "steps", c.phase2.steps);
    }
    if (j.contains("early_stop")) {
        const json& e = j.at("early_stop");
        reject_unknown(e, {"enabled", "min_rel_improvement", "window"}, "early_stop.");
        read(e, "enabled", c.early_stop.enabled);
        read(e, "min_rel_improvement", c.early_stop.min_rel_improvement);
        read(e, "window", c.early_stop.window);
    }
    read(j, "progressive_k", c.progressive_k);
    read(j, "seed", c.seed);
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw InvalidArgument("config " + path.string() + " is not valid JSON: " + e.what());
    }
    RunConfig base;
    if (j.is_object() && j.contains("preset")) base = preset_config(j.at("preset").get<std::string>());
    return config_from_json(j, base);
}

}  // namespace sparsealloc
