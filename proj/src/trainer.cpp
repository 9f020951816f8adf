#include "sparsealloc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sparsealloc/data.hpp"
#include "sparsealloc/errors.hpp"
#include "sparsealloc/losses.hpp"

namespace sparsealloc {

using nlohmann::json;

namespace {

// Keeps the shuffle order independent of the parameter initialisation stream.
constexpr std::uint64_t kShuffleSalt = 0x5851f42d4c957f2dULL;

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& idx) {
    Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
    return out;
}

std::vector<std::size_t> set_difference(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::vector<std::size_t> out;
    std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

std::vector<std::size_t> default_progressive_k(std::size_t largest) {
    std::vector<std::size_t> ks{0};
    for (std::size_t k = 1; k < largest; k *= 2) ks.push_back(k);
    if (largest > 0) ks.push_back(largest);
    return ks;
}

std::string density_csv(const std::vector<double>& densities) {
    std::vector<double> sorted = densities;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    std::ostringstream os;
    os.precision(17);
    os << "rank,density\n";
    for (std::size_t i = 0; i < sorted.size(); ++i) os << i + 1 << ',' << sorted[i] << '\n';
    return os.str();
}

}  // namespace

std::filesystem::path dictionary_sidecar(const std::filesystem::path& data_path) {
    std::filesystem::path p = data_path;
    p += ".dict";
    return p;
}

std::filesystem::path truth_sidecar(const std::filesystem::path& data_path) {
    std::filesystem::path p = data_path;
    p += ".truth.json";
    return p;
}

Dataset make_dataset(const Matrix& raw, double eval_fraction, std::optional<Matrix> truth_dictionary,
                     const std::vector<std::uint8_t>& easy) {
    if (!(eval_fraction >= 0.0 && eval_fraction < 1.0)) throw InvalidArgument("eval_fraction must be in [0, 1)");
    if (!easy.empty() && easy.size() != static_cast<std::size_t>(raw.rows())) {
        throw ShapeError("easy-row flags do not match the number of rows");
    }
    const Matrix x = preprocess(raw);
    const auto n = static_cast<std::size_t>(x.rows());
    const auto n_eval = static_cast<std::size_t>(std::floor(eval_fraction * static_cast<double>(n)));
    const std::size_t n_train = n - n_eval;
    if (n_train == 0) throw InvalidArgument("no rows left for training");

    Dataset d;
    d.train = x.topRows(static_cast<Eigen::Index>(n_train));
    d.eval = x.bottomRows(static_cast<Eigen::Index>(n_eval));
    if (truth_dictionary) {
        if (truth_dictionary->cols() != x.cols()) throw ShapeError("true dictionary does not match d_model");
        d.truth_dictionary = std::move(truth_dictionary);
    }
    if (!easy.empty()) d.eval_easy.assign(easy.begin() + static_cast<std::ptrdiff_t>(n_train), easy.end());
    return d;
}

Dataset load_dataset(const std::filesystem::path& path, double eval_fraction) {
    const ActivationStore store = read_activations(path);
    std::optional<Matrix> dict;
    if (std::filesystem::exists(dictionary_sidecar(path))) dict = read_activations(dictionary_sidecar(path)).to_matrix();
    std::vector<std::uint8_t> easy;
    if (std::filesystem::exists(truth_sidecar(path))) {
        std::ifstream is(truth_sidecar(path));
        json j;
        try {
            j = json::parse(is);
            easy.assign(store.n_rows, 0);
            for (std::size_t r : j.at("easy_rows").get<std::vector<std::size_t>>()) {
                if (r >= store.n_rows) throw FormatError(FormatFault::BadHeader, "easy row index out of range");
                easy[r] = 1;
            }
        } catch (const json::exception& e) {
            throw FormatError(FormatFault::BadHeader, truth_sidecar(path).string() + " is malformed: " + e.what());
        }
    }
    return make_dataset(store.to_matrix(), eval_fraction, std::move(dict), easy);
}

EvalReport evaluate(const SaeParams& params, const AllocationPolicy& policy, const Matrix& x, const EvalOptions& opt) {
    if (x.rows() == 0) throw InvalidArgument("evaluation set is empty");
    const std::vector<Matrix> batches = split_batches(x, opt.batch);
    EvalReport report;
    report.policy = policy_name(policy);

    FvuAccumulator acc;
    std::vector<ForwardTrace> traces;
    traces.reserve(batches.size());
    std::vector<std::size_t> fpt;
    std::size_t largest = 0;
    for (const Matrix& b : batches) {
        traces.push_back(forward(params, b, policy));
        const ForwardTrace& tr = traces.back();
        acc.add(tr);
        const auto counts = features_per_token(tr.mask);
        fpt.insert(fpt.end(), counts.begin(), counts.end());
        for (Eigen::Index t = 0; t < tr.z.rows(); ++t) {
            largest = std::max(largest, static_cast<std::size_t>((tr.z.row(t).array() != 0.0).count()));
        }
    }
    const L0Fvu m = acc.result();
    report.mean_l0 = m.mean_l0;
    report.mean_nonzero = m.mean_nonzero;
    report.mse = m.mse;
    report.fvu = m.fvu;
    report.eval_tokens = acc.tokens();
    report.fpt_histogram = histogram(fpt);

    const std::vector<std::size_t> ks = opt.progressive_k.empty() ? default_progressive_k(largest) : opt.progressive_k;
    std::vector<double> sums(ks.size(), 0.0);
    for (const ForwardTrace& tr : traces) {
        const auto curve = progressive_curve(params, tr, ks);
        for (std::size_t i = 0; i < ks.size(); ++i) sums[i] += curve[i].second * static_cast<double>(tr.tokens());
    }
    for (std::size_t i = 0; i < ks.size(); ++i) {
        report.progressive_curve.emplace_back(ks[i], sums[i] / static_cast<double>(acc.tokens()));
    }

    if (opt.truth_dictionary) report.recovery_score = recovery_score(params.w_dec, *opt.truth_dictionary);
    if (opt.easy && !opt.easy->empty()) {
        double easy_sum = 0.0, other_sum = 0.0;
        std::size_t easy_n = 0, other_n = 0;
        for (std::size_t i = 0; i < fpt.size() && i < opt.easy->size(); ++i) {
            if ((*opt.easy)[i]) {
                easy_sum += static_cast<double>(fpt[i]);
                ++easy_n;
            } else {
                other_sum += static_cast<double>(fpt[i]);
                ++other_n;
            }
        }
        if (easy_n > 0) report.easy_rows_mean_fpt = easy_sum / static_cast<double>(easy_n);
        if (other_n > 0) report.other_rows_mean_fpt = other_sum / static_cast<double>(other_n);
    }
    return report;
}

EvalReport evaluate(const SaeParams& params, const PolicySpec& spec, const Matrix& x, const EvalOptions& opt) {
    const std::size_t batch = std::min<std::size_t>(opt.batch, static_cast<std::size_t>(x.rows()));
    return evaluate(params, spec.instantiate(batch), x, opt);
}

TrainResult train(const RunConfig& config, const Dataset& data, const StepCallback& on_step) {
    config.validate();
    const std::size_t N = data.d_model();
    const std::size_t F = config.width_multiple * N;
    const std::size_t B = config.batch_size;
    const auto n_train = static_cast<std::size_t>(data.train.rows());
    if (n_train < B) {
        throw InvalidArgument("training split has " + std::to_string(n_train) + " rows, fewer than one batch of " +
                              std::to_string(B));
    }
    const double expected_k = config.resolved_expected_k(F);

    TrainResult res;
    res.params = SaeParams::initialize(F, N, config.seed);
    AdamWConfig adam;
    adam.lr = scaled_lr(config.lr_base, static_cast<double>(F), config.n_ref);
    adam.beta1 = config.beta1;
    adam.beta2 = config.beta2;
    adam.epsilon = config.epsilon;
    adam.weight_decay = config.weight_decay;
    adam.clip_norm = config.clip_norm;
    res.optim = AdamWState::for_params(res.params, adam);
    res.stats = FeatureDensityStats(F, config.tracking.density_window_tokens);

    std::vector<std::size_t> identity_ranks(F);
    std::iota(identity_ranks.begin(), identity_ranks.end(), std::size_t{1});
    auto feature_choice_spec = [&](std::vector<std::size_t> ranks) {
        PolicySpec s;
        s.kind = PolicyKind::FeatureChoice;
        s.expected_k = expected_k;
        s.criterion = config.criterion;
        s.rectify = config.rectify;
        s.ranks = std::move(ranks);
        s.zipf_alpha = config.zipf.alpha;
        s.zipf_beta = config.zipf.beta;
        s.m_max = config.zipf.m_max;
        return s;
    };

    PolicySpec spec;
    if (config.policy == PolicyKind::FeatureChoice) {
        // No densities exist before training, so the initial ranks follow feature order.
        spec = feature_choice_spec(identity_ranks);
    } else {
        spec.kind = config.policy;
        spec.expected_k = expected_k;
        spec.criterion = config.criterion;
        spec.rectify = config.rectify;
    }
    FeatureBudgets budgets;
    AllocationPolicy policy = spec.instantiate(B, &budgets);
    res.budgets_clamped_to_one = budgets.clamped_to_one;
    // Fail at startup, not after phase 1, when the fine-tuning budgets cannot fit the batch.
    if (config.phase2.enabled) feature_choice_spec(identity_ranks).instantiate(B);

    ShuffleStream stream(n_train, std::min(config.shuffle_buffer, n_train), config.seed ^ kShuffleSalt);
    std::vector<std::size_t> dying;
    std::vector<double> step_mse;
    std::size_t phase1_steps = config.steps;
    bool in_phase2 = false;

    auto refit = [&](std::size_t step) {
        const std::vector<double> densities = density_snapshot(res.stats);
        res.density_history.push_back({step, densities});
        try {
            const ZipfFit fit =
                fit_zipf(densities, config.zipf.fix_alpha ? std::optional<double>(config.zipf.alpha) : std::nullopt);
            dying = classify_dying(densities, fit).dying;
            res.last_fit = fit;
        } catch (const InsufficientDataError&) {
            // Too few live features for a fit; the previous dying set stays in force.
        }
    };

    std::size_t last_step = phase1_steps;
    for (std::size_t step = 1;; ++step) {
        if (!in_phase2 && step > phase1_steps) {
            if (!config.phase2.enabled) break;
            in_phase2 = true;
            last_step = phase1_steps + config.phase2.steps;
            spec = feature_choice_spec(ranks_by_density(density_snapshot(res.stats)));
            policy = spec.instantiate(B, &budgets);
            res.budgets_clamped_to_one = budgets.clamped_to_one;
        }
        if (step > last_step) break;
        const Phase phase = spec.kind == PolicyKind::FeatureChoice ? Phase::FeatureChoiceFinetune : Phase::Primary;
        const PhaseWeights pw = apply_phase_rule(config.weights, phase);

        AuxSets aux;
        if (phase == Phase::Primary) {
            aux.dead = detect_dead(res.stats, config.tracking.dead_threshold_tokens);
            if (spec.kind == PolicyKind::MutualChoice) aux.dying = set_difference(dying, aux.dead);
        }

        Gradients grads = Gradients::zeros_like(res.params);
        LossReport sum;
        double l0 = 0.0, nonzero = 0.0;
        std::vector<SparsityMask> masks;
        for (std::size_t a = 0; a < config.accumulation_steps; ++a) {
            const Matrix x = gather_rows(data.train, stream.next_batch(B));
            const ForwardTrace tr = forward(res.params, x, policy);
            const LossReport rep = total_loss(tr, res.params, config.weights, aux, phase);
            grads += backward(res.params, tr, pw.weights, aux);
            sum.mse += rep.mse;
            sum.l1 += rep.l1;
            sum.aux_k += rep.aux_k;
            sum.aux_zipf += rep.aux_zipf;
            sum.nfm += rep.nfm;
            sum.nfm_inf += rep.nfm_inf;
            sum.weighted_l1 += rep.weighted_l1;
            sum.weighted_aux_k += rep.weighted_aux_k;
            sum.weighted_aux_zipf += rep.weighted_aux_zipf;
            sum.weighted_nfm += rep.weighted_nfm;
            sum.weighted_nfm_inf += rep.weighted_nfm_inf;
            sum.total += rep.total;
            sum.aux_weights_overridden = rep.aux_weights_overridden;
            l0 += static_cast<double>(tr.mask.nnz()) / static_cast<double>(B);
            nonzero += static_cast<double>((tr.z.array() != 0.0).count()) / static_cast<double>(B);
            masks.push_back(tr.mask);
        }
        const double inv = 1.0 / static_cast<double>(config.accumulation_steps);
        grads *= inv;
        project_decoder_grads(grads, res.params);
        const double grad_norm = clip_gradients(grads, config.clip_norm);
        adamw_step(res.optim, res.params, grads);
        for (const SparsityMask& m : masks) update_density(res.stats, m);

        if (!in_phase2 && config.zipf.refit_interval > 0 && step % config.zipf.refit_interval == 0) refit(step);

        json rec;
        rec["step"] = step;
        rec["phase"] = in_phase2 ? "fc_finetune" : "primary";
        rec["policy"] = policy_kind_name(spec.kind);
        rec["mse"] = sum.mse * inv;
        rec["l1"] = sum.l1 * inv;
        rec["aux_k"] = sum.aux_k * inv;
        rec["aux_zipf"] = sum.aux_zipf * inv;
        rec["nfm"] = sum.nfm * inv;
        rec["nfm_inf"] = sum.nfm_inf * inv;
        rec["weighted_l1"] = sum.weighted_l1 * inv;
        rec["weighted_aux_k"] = sum.weighted_aux_k * inv;
        rec["weighted_aux_zipf"] = sum.weighted_aux_zipf * inv;
        rec["weighted_nfm"] = sum.weighted_nfm * inv;
        rec["weighted_nfm_inf"] = sum.weighted_nfm_inf * inv;
        rec["total"] = sum.total * inv;
        rec["aux_weights_overridden"] = sum.aux_weights_overridden;
        rec["mean_l0"] = l0 * inv;
        rec["mean_nonzero"] = nonzero * inv;
        rec["grad_norm"] = grad_norm;
        rec["dec_norm_error"] = (res.params.w_dec.rowwise().norm().array() - 1.0).abs().maxCoeff();
        rec["lr"] = adam.lr;
        rec["dead"] = aux.dead.size();
        rec["dying"] = aux.dying.size();
        if (on_step) on_step(rec);
        res.log.push_back(std::move(rec));
        res.steps_run = step;

        if (!in_phase2 && config.early_stop.enabled) {
            step_mse.push_back(sum.mse * inv);
            const std::size_t w = config.early_stop.window;
            if (step_mse.size() >= 2 * w && step_mse.size() % w == 0) {
                const auto end = step_mse.end();
                const double cur = std::accumulate(end - static_cast<std::ptrdiff_t>(w), end, 0.0) / static_cast<double>(w);
                const double prev = std::accumulate(end - static_cast<std::ptrdiff_t>(2 * w), end - static_cast<std::ptrdiff_t>(w), 0.0) /
                                    static_cast<double>(w);
                if (prev <= 0.0 || (prev - cur) / prev < config.early_stop.min_rel_improvement) {
                    res.early_stopped = true;
                    phase1_steps = step;
                    last_step = step;
                }
            }
        }
    }

    refit(res.steps_run);
    const std::vector<std::size_t> dead = detect_dead(res.stats, config.tracking.dead_threshold_tokens);
    res.dying = res.last_fit ? set_difference(dying, dead) : std::vector<std::size_t>{};
    res.final_policy = spec;

    EvalOptions opt;
    opt.batch = B;
    opt.progressive_k = config.progressive_k;
    if (data.truth_dictionary) opt.truth_dictionary = &*data.truth_dictionary;
    if (!data.eval_easy.empty()) opt.easy = &data.eval_easy;
    if (data.eval.rows() > 0) res.report = evaluate(res.params, spec, data.eval, opt);
    res.report.policy = policy_kind_name(spec.kind);
    res.report.dead_count = dead.size();
    res.report.dying_count = res.dying.size();
    return res;
}

void write_run(const RunConfig& config, const TrainResult& result) {
    const std::filesystem::path& dir = config.out_dir;
    if (dir.empty()) throw InvalidArgument("no output directory configured");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    write_file_atomic(dir / "config.json", to_json(config).dump(2) + "\n");

    Checkpoint ckpt;
    ckpt.params = result.params;
    ckpt.policy = result.final_policy;
    ckpt.config = to_json(config);
    ckpt.optim = result.optim;
    ckpt.budgets_clamped_to_one = result.budgets_clamped_to_one;
    save_checkpoint(dir, ckpt, utc_timestamp());

    std::string log;
    for (const json& rec : result.log) log += rec.dump() + "\n";
    write_file_atomic(dir / "log.jsonl", log);

    json report = to_json(result.report);
    report["steps_run"] = result.steps_run;
    report["early_stopped"] = result.early_stopped;
    report["budgets_clamped_to_one"] = result.budgets_clamped_to_one;
    if (result.last_fit) {
        report["zipf_fit"] = {{"alpha", result.last_fit->params.alpha},
                              {"beta", result.last_fit->params.beta},
                              {"scale", result.last_fit->params.scale},
                              {"r_squared", result.last_fit->r_squared}};
    }
    write_file_atomic(dir / "report.json", report.dump(2) + "\n");

    write_file_atomic(dir / "density.csv", density_csv(density_snapshot(result.stats)));

    std::ostringstream hist;
    hist.precision(17);
    hist << "step,rank,density\n";
    for (const DensitySnapshot& snap : result.density_history) {
        std::vector<double> sorted = snap.densities;
        std::sort(sorted.begin(), sorted.end(), std::greater<>());
        for (std::size_t i = 0; i < sorted.size(); ++i) hist << snap.step << ',' << i + 1 << ',' << sorted[i] << '\n';
    }
    write_file_atomic(dir / "density_history.csv", hist.str());
}

TrainResult run_train(const RunConfig& config, const StepCallback& on_step) {
    if (config.data_path.empty()) throw InvalidArgument("no data path configured");
    const Dataset data = load_dataset(config.data_path, config.eval_fraction);
    TrainResult result = train(config, data, on_step);
    write_run(config, result);
    return result;
}

}  // namespace sparsealloc
