// Command-line front end: gen-data, train, eval, fit-zipf, compare, export-plots.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sparsealloc/checkpoint.hpp"
#include "sparsealloc/compare.hpp"
#include "sparsealloc/config.hpp"
#include "sparsealloc/data.hpp"
#include "sparsealloc/errors.hpp"
#include "sparsealloc/evalmetrics.hpp"
#include "sparsealloc/trainer.hpp"
#include "sparsealloc/zipf.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sparsealloc;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file_atomic(path, text);
}

void emit(const std::string& text, const std::string& out) {
    if (out.empty() || out == "-") {
        std::cout << text;
    } else {
        write_text(out, text);
    }
}

json read_json(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw FormatError(FormatFault::BadHeader, path.string() + " is not valid JSON: " + e.what());
    }
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path, const std::string& expected_header) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != expected_header) {
        throw FormatError(FormatFault::BadHeader, path.string() + ": expected header '" + expected_header + "'");
    }
    std::vector<std::vector<std::string>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

// ---- gen-data -------------------------------------------------------------

struct GenDataArgs {
    SyntheticSpec spec;
    std::string out;
};

void run_gen_data(const GenDataArgs& a) {
    const SyntheticData d = generate_synthetic(a.spec);
    const fs::path out = a.out;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_activations(d.store, out);
    write_activations(ActivationStore::from_matrix(d.truth.dictionary), dictionary_sidecar(out));
    json truth;
    truth["seed"] = a.spec.seed;
    truth["n_rows"] = a.spec.n_rows;
    truth["d_model"] = a.spec.d_model;
    truth["n_true_features"] = a.spec.n_true_features;
    truth["alpha"] = a.spec.alpha;
    truth["beta"] = a.spec.beta;
    truth["actives_mean"] = a.spec.actives_mean;
    truth["actives_min"] = a.spec.actives_min;
    truth["actives_max"] = a.spec.actives_max;
    truth["coeff_lo"] = a.spec.coeff_lo;
    truth["coeff_hi"] = a.spec.coeff_hi;
    truth["noise_sigma"] = a.spec.noise_sigma;
    truth["easy_row_rate"] = a.spec.easy_row_rate;
    std::vector<std::size_t> easy;
    for (std::size_t r = 0; r < d.truth.is_easy.size(); ++r) {
        if (d.truth.is_easy[r]) easy.push_back(r);
    }
    truth["easy_rows"] = easy;
    write_file_atomic(truth_sidecar(out), truth.dump() + "\n");
    std::cerr << "wrote " << a.spec.n_rows << " x " << a.spec.d_model << " rows to " << out.string() << "\n";
}

// ---- train ----------------------------------------------------------------

// Flag values that override the loaded config; only flags actually given are applied.
struct TrainOverrides {
    std::optional<std::string> data, policy, criterion;
    std::optional<bool> rectify;
    std::optional<std::size_t> width_multiple, steps, batch_size, accumulation_steps, shuffle_buffer, k_aux,
        refit_interval, phase2_steps, seed;
    std::optional<double> expected_k, feature_sparsity, eval_fraction, lr_base, n_ref, weight_decay, clip_norm,
        lambda_sparsity, lambda_aux_k, lambda_aux_zipf, lambda_nfm, lambda_nfm_inf, zipf_alpha, zipf_beta;
    std::optional<std::size_t> zipf_m_max;
    std::optional<std::uint64_t> density_window_tokens, dead_threshold_tokens;
    std::optional<bool> early_stop;
};

json overrides_to_json(const TrainOverrides& o) {
    json j = json::object();
    auto put = [&j](const char* key, const auto& opt) {
        if (opt) j[key] = *opt;
    };
    put("data_path", o.data);
    put("policy", o.policy);
    put("criterion", o.criterion);
    put("rectify", o.rectify);
    put("width_multiple", o.width_multiple);
    put("expected_k", o.expected_k);
    put("feature_sparsity", o.feature_sparsity);
    put("steps", o.steps);
    put("batch_size", o.batch_size);
    put("accumulation_steps", o.accumulation_steps);
    put("shuffle_buffer", o.shuffle_buffer);
    put("eval_fraction", o.eval_fraction);
    put("lr_base", o.lr_base);
    put("n_ref", o.n_ref);
    put("weight_decay", o.weight_decay);
    put("clip_norm", o.clip_norm);
    put("seed", o.seed);
    json w = json::object();
    if (o.lambda_sparsity) w["lambda_sparsity"] = *o.lambda_sparsity;
    if (o.lambda_aux_k) w["lambda_aux_k"] = *o.lambda_aux_k;
    if (o.lambda_aux_zipf) w["lambda_aux_zipf"] = *o.lambda_aux_zipf;
    if (o.lambda_nfm) w["lambda_nfm"] = *o.lambda_nfm;
    if (o.lambda_nfm_inf) w["lambda_nfm_inf"] = *o.lambda_nfm_inf;
    if (o.k_aux) w["k_aux"] = *o.k_aux;
    if (!w.empty()) j["weights"] = w;
    json z = json::object();
    if (o.zipf_alpha) z["alpha"] = *o.zipf_alpha;
    if (o.zipf_beta) z["beta"] = *o.zipf_beta;
    if (o.zipf_m_max) z["m_max"] = *o.zipf_m_max;
    if (o.refit_interval) z["refit_interval"] = *o.refit_interval;
    if (!z.empty()) j["zipf"] = z;
    json t = json::object();
    if (o.density_window_tokens) t["density_window_tokens"] = *o.density_window_tokens;
    if (o.dead_threshold_tokens) t["dead_threshold_tokens"] = *o.dead_threshold_tokens;
    if (!t.empty()) j["tracking"] = t;
    if (o.phase2_steps) j["phase2"] = {{"enabled", *o.phase2_steps > 0}, {"steps", *o.phase2_steps}};
    if (o.early_stop) j["early_stop"] = {{"enabled", *o.early_stop}};
    return j;
}

void add_train_flags(CLI::App* cmd, TrainOverrides& o) {
    cmd->add_option("--data", o.data, "SAEACT01 activation file");
    cmd->add_option("--policy", o.policy, "tc | fc | mc | relu");
    cmd->add_option("--criterion", o.criterion, "value | magnitude");
    cmd->add_option("--rectify", o.rectify, "clamp negative selected codes to zero (true|false)");
    cmd->add_option("--width-multiple", o.width_multiple, "F = width multiple x d_model");
    cmd->add_option("--expected-k", o.expected_k, "expected features per token");
    cmd->add_option("--feature-sparsity", o.feature_sparsity, "if > 0, expected k = round(fraction x F)");
    cmd->add_option("--steps", o.steps, "phase-1 steps");
    cmd->add_option("--batch-size", o.batch_size);
    cmd->add_option("--accumulation-steps", o.accumulation_steps);
    cmd->add_option("--shuffle-buffer", o.shuffle_buffer);
    cmd->add_option("--eval-fraction", o.eval_fraction, "held-out tail fraction");
    cmd->add_option("--lr-base", o.lr_base);
    cmd->add_option("--n-ref", o.n_ref, "reference width for learning-rate scaling");
    cmd->add_option("--weight-decay", o.weight_decay);
    cmd->add_option("--clip-norm", o.clip_norm);
    cmd->add_option("--lambda-sparsity", o.lambda_sparsity);
    cmd->add_option("--lambda-aux-k", o.lambda_aux_k);
    cmd->add_option("--lambda-aux-zipf", o.lambda_aux_zipf);
    cmd->add_option("--lambda-nfm", o.lambda_nfm);
    cmd->add_option("--lambda-nfm-inf", o.lambda_nfm_inf);
    cmd->add_option("--k-aux", o.k_aux);
    cmd->add_option("--zipf-alpha", o.zipf_alpha);
    cmd->add_option("--zipf-beta", o.zipf_beta);
    cmd->add_option("--zipf-m-max", o.zipf_m_max);
    cmd->add_option("--refit-interval", o.refit_interval);
    cmd->add_option("--density-window-tokens", o.density_window_tokens);
    cmd->add_option("--dead-threshold-tokens", o.dead_threshold_tokens);
    cmd->add_option("--phase2-steps", o.phase2_steps, "feature-choice fine-tuning steps after phase 1 (0 disables)");
    cmd->add_option("--early-stop", o.early_stop, "stop phase 1 once the MSE plateaus (true|false)");
    cmd->add_option("--seed", o.seed);
}

RunConfig resolve_config(const std::string& config_path, const std::string& preset, const TrainOverrides& o) {
    RunConfig cfg = config_path.empty() ? preset_config(preset.empty() ? "desk" : preset) : load_config(config_path);
    if (!config_path.empty() && !preset.empty()) {
        throw InvalidArgument("--config and --preset are mutually exclusive");
    }
    cfg = config_from_json(overrides_to_json(o), cfg);
    cfg.validate();
    return cfg;
}

StepCallback progress_printer(std::size_t every) {
    if (every == 0) return {};
    return [every](const json& rec) {
        const auto step = rec.at("step").get<std::size_t>();
        if (step % every == 0 || step == 1) {
            std::cerr << "step " << step << " [" << rec.at("phase").get<std::string>() << "] mse "
                      << rec.at("mse").get<double>() << " l0 " << rec.at("mean_l0").get<double>() << " dead "
                      << rec.at("dead").get<std::size_t>() << " dying " << rec.at("dying").get<std::size_t>() << "\n";
        }
    };
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint, data, out;
    std::size_t batch_size = 1536;
    double tail_fraction = 1.0;
    bool streaming = false;
    std::size_t calibration_batches = 4;
};

void run_eval(const EvalArgs& a) {
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    if (!(a.tail_fraction > 0.0 && a.tail_fraction <= 1.0)) throw InvalidArgument("--tail-fraction must be in (0, 1]");
    const ActivationStore store = read_activations(a.data);
    if (store.d_model != ckpt.params.d_model()) {
        throw ShapeError("data d_model " + std::to_string(store.d_model) + " does not match checkpoint d_model " +
                         std::to_string(ckpt.params.d_model()));
    }
    const Matrix x_all = preprocess(store.to_matrix());
    const auto n = static_cast<std::size_t>(x_all.rows());
    const auto n_eval = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(a.tail_fraction * static_cast<double>(n))));
    const Matrix x = x_all.bottomRows(static_cast<Eigen::Index>(n_eval));

    std::optional<Matrix> dict;
    if (fs::exists(dictionary_sidecar(a.data))) dict = read_activations(dictionary_sidecar(a.data)).to_matrix();
    std::vector<std::uint8_t> easy;
    if (fs::exists(truth_sidecar(a.data))) {
        const json t = read_json(truth_sidecar(a.data));
        std::vector<std::uint8_t> all(n, 0);
        for (std::size_t r : t.at("easy_rows").get<std::vector<std::size_t>>()) {
            if (r < n) all[r] = 1;
        }
        easy.assign(all.end() - static_cast<std::ptrdiff_t>(n_eval), all.end());
    }

    EvalOptions opt;
    opt.batch = std::min(a.batch_size, n_eval);
    if (dict) opt.truth_dictionary = &*dict;
    if (!easy.empty()) opt.easy = &easy;

    EvalReport report;
    json extra;
    if (a.streaming) {
        const AllocationPolicy batch_policy = ckpt.policy.instantiate(opt.batch);
        std::vector<Matrix> batches = split_batches(x, opt.batch);
        if (batches.size() > a.calibration_batches) batches.resize(a.calibration_batches);
        const ThresholdTable table = calibrate_thresholds(ckpt.params, batch_policy, batches);
        report = evaluate(ckpt.params, AllocationPolicy{ThresholdGate{table.theta}, Criterion::ByValue, ckpt.policy.rectify},
                          x, opt);
        extra["mode"] = "streaming";
        extra["calibration_batches"] = batches.size();
    } else {
        report = evaluate(ckpt.params, ckpt.policy, x, opt);
        report.policy = policy_kind_name(ckpt.policy.kind);
        extra["mode"] = "batch";
    }
    json j = to_json(report);
    j.update(extra);
    emit(j.dump(2) + "\n", a.out);
}

// ---- fit-zipf -------------------------------------------------------------

void run_fit_zipf(const std::string& density, std::optional<double> fix_alpha, const std::string& out) {
    const std::vector<double> d = read_density_csv(density);
    const ZipfFit fit = fit_zipf(d, fix_alpha);
    const DyingPartition part = classify_dying(d, fit);
    json j;
    j["alpha"] = fit.params.alpha;
    j["beta"] = fit.params.beta;
    j["scale"] = fit.params.scale;
    j["r_squared"] = fit.r_squared;
    j["points_used"] = fit.points_used;
    j["alpha_fixed"] = fix_alpha.has_value();
    j["dying_ranks"] = json::array();
    const std::vector<std::size_t> ranks = ranks_by_density(d);
    for (std::size_t f : part.dying) j["dying_ranks"].push_back(ranks[f]);
    emit(j.dump(2) + "\n", out);
}

// ---- compare --------------------------------------------------------------

struct CompareArgs {
    std::string config, preset, data, out;
    std::vector<std::string> policies{"tc", "mc", "mc+fc"};
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::optional<std::size_t> phase2_steps;
    std::optional<std::size_t> threads;
};

void run_compare(const CompareArgs& a, const TrainOverrides& o) {
    RunConfig base = resolve_config(a.config, a.preset, o);
    if (base.data_path.empty()) throw InvalidArgument("compare needs --data or a config with data_path");
    std::vector<CompareEntry> entries;
    for (const std::string& p : a.policies) {
        RunConfig cfg = base;
        cfg.phase2 = {};
        if (p == "mc+fc") {
            const std::size_t p2 = a.phase2_steps ? *a.phase2_steps : cfg.steps / 4;
            if (p2 == 0 || p2 >= cfg.steps) throw InvalidArgument("phase-2 steps must lie strictly inside --steps");
            cfg.policy = PolicyKind::MutualChoice;
            cfg.phase2 = {true, p2};
            cfg.steps -= p2;  // same total step count as the single-phase runs
        } else {
            cfg.policy = parse_policy_kind(p);
        }
        cfg.validate();
        entries.push_back({p, cfg});
    }
    const Dataset data = load_dataset(base.data_path, base.eval_fraction);
    const auto rows = compare_runs(entries, a.seeds, data, a.threads ? *a.threads : thread_budget());
    emit(to_csv(rows), a.out);
}

// ---- export-plots ---------------------------------------------------------

void run_export_plots(const std::vector<std::string>& runs, const std::string& compare_csv, const std::string& out_dir) {
    if (runs.empty() && compare_csv.empty()) throw InvalidArgument("export-plots needs --run and/or --compare");
    const fs::path out = out_dir;
    fs::create_directories(out);

    if (!runs.empty()) {
        std::ostringstream density, history, fpt, curve, dead;
        density.precision(17);
        history.precision(17);
        curve.precision(17);
        density << "run,rank,density\n";
        history << "run,step,rank,density\n";
        fpt << "run,features,tokens\n";
        curve << "run,k,mse\n";
        dead << "run,policy,dead_count,dying_count\n";
        for (const std::string& run : runs) {
            const fs::path dir = run;
            const std::string label = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
            const std::vector<double> d = read_density_csv(dir / "density.csv");
            for (std::size_t i = 0; i < d.size(); ++i) density << label << ',' << i + 1 << ',' << d[i] << '\n';
            if (fs::exists(dir / "density_history.csv")) {
                for (const auto& row : read_csv(dir / "density_history.csv", "step,rank,density")) {
                    if (row.size() != 3) throw FormatError(FormatFault::BadHeader, "malformed density history row");
                    history << label << ',' << row[0] << ',' << row[1] << ',' << row[2] << '\n';
                }
            }
            const json report = read_json(dir / "report.json");
            for (const auto& h : report.at("fpt_histogram")) {
                fpt << label << ',' << h.at("features").get<std::size_t>() << ',' << h.at("tokens").get<std::size_t>() << '\n';
            }
            for (const auto& p : report.at("progressive_curve")) {
                curve << label << ',' << p.at("k").get<std::size_t>() << ',' << p.at("mse").get<double>() << '\n';
            }
            dead << label << ',' << report.at("policy").get<std::string>() << ','
                 << report.at("dead_count").get<std::size_t>() << ',' << report.at("dying_count").get<std::size_t>()
                 << '\n';
        }
        write_text(out / "density_vs_rank.csv", density.str());
        write_text(out / "density_history.csv", history.str());
        write_text(out / "fpt_histogram.csv", fpt.str());
        write_text(out / "progressive_curve.csv", curve.str());
        write_text(out / "dead_counts.csv", dead.str());
    }

    if (!compare_csv.empty()) {
        // Mean over seeds per (label, expected k).
        struct Agg {
            std::string policy;
            double fvu = 0.0, l0 = 0.0, dead = 0.0;
            std::size_t n = 0;
        };
        std::map<std::pair<std::string, std::string>, Agg> groups;
        std::ostringstream dead;
        dead << "label,policy,seed,dead_count,dying_count\n";
        for (const auto& row : read_csv(compare_csv, kCompareHeader)) {
            if (row.size() != 9) throw FormatError(FormatFault::BadHeader, "malformed compare row");
            Agg& g = groups[{row[0], row[3]}];
            g.policy = row[1];
            g.fvu += std::stod(row[4]);
            g.l0 += std::stod(row[6]);
            g.dead += std::stod(row[7]);
            ++g.n;
            dead << row[0] << ',' << row[1] << ',' << row[2] << ',' << row[7] << ',' << row[8] << '\n';
        }
        std::ostringstream fvu;
        fvu.precision(10);
        fvu << "label,policy,expected_k,mean_l0,mean_fvu,mean_dead_count,seeds\n";
        for (const auto& [key, g] : groups) {
            const double n = static_cast<double>(g.n);
            fvu << key.first << ',' << g.policy << ',' << key.second << ',' << g.l0 / n << ',' << g.fvu / n << ','
                << g.dead / n << ',' << g.n << '\n';
        }
        write_text(out / "fvu_vs_k.csv", fvu.str());
        write_text(out / "compare_dead_counts.csv", dead.str());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse autoencoders with token, feature and mutual choice allocation"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate synthetic activations with a known dictionary");
    gen_cmd->add_option("--out", gen.out, "output SAEACT01 path")->required();
    gen_cmd->add_option("--seed", gen.spec.seed);
    gen_cmd->add_option("--rows", gen.spec.n_rows);
    gen_cmd->add_option("--d-model", gen.spec.d_model);
    gen_cmd->add_option("--n-true-features", gen.spec.n_true_features);
    gen_cmd->add_option("--alpha", gen.spec.alpha, "feature frequency exponent");
    gen_cmd->add_option("--beta", gen.spec.beta, "feature frequency offset");
    gen_cmd->add_option("--actives-mean", gen.spec.actives_mean);
    gen_cmd->add_option("--actives-min", gen.spec.actives_min);
    gen_cmd->add_option("--actives-max", gen.spec.actives_max);
    gen_cmd->add_option("--coeff-lo", gen.spec.coeff_lo);
    gen_cmd->add_option("--coeff-hi", gen.spec.coeff_hi);
    gen_cmd->add_option("--noise-sigma", gen.spec.noise_sigma);
    gen_cmd->add_option("--easy-rate", gen.spec.easy_row_rate, "fraction of rows replaced by one constant row");

    std::string train_config, train_preset, train_out;
    std::size_t train_progress = 100;
    TrainOverrides train_o;
    auto* train_cmd = app.add_subcommand("train", "Train a sparse autoencoder");
    train_cmd->add_option("--config", train_config, "JSON run config");
    train_cmd->add_option("--preset", train_preset, "desk | smoke | paper-ratio | paper");
    train_cmd->add_option("--out", train_out, "run directory")->required();
    train_cmd->add_option("--progress", train_progress, "print every N steps to stderr (0 silences)");
    add_train_flags(train_cmd, train_o);

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on an activation file");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "run directory")->required();
    eval_cmd->add_option("--data", ev.data, "SAEACT01 activation file")->required();
    eval_cmd->add_option("--batch-size", ev.batch_size);
    eval_cmd->add_option("--tail-fraction", ev.tail_fraction, "evaluate only this trailing fraction of rows");
    eval_cmd->add_flag("--streaming", ev.streaming, "calibrate per-feature thresholds and gate tokens independently");
    eval_cmd->add_option("--calibration-batches", ev.calibration_batches);
    eval_cmd->add_option("--out", ev.out, "report path (default stdout)");

    std::string fit_density, fit_out;
    std::optional<double> fit_alpha;
    auto* fit_cmd = app.add_subcommand("fit-zipf", "Fit a Zipf curve to a density CSV");
    fit_cmd->add_option("--density", fit_density, "CSV with header rank,density")->required();
    fit_cmd->add_option("--fix-alpha", fit_alpha, "hold the exponent fixed");
    fit_cmd->add_option("--out", fit_out, "output JSON (default stdout)");

    CompareArgs cmp;
    TrainOverrides cmp_o;
    auto* cmp_cmd = app.add_subcommand("compare", "Train several policies at matched expected k and tabulate");
    cmp_cmd->add_option("--config", cmp.config);
    cmp_cmd->add_option("--preset", cmp.preset);
    cmp_cmd->add_option("--policies", cmp.policies, "tc, fc, mc, relu or mc+fc")->delimiter(',');
    cmp_cmd->add_option("--seeds", cmp.seeds)->delimiter(',');
    cmp_cmd->add_option("--fc-steps", cmp.phase2_steps, "fine-tuning steps inside --steps for mc+fc (default 1/4)");
    cmp_cmd->add_option("--threads", cmp.threads, "concurrent runs (default SPARSEALLOC_THREADS)");
    cmp_cmd->add_option("--out", cmp.out, "CSV path (default stdout)");
    add_train_flags(cmp_cmd, cmp_o);

    std::vector<std::string> plot_runs;
    std::string plot_compare, plot_out;
    auto* plot_cmd = app.add_subcommand("export-plots", "Write plot-ready CSVs from runs and comparison tables");
    plot_cmd->add_option("--run", plot_runs, "run directory (repeatable)");
    plot_cmd->add_option("--compare", plot_compare, "CSV written by compare");
    plot_cmd->add_option("--out", plot_out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen_cmd) {
            run_gen_data(gen);
        } else if (*train_cmd) {
            RunConfig cfg = resolve_config(train_config, train_preset, train_o);
            cfg.out_dir = train_out;
            const TrainResult r = run_train(cfg, progress_printer(train_progress));
            std::cerr << "final fvu " << r.report.fvu << " mse " << r.report.mse << " mean_l0 " << r.report.mean_l0
                      << " dead " << r.report.dead_count << " dying " << r.report.dying_count << "\n";
        } else if (*eval_cmd) {
            run_eval(ev);
        } else if (*fit_cmd) {
            run_fit_zipf(fit_density, fit_alpha, fit_out);
        } else if (*cmp_cmd) {
            run_compare(cmp, cmp_o);
        } else if (*plot_cmd) {
            run_export_plots(plot_runs, plot_compare, plot_out);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(ErrorKind::Io);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
