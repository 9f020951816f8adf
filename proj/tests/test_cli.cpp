#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparsealloc/checkpoint.hpp"
#include "sparsealloc/data.hpp"
#include "sparsealloc/zipf.hpp"

using namespace sparsealloc;
namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / ("sparsealloc_cli_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

struct Cleanup {
    ~Cleanup() { fs::remove_all(work_dir()); }
} cleanup;

int run(const std::string& args) {
    const std::string cmd = std::string(SPARSEALLOC_CLI) + " " + args + " >" + (work_dir() / "stdout.txt").string() +
                            " 2>" + (work_dir() / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string path(const std::string& name) { return (work_dir() / name).string(); }

}  // namespace

TEST_CASE("usage errors exit with 1") {
    CHECK(run("") == 1);
    CHECK(run("frobnicate") == 1);
    CHECK(run("train --out " + path("x") + " --no-such-flag 3") == 1);
    CHECK(run("train --out " + path("x") + " --preset galaxy") == 1);
    CHECK(run("fit-zipf") == 1);
}

TEST_CASE("missing or malformed files exit with 2") {
    CHECK(run("fit-zipf --density " + path("absent.csv")) == 2);
    CHECK(run("train --preset smoke --data " + path("absent.bin") + " --out " + path("r")) == 2);
    std::ofstream(path("garbage.bin")) << "not an activation file at all, definitely not";
    CHECK(run("train --preset smoke --data " + path("garbage.bin") + " --out " + path("r")) == 2);
}

TEST_CASE("numeric failures exit with 3") {
    // A constant row cannot be normalised.
    Matrix rows = Matrix::Ones(600, 4);
    write_activations(ActivationStore::from_matrix(rows), path("flat.bin"));
    CHECK(run("train --preset smoke --data " + path("flat.bin") + " --out " + path("flat_run")) == 3);

    std::ofstream(path("two.csv")) << "rank,density\n1,0.5\n2,0.25\n";
    CHECK(run("fit-zipf --density " + path("two.csv")) == 3);
}

TEST_CASE("fit-zipf recovers beta from an exact curve") {
    std::vector<double> d;
    for (int i = 1; i <= 100; ++i) d.push_back(1000.0 / (i + 6.8));
    write_density_csv(path("exact.csv"), d);
    REQUIRE(run("fit-zipf --density " + path("exact.csv") + " --fix-alpha 1.0 --out " + path("fit.json")) == 0);
    const auto j = nlohmann::json::parse(read_text(path("fit.json")));
    CHECK(std::abs(j.at("beta").get<double>() - 6.8) <= 1e-3);
    CHECK(j.at("alpha").get<double>() == 1.0);
}

TEST_CASE("gen-data is deterministic for a seed") {
    const std::string common = " --seed 7 --rows 300 --d-model 8 --n-true-features 32";
    REQUIRE(run("gen-data --out " + path("g1.bin") + common) == 0);
    REQUIRE(run("gen-data --out " + path("g2.bin") + common) == 0);
    CHECK(read_text(path("g1.bin")) == read_text(path("g2.bin")));
    CHECK(read_text(path("g1.bin.dict")) == read_text(path("g2.bin.dict")));
    CHECK(fs::exists(path("g1.bin.truth.json")));
    CHECK(read_activations(path("g1.bin")).n_rows == 300);
}

TEST_CASE("eval of an identity autoencoder on its own data gives zero FVU") {
    const std::size_t N = 6;
    Matrix raw(200, static_cast<Eigen::Index>(N));
    raw.setRandom();
    write_activations(ActivationStore::from_matrix(raw), path("id.bin"));

    Checkpoint ck;
    ck.params = SaeParams::zeros(N, N);
    ck.params.w_enc.setIdentity();
    ck.params.w_dec.setIdentity();
    ck.policy.kind = PolicyKind::TokenChoice;
    ck.policy.expected_k = static_cast<double>(N);
    ck.policy.rectify = false;
    save_checkpoint(path("id_ckpt"), ck, "2026-01-01T00:00:00Z");

    REQUIRE(run("eval --checkpoint " + path("id_ckpt") + " --data " + path("id.bin") + " --batch-size 64 --out " +
                path("id_report.json")) == 0);
    const auto j = nlohmann::json::parse(read_text(path("id_report.json")));
    CHECK(std::abs(j.at("fvu").get<double>()) <= 1e-10);
    CHECK(j.at("mean_l0").get<double>() == static_cast<double>(N));
}

TEST_CASE("train, eval, compare and export-plots work end to end") {
    REQUIRE(run("gen-data --out " + path("e2e.bin") + " --seed 3 --rows 3000 --d-model 8 --n-true-features 48 "
                "--actives-mean 3 --easy-rate 0.05") == 0);
    const std::string train_flags = " --preset smoke --data " + path("e2e.bin") +
                                    " --width-multiple 4 --expected-k 3 --steps 20 --batch-size 128 "
                                    "--density-window-tokens 1280 --dead-threshold-tokens 1280 --refit-interval 10";
    REQUIRE(run("train --out " + path("e2e_run") + train_flags + " --phase2-steps 5") == 0);
    for (const char* f : {"config.json", "meta.json", "tensors.bin", "optim.bin", "log.jsonl", "report.json",
                          "density.csv", "density_history.csv"}) {
        CHECK(fs::exists(work_dir() / "e2e_run" / f));
    }
    const auto report = nlohmann::json::parse(read_text(path("e2e_run/report.json")));
    CHECK(report.at("steps_run") == 25);
    CHECK(report.contains("easy_rows_mean_fpt"));

    // A saved config reproduces the run.
    REQUIRE(run("train --config " + path("e2e_run/config.json") + " --out " + path("e2e_again")) == 0);
    CHECK(read_text(path("e2e_run/tensors.bin")) == read_text(path("e2e_again/tensors.bin")));

    REQUIRE(run("eval --checkpoint " + path("e2e_run") + " --data " + path("e2e.bin") +
                " --tail-fraction 0.2 --streaming --batch-size 128 --out " + path("stream.json")) == 0);
    CHECK(nlohmann::json::parse(read_text(path("stream.json"))).at("policy") == "threshold_gate");

    REQUIRE(run("compare" + train_flags + " --policies tc,mc+fc --seeds 0 --threads 2 --out " + path("cmp.csv")) == 0);
    const std::string csv = read_text(path("cmp.csv"));
    CHECK(csv.rfind("label,policy,seed,expected_k,fvu,mse,mean_l0,dead_count,dying_count\n", 0) == 0);
    CHECK(csv.find("mc+fc,mc->fc,0,") != std::string::npos);

    REQUIRE(run("export-plots --run " + path("e2e_run") + " --compare " + path("cmp.csv") + " --out " +
                path("plots")) == 0);
    for (const char* f : {"density_vs_rank.csv", "density_history.csv", "fpt_histogram.csv", "progressive_curve.csv",
                          "dead_counts.csv", "fvu_vs_k.csv", "compare_dead_counts.csv"}) {
        CHECK(fs::exists(work_dir() / "plots" / f));
    }
}
