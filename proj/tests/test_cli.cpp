// Integration tests that drive the collapse_lab binary end to end. The build
// passes the binary and config locations through the environment.
#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string binary() {
    const char* bin = std::getenv("COLLAPSE_LAB_BIN");
    REQUIRE(bin != nullptr);
    return bin;
}

std::string configs() {
    const char* dir = std::getenv("COLLAPSE_LAB_CONFIGS");
    REQUIRE(dir != nullptr);
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = binary() + " " + args + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    json j;
    in >> j;
    return j;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("collapse_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("theory command reproduces the reference constants") {
    const fs::path out = fresh_dir("theory");
    REQUIRE(run("theory --config " + configs() + "/uniform_full.toml --out " + out.string()) ==
            0);
    const json j = read_json(out / "prediction.json");
    CHECK(std::abs(j["h"]["c"].get<double>() - 1.42214) < 1e-5);

    const fs::path out50 = fresh_dir("theory50");
    REQUIRE(run("theory --config " + configs() + "/theory_k50.toml --out " + out50.string()) == 0);
    const json j50 = read_json(out50 / "prediction.json");
    CHECK(std::abs(j50["h"]["c"].get<double>() - 0.61602) < 1e-5);
}

TEST_CASE("theory command emits ordered type-III radii on a desk-scale task") {
    const fs::path out = fresh_dir("type3");
    REQUIRE(run("theory --config " + configs() + "/desk.toml --out " + out.string()) == 0);
    const json j = read_json(out / "prediction.json");
    const auto radii = j["type3"]["radii"].get<std::vector<double>>();
    REQUIRE(radii.size() == 2);
    CHECK(radii[0] > radii[1]);  // more frequent words receive larger embeddings
    CHECK(j["type3"]["residual"].get<double>() <= 1e-10);
}

TEST_CASE("theory exits 3 when the uniqueness bound is violated") {
    // at the full zipf scale lambda = 0.001 sits outside the bound
    const fs::path out = fresh_dir("type3_blocked");
    const fs::path cfg = out / "blocked.toml";
    {
        std::ofstream f(cfg);
        f << slurp(fs::path(configs()) / "zipf_small_h.toml");
        f << "\n[theory]\nminimize_h = false\ntype3 = true\n";
    }
    CHECK(run("theory --config " + cfg.string() + " --out " + out.string()) == 3);
}

TEST_CASE("missing or malformed input exits 2") {
    CHECK(run("theory --config /nonexistent.toml --out /tmp") == 2);

    const fs::path out = fresh_dir("badcfg");
    const fs::path cfg = out / "bad.toml";
    {
        std::ofstream f(cfg);
        f << "[data]\nn_c = 3\nunknown_key = 5\n";
    }
    CHECK(run("theory --config " + cfg.string() + " --out " + out.string()) == 2);
}

TEST_CASE("train on a desk-scale task writes all artifacts and is idempotent") {
    const fs::path out1 = fresh_dir("train1");
    const fs::path out2 = fresh_dir("train2");
    const std::string cfg = configs() + "/desk.toml";
    REQUIRE(run("train --config " + cfg + " --out " + out1.string()) == 0);
    REQUIRE(run("train --config " + cfg + " --out " + out2.string()) == 0);

    for (const char* name : {"weights.bin", "history.csv", "report.json", "words.csv"}) {
        CHECK(fs::exists(out1 / name));
    }
    // byte-identical artifacts apart from the timestamp metadata
    CHECK(slurp(out1 / "history.csv") == slurp(out2 / "history.csv"));
    CHECK(slurp(out1 / "words.csv") == slurp(out2 / "words.csv"));
    CHECK(slurp(out1 / "weights.bin") == slurp(out2 / "weights.bin"));
    json a = read_json(out1 / "report.json");
    json b = read_json(out2 / "report.json");
    a.erase("meta");
    b.erase("meta");
    CHECK(a == b);

    const json report = read_json(out1 / "report.json");
    CHECK(report["test_accuracy"].get<double>() >= 0.9);  // 4 classes, tiny task

    // report command round-trips the weights file
    const fs::path out3 = fresh_dir("report");
    REQUIRE(run("report --config " + cfg + " --weights " + (out1 / "weights.bin").string() +
                " --out " + out3.string()) == 0);
    CHECK(fs::exists(out3 / "report.json"));
    CHECK(fs::exists(out3 / "words.csv"));

    // a corrupted weights file is invalid input
    const fs::path broken = out3 / "broken.bin";
    fs::copy_file(out1 / "weights.bin", broken);
    fs::resize_file(broken, 64);
    CHECK(run("report --config " + cfg + " --weights " + broken.string() + " --out " +
              out3.string()) == 2);
}

TEST_CASE("layernorm training pipeline with a custom distribution") {
    const fs::path out = fresh_dir("train_ln");
    const fs::path cfg = out / "ln.toml";
    {
        std::ofstream f(cfg);
        f << "[data]\nn_c = 2\ns_c = 3\nL = 2\nK = 4\ndistribution = [6.0, 3.0, 1.0]\nseed = 5\n"
          << "[network]\nkind = \"layernorm\"\nd = 8\nepsilon = 1e-8\n"
          << "[train]\nn_spl = 8\nbatch_size = 8\nlearning_rate = 0.2\nlambda = 0.01\n"
          << "max_epochs = 120\nplateau_tol = 0.0\nn_test = 10\n";
    }
    REQUIRE(run("train --config " + cfg.string() + " --out " + out.string()) == 0);
    const json report = read_json(out / "report.json");
    CHECK(report["kind"] == "layernorm");
    CHECK(report["test_accuracy"].get<double>() >= 0.9);
    // the prediction block for this variant comes from the H* minimizer
    CHECK(report["prediction"]["c"].get<double>() > 0.0);
}

TEST_CASE("evaluation threads do not change any artifact") {
    const fs::path out1 = fresh_dir("thr1");
    const fs::path out3 = fresh_dir("thr3");
    const std::string cfg = configs() + "/desk.toml";
    REQUIRE(run("train --config " + cfg + " --out " + out1.string() + " --threads 1") == 0);
    REQUIRE(run("train --config " + cfg + " --out " + out3.string() + " --threads 3") == 0);
    CHECK(slurp(out1 / "weights.bin") == slurp(out3 / "weights.bin"));
    json a = read_json(out1 / "report.json");
    json b = read_json(out3 / "report.json");
    a.erase("meta");
    b.erase("meta");
    CHECK(a == b);
}

TEST_CASE("verify passes on the full desk instance and fails on a subset") {
    const fs::path out = fresh_dir("verify");
    REQUIRE(run("verify --config " + configs() + "/desk.toml --out " + out.string()) == 0);
    const json j = read_json(out / "verify.json");
    CHECK(j["all_pass"].get<bool>());
    for (const auto& check : j["checks"]) CHECK(check["pass"].get<bool>());

    // K = 3 of the 4 possible latents: the symmetry identities cannot hold
    const fs::path out_sub = fresh_dir("verify_subset");
    const fs::path cfg = out_sub / "subset.toml";
    {
        std::ofstream f(cfg);
        std::string base = slurp(fs::path(configs()) / "desk.toml");
        const auto pos = base.find("K = 4");
        REQUIRE(pos != std::string::npos);
        base.replace(pos, 5, "K = 3");
        f << base;
    }
    CHECK(run("verify --config " + cfg.string() + " --out " + out_sub.string()) == 1);
    const json sub = read_json(out_sub / "verify.json");
    CHECK_FALSE(sub["all_pass"].get<bool>());
}
