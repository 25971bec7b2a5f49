// collapse_lab: config-driven experiment pipelines on the synthetic
// concepts/words task. Subcommands: train, theory, verify, report.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "collapse/data_model.hpp"
#include "collapse/diagnostics.hpp"
#include "collapse/network.hpp"
#include "collapse/theory.hpp"
#include "collapse/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace collapse;

namespace {

// ---------------------------------------------------------------- logging
enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3, quiet = 4 };

LogLevel g_log_level = LogLevel::info;

void init_log_level() {
    const char* env = std::getenv("COLLAPSE_LAB_LOG");
    if (!env) return;
    const std::string v = env;
    if (v == "debug") g_log_level = LogLevel::debug;
    else if (v == "info") g_log_level = LogLevel::info;
    else if (v == "warn") g_log_level = LogLevel::warn;
    else if (v == "error") g_log_level = LogLevel::error;
    else if (v == "quiet") g_log_level = LogLevel::quiet;
}

template <typename... Args>
void log_at(LogLevel level, const char* tag, const char* fmt, Args... args) {
    if (level < g_log_level) return;
    std::fprintf(stderr, "[%s] ", tag);
    std::fprintf(stderr, fmt, args...);
    std::fputc('\n', stderr);
}
#define LOG_DEBUG(...) log_at(LogLevel::debug, "debug", __VA_ARGS__)
#define LOG_INFO(...) log_at(LogLevel::info, "info", __VA_ARGS__)
#define LOG_ERROR(...) log_at(LogLevel::error, "error", __VA_ARGS__)

// ------------------------------------------------------------ experiment spec
struct ExperimentSpec {
    DataModelConfig data;
    std::uint64_t data_seed = 0;
    bool distinct_latents = true;

    std::string kind = "plain";
    int d = 100;
    double epsilon = 1e-8;

    TrainConfig train;
    int n_test = 20;

    bool theory_h = true;
    bool theory_hstar = false;
    bool theory_type3 = false;

    NetworkKind network_kind() const {
        return kind == "layernorm" ? NetworkKind::layernorm(epsilon) : NetworkKind::plain();
    }
};

double to_double(const std::string& s) {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw config_error("config: not a number: " + s);
    return v;
}

long to_long(const std::string& s) {
    size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw config_error("config: not an integer: " + s);
    return v;
}

ExperimentSpec read_spec(const std::string& path) {
    if (!fs::exists(path)) throw config_error("config file not found: " + path);
    CLI::ConfigTOML reader;
    std::vector<CLI::ConfigItem> items;
    try {
        items = reader.from_file(path);
    } catch (const CLI::Error& e) {
        throw config_error(std::string("config parse error: ") + e.what());
    }

    ExperimentSpec spec;
    std::string distribution = "uniform";
    std::vector<double> custom;
    bool train_seed_set = false;

    for (const auto& item : items) {
        const std::string section = item.parents.empty() ? "" : item.parents.front();
        const std::string key = item.name;
        if (key == "++" || key == "--") continue;  // section open/close markers
        const auto one = [&]() -> const std::string& {
            if (item.inputs.size() != 1)
                throw config_error("config: key " + key + " expects a single value");
            return item.inputs.front();
        };
        if (section == "data") {
            if (key == "n_c") spec.data.n_c = static_cast<int>(to_long(one()));
            else if (key == "s_c") spec.data.s_c = static_cast<int>(to_long(one()));
            else if (key == "L") spec.data.L = static_cast<int>(to_long(one()));
            else if (key == "K") spec.data.K = static_cast<int>(to_long(one()));
            else if (key == "seed") spec.data_seed = static_cast<std::uint64_t>(to_long(one()));
            else if (key == "distinct") spec.distinct_latents = one() == "true";
            else if (key == "distribution") {
                if (item.inputs.size() == 1 &&
                    (item.inputs[0] == "uniform" || item.inputs[0] == "zipf")) {
                    distribution = item.inputs[0];
                } else {
                    distribution = "custom";
                    custom.clear();
                    for (const auto& v : item.inputs) custom.push_back(to_double(v));
                }
            } else {
                throw config_error("config: unknown key [data]." + key);
            }
        } else if (section == "network") {
            if (key == "kind") spec.kind = one();
            else if (key == "d") spec.d = static_cast<int>(to_long(one()));
            else if (key == "epsilon") spec.epsilon = to_double(one());
            else throw config_error("config: unknown key [network]." + key);
        } else if (section == "train") {
            if (key == "n_spl") spec.train.n_spl = static_cast<int>(to_long(one()));
            else if (key == "batch_size") spec.train.batch_size = static_cast<int>(to_long(one()));
            else if (key == "learning_rate") spec.train.learning_rate = to_double(one());
            else if (key == "lambda") spec.train.lambda = to_double(one());
            else if (key == "max_epochs") spec.train.max_epochs = static_cast<int>(to_long(one()));
            else if (key == "plateau_tol") spec.train.plateau_tol = to_double(one());
            else if (key == "seed") {
                spec.train.seed = static_cast<std::uint64_t>(to_long(one()));
                train_seed_set = true;
            } else if (key == "n_test") spec.n_test = static_cast<int>(to_long(one()));
            else throw config_error("config: unknown key [train]." + key);
        } else if (section == "theory") {
            if (key == "minimize_h") spec.theory_h = one() == "true";
            else if (key == "minimize_hstar") spec.theory_hstar = one() == "true";
            else if (key == "type3") spec.theory_type3 = one() == "true";
            else throw config_error("config: unknown key [theory]." + key);
        } else {
            throw config_error("config: unknown section [" + section + "]");
        }
    }

    if (spec.kind != "plain" && spec.kind != "layernorm")
        throw config_error("config: network.kind must be plain or layernorm");
    if (spec.data.s_c < 1) throw config_error("config: [data].s_c missing");
    spec.data.mu = distribution == "uniform" ? word_distribution(DistributionKind::uniform, spec.data.s_c)
                   : distribution == "zipf"  ? word_distribution(DistributionKind::zipf, spec.data.s_c)
                                             : word_distribution(DistributionKind::custom,
                                                                 spec.data.s_c, custom);
    spec.data.lambda = spec.train.lambda;
    if (!train_seed_set) spec.train.seed = spec.data_seed;
    spec.data.validate();
    if (spec.d < 1) throw config_error("config: [network].d must be positive");
    return spec;
}

// ------------------------------------------------------------------ output
std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

void write_json(const fs::path& path, json j) {
    j["meta"] = {{"timestamp_utc", timestamp_utc()}};
    std::ofstream out(path);
    if (!out) throw config_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json to_json(const TheoryPrediction& p) {
    return {{"tau", p.tau},
            {"c", p.c},
            {"c_prime", p.c_prime},
            {"eta", p.eta},
            {"predicted_norm", p.predicted_norm},
            {"predicted_risk", p.predicted_risk},
            {"margin_per_distance", p.margin_per_distance}};
}

json to_json(const NormStats& s) {
    json j{{"mean", s.mean}, {"stddev", s.stddev}};
    if (!s.per_rank_mean.empty()) {
        j["per_rank_mean"] = s.per_rank_mean;
        j["per_rank_std"] = s.per_rank_std;
    }
    return j;
}

json to_json(const AlignmentStats& a) {
    std::vector<double> cross;
    for (Eigen::Index i = 0; i < a.cross_cosine.rows(); ++i)
        for (Eigen::Index j = i + 1; j < a.cross_cosine.cols(); ++j)
            cross.push_back(a.cross_cosine(i, j));
    return {{"within_cosine", a.within_cosine},
            {"within_mean", a.within_mean},
            {"cross_mean", a.cross_mean},
            {"cross_pairs", cross},
            {"excluded_zero_columns", a.excluded_zero_columns}};
}

json to_json(const CollapseReport& r) {
    return {{"embedding_norms", to_json(r.embedding_norms)},
            {"embedding_alignment", to_json(r.embedding_alignment)},
            {"embedding_equiangularity",
             {{"gram", r.embedding_equiangularity.gram},
              {"sum_norm", r.embedding_equiangularity.sum_norm}}},
            {"embedding_singular_values", r.embedding_singular_values},
            {"u_norms", to_json(r.u_norms)},
            {"u_alignment", to_json(r.u_alignment)},
            {"u_equiangularity",
             {{"gram", r.u_equiangularity.gram}, {"sum_norm", r.u_equiangularity.sum_norm}}},
            {"u_singular_values", r.u_singular_values}};
}

json to_json(const std::vector<ComparisonRow>& rows) {
    json arr = json::array();
    for (const auto& r : rows)
        arr.push_back({{"metric", r.metric},
                       {"actual", r.actual},
                       {"expected", r.expected},
                       {"deviation", r.deviation},
                       {"tolerance", r.tolerance},
                       {"pass", r.pass}});
    return arr;
}

void write_words_csv(const fs::path& path, const Eigen::MatrixXd& words,
                     const DataModelConfig& config) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot write " + path.string());
    Eigen::MatrixXd mean_dir = Eigen::MatrixXd::Zero(words.rows(), config.n_c);
    for (int a = 0; a < config.n_c; ++a) {
        for (int b = 0; b < config.s_c; ++b) {
            const auto col = words.col(word_column(a, b, config.s_c));
            if (col.norm() > 0.0) mean_dir.col(a) += col.normalized();
        }
        if (mean_dir.col(a).norm() > 0.0) mean_dir.col(a).normalize();
    }
    out << "alpha,beta,norm,cosine_to_concept_mean\n";
    char line[160];
    for (int a = 0; a < config.n_c; ++a)
        for (int b = 0; b < config.s_c; ++b) {
            const auto col = words.col(word_column(a, b, config.s_c));
            const double norm = col.norm();
            const double cosine = norm > 0.0 ? col.dot(mean_dir.col(a)) / norm : 0.0;
            // 1-based indices in reports
            std::snprintf(line, sizeof line, "%d,%d,%.17g,%.17g\n", a + 1, b + 1, norm, cosine);
            out << line;
        }
}

void write_dataset_csv(const fs::path& path, const Dataset& dataset,
                       const DataModelConfig& config) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot write " + path.string());
    out << "class";
    for (int l = 1; l <= config.L; ++l) out << ",word" << l;
    out << '\n';
    for (const Sample& s : dataset.samples) {
        out << s.label + 1;
        for (const Word& w : s.x.words)
            out << ',' << word_column(w.alpha, w.beta, config.s_c) + 1;
        out << '\n';
    }
}

// ----------------------------------------------------------------- commands
int cmd_train(const ExperimentSpec& spec, const fs::path& out_dir, int threads,
              bool dump_dataset) {
    const NetworkKind kind = spec.network_kind();
    Rng data_rng(spec.data_seed);
    LOG_INFO("sampling %d latents (n_c=%d, L=%d)", spec.data.K, spec.data.n_c, spec.data.L);
    const LatentSet latents = sample_latents(spec.data, spec.distinct_latents, data_rng);
    const Dataset dataset = make_dataset(latents, spec.data, spec.train.n_spl, data_rng);
    if (dump_dataset) write_dataset_csv(out_dir / "dataset.csv", dataset, spec.data);

    LOG_INFO("training %s on %zu samples", spec.kind.c_str(), dataset.samples.size());
    const TrainResult result =
        sgd_train(kind, dataset, spec.train, spec.d, spec.data, [](int epoch, double risk) {
            if (epoch % 10 == 0) LOG_DEBUG("epoch %d: train risk %.6f", epoch, risk);
        });
    LOG_INFO("trained for %zu epochs, final risk %.6f", result.risk_history.size(),
             result.risk_history.back());

    Rng eval_rng(spec.data_seed ^ 0x7e57ULL);
    const double accuracy = evaluate_accuracy(kind, result.weights, latents, spec.data,
                                              spec.n_test, eval_rng, threads);
    LOG_INFO("test accuracy %.4f", accuracy);

    const TheoryParams params = TheoryParams::from(spec.data, spec.d);
    const TheoryPrediction prediction =
        kind.is_layernorm() ? minimize_hstar(params) : minimize_h(params);
    const CollapseReport report = collapse_report(kind, result.weights, spec.data, latents);
    const auto comparison = compare_to_theory(report, prediction, spec.data.n_c, {});

    save_weights(out_dir / "weights.bin", result.weights, kind);
    {
        std::ofstream hist(out_dir / "history.csv");
        if (!hist) throw config_error("cannot write history.csv");
        hist << "epoch,train_risk\n";
        char line[64];
        for (size_t e = 0; e < result.risk_history.size(); ++e) {
            std::snprintf(line, sizeof line, "%zu,%.17g\n", e + 1, result.risk_history[e]);
            hist << line;
        }
    }
    Eigen::MatrixXd words = result.weights.W;
    if (kind.is_layernorm())
        for (Eigen::Index j = 0; j < words.cols(); ++j)
            words.col(j) = layer_norm(words.col(j), kind.layernorm_epsilon);
    write_words_csv(out_dir / "words.csv", words, spec.data);

    json j{{"kind", spec.kind},
           {"epochs", result.risk_history.size()},
           {"final_risk", result.risk_history.back()},
           {"test_accuracy", accuracy},
           {"prediction", to_json(prediction)},
           {"collapse", to_json(report)},
           {"comparison", to_json(comparison)}};
    write_json(out_dir / "report.json", j);
    return 0;
}

int cmd_theory(const ExperimentSpec& spec, const fs::path& out_dir) {
    const TheoryParams params = TheoryParams::from(spec.data, spec.d);
    json j;
    if (spec.theory_h) j["h"] = to_json(minimize_h(params));
    if (spec.theory_hstar) j["hstar"] = to_json(minimize_hstar(params));
    if (spec.theory_type3) {
        const Type3Solution sol = solve_type3_system(params);  // throws outside bound (7)
        std::vector<double> radii(sol.r.data(), sol.r.data() + sol.r.size());
        j["type3"] = {{"c", sol.c},
                      {"radii", radii},
                      {"residual", sol.residual_scale},
                      {"uniqueness_bound", uniqueness_bound(params)}};
    }
    write_json(out_dir / "prediction.json", j);
    return 0;
}

// Central finite differences of a scalar objective in every coordinate of W
// and Uhat; used by `verify` to check the analytic gradients end to end.
template <typename Objective>
Gradients finite_difference(Weights w, Objective f, double step) {
    Gradients g;
    g.dW.resizeLike(w.W);
    g.dUhat.resizeLike(w.Uhat);
    for (Eigen::Index j = 0; j < w.W.size(); ++j) {
        const double saved = w.W.data()[j];
        w.W.data()[j] = saved + step;
        const double up = f(w);
        w.W.data()[j] = saved - step;
        const double down = f(w);
        w.W.data()[j] = saved;
        g.dW.data()[j] = (up - down) / (2 * step);
    }
    for (Eigen::Index j = 0; j < w.Uhat.size(); ++j) {
        const double saved = w.Uhat.data()[j];
        w.Uhat.data()[j] = saved + step;
        const double up = f(w);
        w.Uhat.data()[j] = saved - step;
        const double down = f(w);
        w.Uhat.data()[j] = saved;
        g.dUhat.data()[j] = (up - down) / (2 * step);
    }
    return g;
}

int cmd_verify(const ExperimentSpec& spec, const fs::path& out_dir,
               const std::string& weights_path) {
    // Everything below enumerates full supports, so insist on a desk-scale task.
    double latent_count = 1.0, support = 1.0;
    for (int l = 0; l < spec.data.L; ++l) {
        latent_count *= spec.data.n_c;
        support *= spec.data.s_c;
    }
    if (latent_count > 4096 || support > 65536)
        throw budget_error("verify: instance too large, need n_c^L <= 4096 and s_c^L <= 65536");

    json checks = json::array();
    bool all_pass = true;
    const auto record = [&](const std::string& name, bool pass, double value) {
        checks.push_back({{"check", name}, {"pass", pass}, {"value", value}});
        all_pass = all_pass && pass;
        LOG_INFO("%-34s %s (%.3e)", name.c_str(), pass ? "pass" : "FAIL", value);
    };

    const LatentSet full = full_latent_set(spec.data.n_c, spec.data.L);
    DataModelConfig data = spec.data;
    data.K = full.K();
    const TheoryParams params = TheoryParams::from(data, spec.d);

    // Symmetry checks run on the configured latents: exact only when the
    // config samples the whole latent space.
    Rng latent_rng(spec.data_seed);
    const LatentSet sampled = sample_latents(spec.data, spec.distinct_latents, latent_rng);
    const SymmetryReport sym = check_symmetry_assumption(sampled);
    record("symmetry_assumption", sym.holds, sym.worst_violation);
    const SymmetryConsequences reg = check_symmetry_consequences(sampled);
    record("symmetry_consequences", reg.holds, reg.worst_violation);

    // analytic minibatch gradients vs central differences
    Rng rng(spec.data_seed + 17);
    Dataset batch_data = make_dataset(full, data, 2, rng);
    std::span<const Sample> batch(batch_data.samples);
    for (const char* kind_name : {"plain", "layernorm"}) {
        const NetworkKind kind = std::string(kind_name) == "plain"
                                     ? NetworkKind::plain()
                                     : NetworkKind::layernorm(0.0);
        const double lam_w = kind.is_layernorm() ? 0.0 : 0.01;
        Weights w = init_weights(spec.d, data.n_w(), data.K, data.L, rng);
        const Gradients analytic = backward(kind, w, batch, lam_w, 0.01, data);
        const Gradients numeric = finite_difference(
            w,
            [&](const Weights& ww) {
                double loss = 0.0;
                for (const Sample& s : batch)
                    loss += cross_entropy(forward(kind, ww, s.x, data), s.label);
                loss /= static_cast<double>(batch.size());
                loss += 0.5 * lam_w * ww.W.squaredNorm() + 0.5 * 0.01 * ww.Uhat.squaredNorm();
                return loss;
            },
            1e-5);
        const double rel = std::sqrt((analytic.dW - numeric.dW).squaredNorm() +
                                     (analytic.dUhat - numeric.dUhat).squaredNorm()) /
                           std::max(1e-300, std::sqrt(numeric.squared_norm()));
        record(std::string("gradient_fd_") + kind_name, rel <= 1e-6, rel);
    }

    // closed-form risk against full enumeration at a type-I configuration
    {
        const TheoryPrediction pred = minimize_h(params);
        Rng frame_rng(7);
        CollapseConfig cfg;
        cfg.kind = CollapseKind::type1;
        cfg.c = pred.c;
        cfg.c_prime = pred.c_prime;
        cfg.frame = equiangular_frame(data.n_c, spec.d, false, frame_rng);
        const Weights w = build_collapse_config(cfg, full, params);
        const double enumerated = exact_risk(NetworkKind::plain(), w, full, params);
        const double closed = closed_form_risk(CollapseKind::type1, pred.c, params);
        record("closed_form_vs_enumeration", std::abs(enumerated - closed) <= 1e-10,
               std::abs(enumerated - closed));
    }

    // type-III criticality: exact gradient vanishes at the solved system
    {
        const Type3Solution sol = solve_type3_system(params);
        Rng frame_rng(11);
        CollapseConfig cfg;
        cfg.kind = CollapseKind::type3;
        cfg.c = sol.c;
        cfg.r = sol.r;
        cfg.frame = equiangular_frame(data.n_c, spec.d, false, frame_rng);
        const Weights w = build_collapse_config(cfg, full, params);
        const Gradients g = exact_risk_gradient(NetworkKind::plain(), w, full, params);
        const double norm = std::sqrt(g.squared_norm());
        record("type3_criticality", norm <= 1e-8, norm);
        record("type3_residual", sol.residual_scale <= 1e-10, sol.residual_scale);
    }

    if (!weights_path.empty()) {
        const LoadedWeights loaded = load_weights(weights_path);  // corrupt file -> exit 2
        record("weights_file_loads", true,
               static_cast<double>(loaded.weights.W.size() + loaded.weights.Uhat.size()));
    }

    json j{{"checks", checks}, {"all_pass", all_pass}};
    write_json(out_dir / "verify.json", j);
    return all_pass ? 0 : 1;
}

int cmd_report(const ExperimentSpec& spec, const fs::path& out_dir,
               const std::string& weights_path) {
    const LoadedWeights loaded = load_weights(weights_path);
    if (loaded.weights.n_w() != spec.data.n_w() || loaded.weights.K != spec.data.K ||
        loaded.weights.L != spec.data.L)
        throw config_error("report: weights file does not match the data config");
    Rng data_rng(spec.data_seed);
    const LatentSet latents = sample_latents(spec.data, spec.distinct_latents, data_rng);
    const CollapseReport report =
        collapse_report(loaded.kind, loaded.weights, spec.data, latents);
    Eigen::MatrixXd words = loaded.weights.W;
    if (loaded.kind.is_layernorm())
        for (Eigen::Index j = 0; j < words.cols(); ++j)
            words.col(j) = layer_norm(words.col(j), loaded.kind.layernorm_epsilon);
    write_words_csv(out_dir / "words.csv", words, spec.data);
    json j{{"kind", loaded.kind.is_layernorm() ? "layernorm" : "plain"},
           {"collapse", to_json(report)}};
    write_json(out_dir / "report.json", j);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    init_log_level();
    CLI::App app{"feature-collapse laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".", weights_path;
    std::optional<std::uint64_t> seed_override;
    int threads = 1;
    bool dump_dataset = false;

    const auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* opt = cmd->add_option("--config", config_path, "TOML experiment config");
        if (needs_config) opt->required();
        cmd->add_option("--out", out_dir, "output directory (created if missing)");
        cmd->add_option("--seed", seed_override, "override [data].seed and [train].seed");
        cmd->add_option("--threads", threads, "worker threads (default 1, reproducible)");
    };

    auto* train = app.add_subcommand("train", "sample a task, run SGD, evaluate and report");
    add_common(train, true);
    train->add_flag("--dump-dataset", dump_dataset, "also write dataset.csv");
    auto* theory = app.add_subcommand("theory", "closed-form predictions for the config");
    add_common(theory, true);
    auto* verify = app.add_subcommand("verify", "self-checks on a desk-scale instance");
    add_common(verify, true);
    verify->add_option("--weights", weights_path, "optionally check a weights file");
    auto* report = app.add_subcommand("report", "collapse diagnostics for saved weights");
    add_common(report, true);
    report->add_option("--weights", weights_path, "weights checkpoint")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        ExperimentSpec spec = read_spec(config_path);
        if (seed_override) {
            spec.data_seed = *seed_override;
            spec.train.seed = *seed_override;
        }
        fs::create_directories(out_dir);
        if (threads < 1) throw config_error("--threads must be >= 1");

        if (app.got_subcommand(train)) return cmd_train(spec, out_dir, threads, dump_dataset);
        if (app.got_subcommand(theory)) return cmd_theory(spec, out_dir);
        if (app.got_subcommand(verify)) return cmd_verify(spec, out_dir, weights_path);
        if (app.got_subcommand(report)) return cmd_report(spec, out_dir, weights_path);
        return 2;
    } catch (const no_guarantee_error& e) {
        LOG_ERROR("%s", e.what());
        return 3;
    } catch (const config_error& e) {
        LOG_ERROR("%s", e.what());
        return 2;
    } catch (const std::exception& e) {
        LOG_ERROR("%s", e.what());
        return 1;
    }
}
