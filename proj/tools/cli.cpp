#include "cli.hpp"

#include "lw2g/errors.hpp"
#include "lw2g/report.hpp"
#include "lw2g/snapshot.hpp"
#include "lw2g/trace.hpp"

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <charconv>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace lw2g::cli {

namespace {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T value{};
    const char* first = text.data();
    const char* last = first + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw ConfigError("invalid value '" + text + "' for " + key);
    }
    return value;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) {
            continue;
        }
        out.push_back(parse_number<T>(key, item.substr(b, e - b + 1)));
    }
    return out;
}

using Setter = std::function<void(ExperimentSpec&, const std::string&, const std::string&)>;

template <class T, class Owner>
Setter field(T Owner::*member, Owner ExperimentSpec::*part) {
    return [member, part](ExperimentSpec& s, const std::string& key, const std::string& v) {
        (s.*part).*member = parse_number<T>(key, v);
    };
}

const std::map<std::string, Setter>& setters() {
    using S = ExperimentSpec;
    static const std::map<std::string, Setter> table{
        {"run.seed",
         [](S& s, const std::string& k, const std::string& v) {
             const auto seed = parse_number<std::uint64_t>(k, v);
             s.stream.seed = seed;
             s.encoder.seed = seed;
             s.train.seed = seed;
         }},
        {"run.mode", [](S& s, const std::string& k, const std::string& v) {
             try {
                 s.train.mode = parse_mode(v);
             } catch (const ContractError& e) {
                 throw ConfigError(k + ": " + e.what());
             }
         }},
        {"stream.n_tasks", field(&StreamSpec::n_tasks, &S::stream)},
        {"stream.classes_per_task", field(&StreamSpec::classes_per_task, &S::stream)},
        {"stream.dim",
         [](S& s, const std::string& k, const std::string& v) {
             s.stream.dim = parse_number<int>(k, v);
             s.encoder.input_dim = s.stream.dim;
         }},
        {"stream.similarity_schedule",
         [](S& s, const std::string& k, const std::string& v) { s.stream.similarity_schedule = parse_list<double>(k, v); }},
        {"stream.samples_per_class", field(&StreamSpec::samples_per_class, &S::stream)},
        {"stream.frame_rank", field(&StreamSpec::frame_rank, &S::stream)},
        {"stream.class_scale", field(&StreamSpec::class_scale, &S::stream)},
        {"stream.in_frame_noise", field(&StreamSpec::in_frame_noise, &S::stream)},
        {"stream.isotropic_noise", field(&StreamSpec::isotropic_noise, &S::stream)},
        {"stream.centre_norm", field(&StreamSpec::centre_norm, &S::stream)},
        {"stream.jitter_deg", field(&StreamSpec::jitter_deg, &S::stream)},
        {"stream.mean_shift", field(&StreamSpec::mean_shift, &S::stream)},
        {"encoder.d_model", field(&EncoderConfig::d_model, &S::encoder)},
        {"encoder.n_blocks", field(&EncoderConfig::n_blocks, &S::encoder)},
        {"encoder.n_heads", field(&EncoderConfig::n_heads, &S::encoder)},
        {"encoder.prompt_len", field(&EncoderConfig::prompt_len, &S::encoder)},
        {"encoder.n_patches", field(&EncoderConfig::n_patches, &S::encoder)},
        {"encoder.mlp_hidden", field(&EncoderConfig::mlp_hidden, &S::encoder)},
        {"encoder.prompted_blocks",
         [](S& s, const std::string& k, const std::string& v) { s.encoder.prompted_blocks = parse_list<int>(k, v); }},
        {"train.eps_task", field(&TrainConfig::eps_task, &S::train)},
        {"train.eps_pre", field(&TrainConfig::eps_pre, &S::train)},
        {"train.phi", field(&TrainConfig::phi, &S::train)},
        {"train.n_fft", field(&TrainConfig::n_fft, &S::train)},
        {"train.epochs", field(&TrainConfig::epochs, &S::train)},
        {"train.batch_size", field(&TrainConfig::batch_size, &S::train)},
        {"train.lr", field(&TrainConfig::lr, &S::train)},
        {"train.head_lr", field(&TrainConfig::head_lr, &S::train)},
        {"train.key_weight", field(&TrainConfig::key_weight, &S::train)},
        {"train.key_lr", field(&TrainConfig::key_lr, &S::train)},
        {"train.dsub_size", field(&TrainConfig::dsub_size, &S::train)},
        {"train.repr_samples", field(&TrainConfig::repr_samples, &S::train)},
        {"train.fft_score",
         [](S& s, const std::string& k, const std::string& v) {
             if (v == "projection_fraction") {
                 s.train.fft_score = TransferScore::kProjectionFraction;
             } else if (v == "angle_to_projection") {
                 s.train.fft_score = TransferScore::kAngleToProjection;
             } else {
                 throw ConfigError(k + " must be projection_fraction or angle_to_projection");
             }
         }},
        {"train.repr_source",
         [](S& s, const std::string& k, const std::string& v) {
             if (v == "prompted") {
                 s.train.repr_source = EncoderMode::kPrompted;
             } else if (v == "query") {
                 s.train.repr_source = EncoderMode::kQuery;
             } else {
                 throw ConfigError(k + " must be prompted or query");
             }
         }},
        {"pretrain.steps", field(&PretrainSpec::steps, &S::pretrain)},
        {"pretrain.lr", field(&PretrainSpec::lr, &S::pretrain)},
        {"pretrain.classes", field(&PretrainSpec::classes, &S::pretrain)},
        {"pretrain.samples_per_class", field(&PretrainSpec::samples_per_class, &S::pretrain)},
    };
    return table;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    std::ostringstream text;
    text << in.rdbuf();
    return text.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out << bytes;
    if (!out) {
        throw std::runtime_error("failed to write " + path.string());
    }
}

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

struct RunOptions {
    std::string config;
    std::optional<std::string> mode;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "out";
};

int run_command(const RunOptions& opts, std::ostream& out, std::ostream& err) {
    ExperimentSpec spec;
    std::string config_text;
    try {
        config_text = read_file(opts.config);
        spec = parse_config(config_text);
        if (opts.mode) {
            spec.train.mode = parse_mode(*opts.mode);
        }
        if (opts.seed) {
            spec.stream.seed = spec.encoder.seed = spec.train.seed = *opts.seed;
        }
        spec.validate();
    } catch (const std::exception& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    }

    const std::string started = utc_now();
    const Experiment exp = run_experiment(spec);

    const fs::path dir(opts.out_dir);
    fs::create_directories(dir);
    const std::string report = report_json(exp);
    write_file(dir / "report.json", report);
    std::ostringstream csv;
    write_matrix_csv(csv, exp.accuracy());
    write_file(dir / "metrics.csv", csv.str());
    std::ostringstream trace;
    write_trace(trace, exp.reports());
    write_file(dir / "trace.jsonl", trace.str());
    save_snapshot((dir / "snapshot.bin").string(), exp);

    nlohmann::json manifest{
        {"config_path", opts.config},
        {"config_text", config_text},
        {"overrides",
         {{"mode", opts.mode ? nlohmann::json(*opts.mode) : nlohmann::json(nullptr)},
          {"seed", opts.seed ? nlohmann::json(*opts.seed) : nlohmann::json(nullptr)}}},
        {"input_hash", git_blob_sha1(config_text)},
        {"outputs",
         {{"report", (dir / "report.json").string()},
          {"metrics", (dir / "metrics.csv").string()},
          {"trace", (dir / "trace.jsonl").string()},
          {"snapshot", (dir / "snapshot.bin").string()}}},
        {"started_at", started},
        {"finished_at", utc_now()}};
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");

    const AccuracyMatrix& m = exp.accuracy();
    out << "mode " << to_string(spec.train.mode) << "  faa " << faa(m) << "  pra " << pra(m) << "  ssp "
        << ssp(exp.pool());
    if (m.size() >= 2) {
        out << "  ffm " << ffm(m);
    }
    out << "\nwrote " << dir.string() << '\n';
    return kOk;
}

int replay_command(const std::string& path, std::ostream& out) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    print_replay(out, replay_trace(in));
    return kOk;
}

int compare_command(const std::string& a_path, const std::string& b_path, std::ostream& out) {
    const ReportSummary a = read_report(a_path);
    const ReportSummary b = read_report(b_path);
    print_delta(out, a, b, compare_reports(a, b));
    return kOk;
}

}  // namespace

ExperimentSpec parse_config(const std::string& text) {
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(e.what());
    }
    ExperimentSpec spec;
    spec.encoder.input_dim = spec.stream.dim;
    for (const auto& [section, body] : tree) {
        if (body.empty()) {
            throw ConfigError("key '" + section + "' must live inside a section");
        }
        for (const auto& [key, value] : body) {
            const std::string name = section + "." + key;
            const auto it = setters().find(name);
            if (it == setters().end()) {
                throw ConfigError("unknown config key " + name);
            }
            it->second(spec, name, value.data());
        }
    }
    return spec;
}

ExperimentSpec load_config(const std::string& path) { return parse_config(read_file(path)); }

std::string git_blob_sha1(const std::string& bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
        EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("SHA-1 digest failed");
    }
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return hex.str();
}

int main(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Prompt-set growth experiments: run, replay decision traces, compare reports"};
    app.require_subcommand(1);

    RunOptions run_opts;
    auto* run = app.add_subcommand("run", "Train a stream and write report.json, metrics.csv, trace.jsonl, snapshot.bin");
    run->add_option("--config", run_opts.config, "Config file")->required();
    run->add_option("--mode", run_opts.mode, "lw2g, grow_always or single_set");
    run->add_option("--seed", run_opts.seed, "Seed for stream, encoder and training");
    run->add_option("--out", run_opts.out_dir, "Output directory");

    std::string trace_path;
    auto* replay = app.add_subcommand("replay", "Re-run grow/reuse decisions from a trace file");
    auto* positional = replay->add_option("trace", trace_path, "Trace file (JSON lines)");
    replay->add_option("--replay", trace_path, "Trace file (JSON lines)")->excludes(positional);

    std::string report_a;
    std::string report_b;
    auto* compare = app.add_subcommand("compare", "Print metric deltas (b - a) between two reports");
    compare->add_option("a", report_a, "Baseline report.json")->required();
    compare->add_option("b", report_b, "Other report.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << '\n';
        return kConfigError;
    }

    try {
        if (run->parsed()) {
            return run_command(run_opts, out, err);
        }
        if (replay->parsed()) {
            if (trace_path.empty()) {
                err << "replay needs a trace path\n";
                return kConfigError;
            }
            return replay_command(trace_path, out);
        }
        return compare_command(report_a, report_b, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
}

}  // namespace lw2g::cli
