#pragma once

// Subcommand implementations behind the tkfnet executable. Each command takes
// its options as plain structs and reports through the given streams, so the
// test binaries can drive them without spawning processes.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tkfnet/data.hpp"
#include "tkfnet/errors.hpp"
#include "tkfnet/model.hpp"
#include "tkfnet/serialize.hpp"
#include "tkfnet/train.hpp"
#include "tkfnet/verify.hpp"

namespace tkfnet::cli {

enum ExitCode : int { kOk = 0, kVerifyFailed = 1, kConfigError = 2, kIoError = 3, kShapeError = 4 };

inline constexpr const char* kManifestFile = "manifest.txt";
inline constexpr const char* kWeightsFile = "weights.tkfw";
inline constexpr const char* kMetricsFile = "metrics.tsv";
inline constexpr const char* kTimingFile = "timing.tsv";
inline constexpr const char* kFinalMetricsFile = "final_metrics.txt";
inline constexpr const char* kConfusionFile = "confusion.csv";
inline constexpr const char* kAttentionFile = "attention.csv";

struct RunConfig {
    std::string model = "base";
    std::size_t classes = 7;
    std::size_t epochs = 60;
    std::size_t batch_size = 128;
    double lr_init = 0.1;
    double lr_end = 0.01;
    double power = 0.5;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    std::size_t input_size = 224;
    bool normalize = true;
    std::string data_root;
    std::string synth;  // CxN[@S]
    std::string test_data;
    std::string test_synth;
    double holdout = 0.0;
    std::string out_dir = "run";
};

// ---------------------------------------------------------------------------
// key=value config files

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

/// Flat key=value lines; blank lines and lines starting with '#' are skipped.
inline KeyValues parse_key_values(const std::string& text, const std::string& origin = "config") {
    KeyValues out;
    std::istringstream in(text);
    std::string line;
    for (std::size_t number = 1; std::getline(in, line); ++number) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(number) + ": expected key=value, got '" + t + "'");
        }
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(number) + ": empty key");
        out.emplace_back(key, trim(t.substr(eq + 1)));
    }
    return out;
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    return parse_key_values(std::string(bytes.begin(), bytes.end()), path.string());
}

namespace detail {

inline std::uint64_t to_unsigned(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        if (!value.empty() && value[0] == '-') throw std::invalid_argument(value);
        v = std::stoull(value, &used);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
    }
    if (used != value.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
    return v;
}

inline double to_real(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &used);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + value + "'");
    }
    if (used != value.size()) throw ConfigError(key + ": expected a number, got '" + value + "'");
    return v;
}

inline bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw ConfigError(key + ": expected true/false, got '" + value + "'");
}

inline std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace detail

/// Applies one setting; unknown keys are rejected.
inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "model") cfg.model = value;
    else if (key == "classes") cfg.classes = to_unsigned(key, value);
    else if (key == "epochs") cfg.epochs = to_unsigned(key, value);
    else if (key == "batch") cfg.batch_size = to_unsigned(key, value);
    else if (key == "lr") cfg.lr_init = to_real(key, value);
    else if (key == "lr_end") cfg.lr_end = to_real(key, value);
    else if (key == "power") cfg.power = to_real(key, value);
    else if (key == "momentum") cfg.momentum = to_real(key, value);
    else if (key == "seed") cfg.seed = to_unsigned(key, value);
    else if (key == "input_size") cfg.input_size = to_unsigned(key, value);
    else if (key == "normalize") cfg.normalize = to_bool(key, value);
    else if (key == "data") cfg.data_root = value;
    else if (key == "synth") cfg.synth = value;
    else if (key == "test_data") cfg.test_data = value;
    else if (key == "test_synth") cfg.test_synth = value;
    else if (key == "holdout") cfg.holdout = to_real(key, value);
    else if (key == "out") cfg.out_dir = value;
    else throw ConfigError("unknown setting '" + key + "'");
}

// Keys a manifest carries besides the run settings.
inline bool is_manifest_only_key(const std::string& key) {
    return key.rfind("class.", 0) == 0 || key == "parameters" || key == "command";
}

inline void apply_settings(RunConfig& cfg, const KeyValues& kv) {
    for (const auto& [k, v] : kv) {
        if (!is_manifest_only_key(k)) apply_setting(cfg, k, v);
    }
}

inline KeyValues to_key_values(const RunConfig& cfg) {
    using detail::format_real;
    return {{"model", cfg.model},
            {"classes", std::to_string(cfg.classes)},
            {"epochs", std::to_string(cfg.epochs)},
            {"batch", std::to_string(cfg.batch_size)},
            {"lr", format_real(cfg.lr_init)},
            {"lr_end", format_real(cfg.lr_end)},
            {"power", format_real(cfg.power)},
            {"momentum", format_real(cfg.momentum)},
            {"seed", std::to_string(cfg.seed)},
            {"input_size", std::to_string(cfg.input_size)},
            {"normalize", cfg.normalize ? "true" : "false"},
            {"data", cfg.data_root},
            {"synth", cfg.synth},
            {"test_data", cfg.test_data},
            {"test_synth", cfg.test_synth},
            {"holdout", format_real(cfg.holdout)},
            {"out", cfg.out_dir}};
}

inline std::string format_key_values(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

/// Training settings that must hold before any data is touched.
inline void validate(const RunConfig& cfg) {
    const ModelConfig model = ModelConfig::named(cfg.model, cfg.classes);
    if (cfg.classes == 0) throw ConfigError("classes must be >= 1");
    if (cfg.batch_size == 0) throw ConfigError("batch must be >= 1");
    if (!(cfg.lr_init > 0.0)) throw ConfigError("lr must be > 0");
    if (!(cfg.lr_end >= 0.0) || cfg.lr_end > cfg.lr_init) throw ConfigError("lr_end must be in [0, lr]");
    if (!(cfg.power > 0.0)) throw ConfigError("power must be > 0");
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (!(cfg.holdout >= 0.0 && cfg.holdout < 1.0)) throw ConfigError("holdout must be in [0, 1)");
    const std::size_t stride = model.backbone.total_stride();
    if (cfg.input_size == 0 || cfg.input_size % stride != 0) {
        throw ConfigError("input_size " + std::to_string(cfg.input_size) + " must be a non-zero multiple of " +
                          std::to_string(stride) + " for model " + cfg.model);
    }
    if (cfg.data_root.empty() == cfg.synth.empty()) throw ConfigError("exactly one of data or synth must be given");
    const int test_sources = !cfg.test_data.empty() + !cfg.test_synth.empty() + (cfg.holdout > 0.0);
    if (test_sources > 1) throw ConfigError("at most one of test_data, test_synth, holdout may be given");
}

// ---------------------------------------------------------------------------
// Datasets

/// "CxN" or "CxN@S": C classes, N samples per class, S x S pixels (default 32).
inline data::SynthSpec parse_synth_spec(const std::string& text, std::uint64_t seed) {
    data::SynthSpec spec;
    spec.seed = seed;
    const auto x = text.find('x');
    const auto at = text.find('@');
    if (x == std::string::npos || (at != std::string::npos && at < x)) {
        throw ConfigError("synth spec '" + text + "' must look like CxN or CxN@S");
    }
    spec.classes = detail::to_unsigned("synth classes", text.substr(0, x));
    spec.per_class = detail::to_unsigned("synth per-class", text.substr(x + 1, at == std::string::npos ? std::string::npos : at - x - 1));
    if (at != std::string::npos) spec.height = spec.width = detail::to_unsigned("synth size", text.substr(at + 1));
    if (spec.classes == 0 || spec.classes > data::kSynthFamilies) {
        throw ConfigError("synth classes must be in [1, " + std::to_string(data::kSynthFamilies) + "]");
    }
    if (spec.per_class == 0) throw ConfigError("synth per-class count must be >= 1");
    if (spec.height == 0) throw ConfigError("synth size must be >= 1");
    return spec;
}

struct RunData {
    data::Dataset train;
    data::Dataset eval;
    std::string eval_split;  // test, holdout or train
};

inline data::Dataset load_folder(const std::string& root, std::ostream& log) {
    auto load = data::load_image_folder(root);
    if (load.skipped > 0) log << "warning: skipped " << load.skipped << " unsupported files under " << root << "\n";
    return std::move(load.dataset);
}

/// Resolves and preprocesses the training and evaluation sets of a run.
inline RunData resolve_data(const RunConfig& cfg, std::ostream& log) {
    RunData d;
    d.train = cfg.synth.empty() ? load_folder(cfg.data_root, log) : data::synth_dataset(parse_synth_spec(cfg.synth, cfg.seed));
    if (d.train.empty()) throw FormatError("training set is empty");
    if (d.train.classes() != cfg.classes) {
        throw ShapeError("training set has " + std::to_string(d.train.classes()) + " classes, config expects " +
                         std::to_string(cfg.classes));
    }
    if (!cfg.test_data.empty()) {
        d.eval = load_folder(cfg.test_data, log);
        d.eval_split = "test";
    } else if (!cfg.test_synth.empty()) {
        d.eval = data::synth_dataset(parse_synth_spec(cfg.test_synth, cfg.seed + 1));
        d.eval_split = "test";
    } else if (cfg.holdout > 0.0) {
        std::tie(d.train, d.eval) = data::split_holdout(d.train, cfg.holdout);
        d.eval_split = "holdout";
        if (d.train.empty()) throw ConfigError("holdout leaves no training samples");
    } else {
        d.eval = d.train;
        d.eval_split = "train";
    }
    if (d.eval.empty()) throw FormatError("evaluation set is empty");
    if (d.eval.class_names != d.train.class_names) {
        throw ShapeError("evaluation classes (" + std::to_string(d.eval.classes()) + ") differ from training classes (" +
                         std::to_string(d.train.classes()) + ")");
    }
    d.train = data::prepare(d.train, cfg.input_size, cfg.input_size, cfg.normalize);
    d.eval = data::prepare(d.eval, cfg.input_size, cfg.input_size, cfg.normalize);
    return d;
}

// ---------------------------------------------------------------------------
// Output files

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    io::write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline void make_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

inline std::string manifest_text(const std::string& command, const RunConfig& cfg, const std::vector<std::string>& class_names,
                                 std::size_t parameters) {
    KeyValues kv{{"command", command}};
    for (auto& entry : to_key_values(cfg)) kv.push_back(std::move(entry));
    if (parameters > 0) kv.emplace_back("parameters", std::to_string(parameters));
    for (std::size_t k = 0; k < class_names.size(); ++k) kv.emplace_back("class." + std::to_string(k), class_names[k]);
    return "# tkfnet run manifest; usable as --config to repeat the run\n" + format_key_values(kv);
}

inline std::string metrics_text(const train::Metrics& m, const std::vector<std::string>& names, const std::string& split,
                                 std::size_t samples) {
    std::string out = "split=" + split + "\nsamples=" + std::to_string(samples) + "\naccuracy=" +
                      detail::format_real(m.accuracy) + "\n";
    for (std::size_t k = 0; k < names.size(); ++k) out += "recall." + names[k] + "=" + detail::format_real(m.per_class_recall[k]) + "\n";
    return out;
}

/// Class names recorded in a manifest, in index order.
inline std::vector<std::string> manifest_class_names(const KeyValues& kv) {
    std::map<std::size_t, std::string> by_index;
    for (const auto& [k, v] : kv) {
        if (k.rfind("class.", 0) == 0) by_index[detail::to_unsigned(k, k.substr(6))] = v;
    }
    std::vector<std::string> names;
    for (const auto& [i, v] : by_index) {
        if (i != names.size()) throw FormatError("manifest class indices are not contiguous at class." + std::to_string(i));
        names.push_back(v);
    }
    return names;
}

// ---------------------------------------------------------------------------
// Loading trained models

struct LoadedModel {
    TKFNet<float> net;
    std::size_t input_size = 224;
    bool normalize = true;
    std::vector<std::string> class_names;
};

/// Architecture from a weights file: the stem width distinguishes base from
/// small unless `model_name` is given; the head width gives the class count.
inline ModelConfig infer_model_config(const std::vector<io::Record>& records, const std::string& model_name) {
    const auto find = [&](const std::string& name) -> const io::Record& {
        for (const auto& r : records)
            if (r.name == name) return r;
        throw ShapeError("weights lack parameter " + name);
    };
    const std::size_t q = find("dcif.head.weight").tensor.shape().c;
    if (!model_name.empty()) return ModelConfig::named(model_name, q);
    const std::size_t stem = find("backbone.stem.weight").tensor.shape().c;
    for (const ModelConfig& cfg : {ModelConfig::base(q), ModelConfig::small(q)}) {
        if (cfg.backbone.stem_channels == stem) return cfg;
    }
    throw ConfigError("cannot tell the model from stem width " + std::to_string(stem) + "; pass --model");
}

/// Loads weights plus the manifest written next to them (if any). An
/// explicit input size wins over the manifest, which wins over 224.
inline LoadedModel load_model(const std::filesystem::path& weights, const std::string& model_name,
                              std::optional<std::size_t> input_size) {
    const auto records = io::decode_records(io::read_file(weights));
    const ModelConfig cfg = infer_model_config(records, model_name);
    LoadedModel m{TKFNet<float>(cfg), 224, true, {}};
    io::assign_weights(m.net, records);

    const auto manifest = weights.parent_path() / kManifestFile;
    if (std::filesystem::exists(manifest)) {
        const KeyValues kv = read_key_values(manifest);
        RunConfig recorded;
        apply_settings(recorded, kv);
        m.input_size = recorded.input_size;
        m.normalize = recorded.normalize;
        m.class_names = manifest_class_names(kv);
    }
    if (input_size) m.input_size = *input_size;
    if (m.class_names.empty()) {
        for (std::size_t k = 0; k < cfg.classes; ++k) m.class_names.push_back("class_" + std::to_string(k));
    }
    if (m.class_names.size() != cfg.classes) {
        throw ShapeError("manifest lists " + std::to_string(m.class_names.size()) + " classes, model head has " +
                         std::to_string(cfg.classes));
    }
    const std::size_t stride = cfg.backbone.total_stride();
    if (m.input_size == 0 || m.input_size % stride != 0) {
        throw ConfigError("input size " + std::to_string(m.input_size) + " must be a non-zero multiple of " + std::to_string(stride));
    }
    return m;
}

// ---------------------------------------------------------------------------
// Error reporting

inline std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

/// Runs a command body, mapping exceptions to exit codes and printing one
/// "error[kind]: message" line.
inline int guarded(std::ostream& err, const std::function<int()>& body) {
    try {
        return body();
    } catch (const ShapeError& e) {
        err << "error[shape]: " << one_line(e.what()) << "\n";
        return kShapeError;
    } catch (const ConfigError& e) {
        err << "error[config]: " << one_line(e.what()) << "\n";
        return kConfigError;
    } catch (const IoError& e) {
        err << "error[io]: " << one_line(e.what()) << "\n";
        return kIoError;
    } catch (const FormatError& e) {
        err << "error[format]: " << one_line(e.what()) << "\n";
        return kIoError;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error[io]: " << one_line(e.what()) << "\n";
        return kIoError;
    } catch (const std::invalid_argument& e) {
        err << "error[config]: " << one_line(e.what()) << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        err << "error[runtime]: " << one_line(e.what()) << "\n";
        return kVerifyFailed;
    }
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        validate(cfg);
        const std::filesystem::path dir = cfg.out_dir;
        RunData d = resolve_data(cfg, err);
        make_dir(dir);

        auto model = TKFNet<float>::build(ModelConfig::named(cfg.model, cfg.classes), cfg.seed);
        write_text(dir / kManifestFile, manifest_text("train", cfg, d.train.class_names, model.parameter_count()));

        std::string metrics = "epoch\tloss\tlr\n", timing = "epoch\tseconds\n";
        train::FitOptions fit{cfg.epochs, cfg.batch_size, cfg.lr_init, cfg.lr_end, cfg.power, cfg.momentum, cfg.seed};
        train::fit(model, d.train, fit, [&](const train::EpochStats& s) {
            metrics += std::to_string(s.epoch) + "\t" + detail::format_real(s.mean_loss) + "\t" + detail::format_real(s.lr) + "\n";
            timing += std::to_string(s.epoch) + "\t" + detail::format_real(s.seconds) + "\n";
            out << "epoch " << s.epoch + 1 << "/" << cfg.epochs << " loss " << detail::format_real(s.mean_loss) << " lr "
                << detail::format_real(s.lr) << "\n";
        });
        write_text(dir / kMetricsFile, metrics);
        write_text(dir / kTimingFile, timing);
        io::write_file(dir / kWeightsFile, io::encode_weights(model));

        const train::Metrics m = train::evaluate(model, d.eval);
        write_text(dir / kFinalMetricsFile, metrics_text(m, d.eval.class_names, d.eval_split, d.eval.size()));
        write_text(dir / kConfusionFile, m.confusion.to_csv(d.eval.class_names));
        out << "accuracy=" << detail::format_real(m.accuracy) << " split=" << d.eval_split << "\n";
        return kOk;
    });
}

struct EvalOptions {
    std::string weights;
    std::string data_root;
    std::string model;  // empty: detect
    std::optional<std::size_t> input_size;
    std::string out_dir = "eval";
};

inline int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        LoadedModel m = load_model(o.weights, o.model, o.input_size);
        data::Dataset ds = load_folder(o.data_root, err);
        const std::size_t q = m.net.config().classes;
        if (ds.classes() != q) {
            throw ShapeError("dataset has " + std::to_string(ds.classes()) + " classes, model head has " + std::to_string(q));
        }
        if (ds.empty()) throw FormatError("dataset " + o.data_root + " has no images");
        ds = data::prepare(ds, m.input_size, m.input_size, m.normalize);
        const train::Metrics metrics = train::evaluate(m.net, ds);

        const std::filesystem::path dir = o.out_dir;
        make_dir(dir);
        RunConfig echo;
        echo.model = m.net.config().name;
        echo.classes = q;
        echo.input_size = m.input_size;
        echo.normalize = m.normalize;
        echo.data_root = o.data_root;
        echo.out_dir = o.out_dir;
        write_text(dir / kManifestFile, "# weights=" + o.weights + "\n" + manifest_text("eval", echo, ds.class_names, 0));
        write_text(dir / kFinalMetricsFile, metrics_text(metrics, ds.class_names, "eval", ds.size()));
        write_text(dir / kConfusionFile, metrics.confusion.to_csv(ds.class_names));
        out << "accuracy=" << detail::format_real(metrics.accuracy) << "\n";
        return kOk;
    });
}

struct InferOptions {
    std::string weights;
    std::string image;
    std::string model;
    std::optional<std::size_t> input_size;
    bool dump_attention = false;
    std::string out_dir = "infer";
};

/// Prints "predicted<TAB>name" followed by one "name<TAB>probability" line
/// per class.
inline int cmd_infer(const InferOptions& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        LoadedModel m = load_model(o.weights, o.model, o.input_size);
        const Tensor image = data::preprocess(data::read_image(o.image), m.input_size, m.input_size, m.normalize);
        Tape tape(false);
        const auto trace = m.net.trace(tape, image);
        const Tensor p = ops::softmax(trace.logits);
        const std::size_t best = train::argmax_rows(p)[0];

        out << "predicted\t" << m.class_names[best] << "\n";
        char buf[32];
        for (std::size_t k = 0; k < p.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%.9f", static_cast<double>(p[k]));
            out << m.class_names[k] << "\t" << buf << "\n";
        }
        if (o.dump_attention) {
            const std::filesystem::path dir = o.out_dir;
            make_dir(dir);
            const Tensor& eta = trace.attention.eta;
            std::string csv = "sample";
            for (std::size_t c = 0; c < eta.shape().c; ++c) csv += ",eta_" + std::to_string(c);
            csv += "\n" + o.image;
            for (std::size_t c = 0; c < eta.shape().c; ++c) {
                std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(eta[c]));
                csv += buf;
            }
            write_text(dir / kAttentionFile, csv + "\n");
            RunConfig echo;
            echo.model = m.net.config().name;
            echo.classes = m.net.config().classes;
            echo.input_size = m.input_size;
            echo.normalize = m.normalize;
            echo.out_dir = o.out_dir;
            write_text(dir / kManifestFile,
                       "# weights=" + o.weights + "\n# image=" + o.image + "\n" + manifest_text("infer", echo, m.class_names, 0));
        }
        return kOk;
    });
}

struct GradcheckOptions {
    std::string model = "small";
    std::uint64_t seed = 0;
    std::size_t op_seeds = 100;
    bool corrupt_backward = false;  // negative control: skews conv weight gradients
};

inline int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (o.model != "small") throw ConfigError("gradcheck supports only the small model, got '" + o.model + "'");
        testing::corrupt_conv_backward = o.corrupt_backward;
        std::vector<verify::ModuleResult> results;
        try {
            results = verify::run_suite(o.seed, o.op_seeds);
        } catch (...) {
            testing::corrupt_conv_backward = false;
            throw;
        }
        testing::corrupt_conv_backward = false;

        out << "module\tmax_rel_error\ttolerance\tcoordinates\tstatus\n";
        const verify::ModuleResult* worst = nullptr;
        for (const auto& r : results) {
            out << r.module << "\t" << detail::format_real(r.max_rel_error) << "\t" << detail::format_real(r.tolerance) << "\t"
                << r.coordinates << "\t" << (r.passed() ? "PASS" : "FAIL") << "\n";
            if (!r.passed() && (!worst || r.max_rel_error / r.tolerance > worst->max_rel_error / worst->tolerance)) worst = &r;
        }
        if (worst) {
            err << "error[verify]: " << worst->module << " exceeds tolerance " << detail::format_real(worst->tolerance)
                << "; worst " << one_line(worst->worst) << "\n";
            return kVerifyFailed;
        }
        return kOk;
    });
}

struct SynthOptions {
    std::string spec = "7x20@64";
    std::uint64_t seed = 0;
    std::string out_dir = "synth";
};

inline int cmd_synth(const SynthOptions& o, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const data::SynthSpec spec = parse_synth_spec(o.spec, o.seed);
        const data::Dataset ds = data::synth_dataset(spec);
        const std::filesystem::path dir = o.out_dir;
        make_dir(dir);
        data::write_image_folder(ds, dir);
        RunConfig echo;
        echo.classes = spec.classes;
        echo.seed = o.seed;
        echo.synth = o.spec;
        echo.input_size = spec.height;
        echo.out_dir = o.out_dir;
        write_text(dir / kManifestFile, manifest_text("synth", echo, ds.class_names, 0));
        out << "wrote " << ds.size() << " images in " << ds.classes() << " classes to " << dir.string() << "\n";
        return kOk;
    });
}

}  // namespace tkfnet::cli
