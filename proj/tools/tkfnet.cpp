// tkfnet command-line front end: train, eval, infer, gradcheck, synth.

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tkfnet/tkfnet.hpp"

namespace {

using tkfnet::cli::RunConfig;

// Training flags are collected as strings and applied through the same
// key=value path as config files, so both report errors identically.
struct TrainFlags {
    std::string config;
    std::map<std::string, std::string> values;
};

void add_setting(CLI::App* app, TrainFlags& flags, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(flag, [&flags, key](const std::string& v) { flags.values[key] = v; }, help);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TKFNet facial expression recognition"};
    app.require_subcommand(1);

    TrainFlags tf;
    auto* train = app.add_subcommand("train", "train a model and evaluate it");
    train->add_option("--config", tf.config, "key=value config file; flags override it");
    add_setting(train, tf, "--model", "model", "base or small");
    add_setting(train, tf, "--classes", "classes", "number of classes");
    add_setting(train, tf, "--data", "data", "class-folder dataset root");
    add_setting(train, tf, "--synth", "synth", "synthetic training set CxN[@S]");
    add_setting(train, tf, "--test-data", "test_data", "class-folder test set");
    add_setting(train, tf, "--test-synth", "test_synth", "synthetic test set CxN[@S], seeded with seed+1");
    add_setting(train, tf, "--holdout", "holdout", "fraction of each class held out for evaluation");
    add_setting(train, tf, "--out", "out", "output directory");
    add_setting(train, tf, "--epochs", "epochs", "training epochs");
    add_setting(train, tf, "--batch", "batch", "batch size");
    add_setting(train, tf, "--lr", "lr", "initial learning rate");
    add_setting(train, tf, "--lr-end", "lr_end", "final learning rate");
    add_setting(train, tf, "--power", "power", "polynomial decay power");
    add_setting(train, tf, "--momentum", "momentum", "momentum coefficient");
    add_setting(train, tf, "--seed", "seed", "run seed");
    add_setting(train, tf, "--input-size", "input_size", "square input resolution");
    add_setting(train, tf, "--normalize", "normalize", "map pixels to [-1, 1] (true/false)");

    tkfnet::cli::EvalOptions eo;
    std::size_t eval_size = 0;
    auto* eval = app.add_subcommand("eval", "evaluate saved weights on a class-folder dataset");
    eval->add_option("--weights", eo.weights, "weights file")->required();
    eval->add_option("--data", eo.data_root, "dataset root")->required();
    eval->add_option("--model", eo.model, "base or small (default: detected)");
    eval->add_option("--input-size", eval_size, "square input resolution (default: manifest, else 224)");
    eval->add_option("--out", eo.out_dir, "output directory");

    tkfnet::cli::InferOptions io;
    std::size_t infer_size = 0;
    auto* infer = app.add_subcommand("infer", "classify one image");
    infer->add_option("--weights", io.weights, "weights file")->required();
    infer->add_option("image", io.image, "PPM or .rt32 image")->required();
    infer->add_option("--model", io.model, "base or small (default: detected)");
    infer->add_option("--input-size", infer_size, "square input resolution (default: manifest, else 224)");
    infer->add_flag("--dump-attention", io.dump_attention, "write the channel gate to attention.csv");
    infer->add_option("--out", io.out_dir, "output directory for --dump-attention");

    tkfnet::cli::GradcheckOptions go;
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every module");
    grad->add_option("--model", go.model, "model (small)");
    grad->add_option("--seed", go.seed, "seed");
    grad->add_option("--op-seeds", go.op_seeds, "random cases per op");
    grad->add_flag("--corrupt-backward", go.corrupt_backward, "skew conv weight gradients (negative control)");

    tkfnet::cli::SynthOptions so;
    auto* synth = app.add_subcommand("synth", "write a synthetic dataset as class folders");
    synth->add_option("--spec", so.spec, "CxN[@S]");
    synth->add_option("--seed", so.seed, "seed");
    synth->add_option("--out", so.out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error[config]: " << tkfnet::cli::one_line(e.what()) << "\n";
        return tkfnet::cli::kConfigError;
    }

    if (*train) {
        RunConfig cfg;
        const int rc = tkfnet::cli::guarded(std::cerr, [&] {
            if (!tf.config.empty()) tkfnet::cli::apply_settings(cfg, tkfnet::cli::read_key_values(tf.config));
            for (const auto& [k, v] : tf.values) tkfnet::cli::apply_setting(cfg, k, v);
            return 0;
        });
        if (rc != 0) return rc;
        return tkfnet::cli::cmd_train(cfg, std::cout, std::cerr);
    }
    if (*eval) {
        if (eval->count("--input-size") > 0) eo.input_size = eval_size;
        return tkfnet::cli::cmd_eval(eo, std::cout, std::cerr);
    }
    if (*infer) {
        if (infer->count("--input-size") > 0) io.input_size = infer_size;
        return tkfnet::cli::cmd_infer(io, std::cout, std::cerr);
    }
    if (*grad) return tkfnet::cli::cmd_gradcheck(go, std::cout, std::cerr);
    return tkfnet::cli::cmd_synth(so, std::cout, std::cerr);
}
