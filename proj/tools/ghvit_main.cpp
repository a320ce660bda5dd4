#include <cstdint>
#include <string>

#include "CLI11.hpp"
#include "ghvit/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical vision transformer with graph-convolution positional embeddings"};
    app.require_subcommand(1);

    ghvit::CliOptions opt;
    std::string variant, dataset, data_dir, out, checkpoint;
    std::uint64_t epochs = 0, seed = 0, gradcheck_seed = 20260822;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", opt.config_path, "key=value config file");
        cmd->add_option("--variant", variant, "vit4|vit16|hvit|gcn_hvit_1|gcn_hvit_2");
        cmd->add_option("--dataset", dataset, "mnist|fashion_mnist|quickdraw");
        cmd->add_option("--data-dir", data_dir, "dataset root (default $GHVIT_DATA_DIR or ./data)");
        cmd->add_option("--out", out, "output directory");
        cmd->add_option("--checkpoint", checkpoint, "checkpoint path");
        cmd->add_option("--epochs", epochs, "training epochs");
        cmd->add_option("--seed", seed, "run seed");
    };
    auto collect_common = [&](CLI::App* cmd) {
        if (cmd->count("--variant")) opt.variant = variant;
        if (cmd->count("--dataset")) opt.dataset = dataset;
        if (cmd->count("--data-dir")) opt.data_dir = data_dir;
        if (cmd->count("--out")) opt.out = out;
        if (cmd->count("--checkpoint")) opt.checkpoint = checkpoint;
        if (cmd->count("--epochs")) opt.epochs = epochs;
        if (cmd->count("--seed")) opt.seed = seed;
    };

    CLI::App* train = app.add_subcommand("train", "train a model and write checkpoint + metrics");
    add_common(train);

    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on a dataset split");
    add_common(eval);
    eval->add_option("--split", opt.split, "train|test (default test)");

    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference verification of all gradients");
    gradcheck->add_option("--seed", gradcheck_seed, "random seed for check instances");

    CLI::App* metrics =
        app.add_subcommand("metrics-export", "convert a metrics file to CSV with header");
    metrics->add_option("metrics_file", opt.metrics_path, "metrics file from a training run")
        ->required();
    metrics->add_option("--out", out, "output CSV path");

    CLI11_PARSE(app, argc, argv);

    if (train->parsed()) {
        collect_common(train);
        return ghvit::cmd_train(opt);
    }
    if (eval->parsed()) {
        collect_common(eval);
        return ghvit::cmd_eval(opt);
    }
    if (gradcheck->parsed()) return ghvit::cmd_gradcheck(gradcheck_seed);
    if (metrics->parsed()) {
        if (metrics->count("--out")) opt.out = out;
        return ghvit::cmd_metrics_export(opt);
    }
    return 1;
}
