#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "alft/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise DeepLIFT attribution for a small extractive QA encoder"};
  app.require_subcommand(1);

  alft::cli::RunConfig run;
  std::string config, data, question;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "Model config JSON");
    cmd->add_option("--seed", seed, "Seed for every stochastic component");
  };

  auto* train = app.add_subcommand("train", "Train the toy model on SQuAD-style data");
  common(train);
  train->add_option("--data", data, "SQuAD-style JSON")->required();
  train->add_option("--out", run.out, "Weights file to write")->required();
  train->add_option("--epochs", run.epochs, "Gradient-descent epochs")->check(CLI::NonNegativeNumber);
  train->add_option("--lr", run.lr, "Learning rate")->check(CLI::NonNegativeNumber);

  auto* attribute = app.add_subcommand("attribute", "DeepLIFT heatmaps for one question or a data file");
  common(attribute);
  attribute->add_option("--weights", run.weights_path, "Weights file")->required();
  attribute->add_option("--data", data, "SQuAD-style JSON");
  attribute->add_option("--question", question, "Single question");
  attribute->add_option("--context", run.context, "Paragraph for --question");
  attribute->add_option("--out", run.out, "Output directory")->required();
  attribute->add_option("--steps", run.steps, "Also run integrated gradients with this many steps");

  auto* cluster = app.add_subcommand("cluster", "Cluster attribution trajectories");
  common(cluster);
  cluster->add_option("--weights", run.weights_path, "Weights file")->required();
  cluster->add_option("--data", data, "SQuAD-style JSON")->required();
  cluster->add_option("--k", run.k, "Number of clusters");
  cluster->add_option("--out", run.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  auto given = [](CLI::App* cmd, const char* name) {
    const auto* opt = cmd->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  for (auto* cmd : {train, attribute, cluster}) {
    if (!cmd->parsed()) continue;
    if (given(cmd, "--config")) run.config_path = config;
    if (given(cmd, "--seed")) run.seed = seed;
    if (given(cmd, "--data")) run.data_path = data;
    if (given(cmd, "--question")) run.question = question;
  }

  try {
    if (train->parsed()) return alft::cli::cmd_train(run, std::cout, std::cerr);
    if (attribute->parsed()) return alft::cli::cmd_attribute(run, std::cout, std::cerr);
    return alft::cli::cmd_cluster(run, std::cout, std::cerr);
  } catch (const alft::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return alft::exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
