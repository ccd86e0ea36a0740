#include <fstream>
#include <iostream>
#include <string>
#include <utility>

#include "CLI11.hpp"
#include "freesde/cli.hpp"
#include "freesde/error.hpp"

int main(int argc, char** argv) {
  using namespace freesde;
  CLI::App app{"Free stochastic calculus experiments"};
  app.require_subcommand(1);

  std::string config_path, out;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  bool negative_control = false;

  const std::pair<const char*, const char*> commands[] = {
      {"moments", "mixed moments along a generator flow"},
      {"reverse", "checks on the time-reversed matrix diffusion"},
      {"fisher", "free Fisher information and its de Bruijn integral along the heat flow"},
      {"liberation", "liberation correction terms, symbolic and Monte Carlo"},
  };
  for (const auto& [name, description] : commands) {
    auto* sub = app.add_subcommand(name, description);
    sub->add_option("--config", config_path, "JSON run configuration");
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--out", out, "output directory (default: primary CSV on stdout)");
    sub->add_option("--threads", threads, "cap on parallel trials (overrides the config)");
    if (std::string(name) == "reverse") {
      sub->add_flag("--negative-control", negative_control, "take the verdict from the +ξ̄ construction");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitPass : kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  RunConfig config;
  try {
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw ConfigError("cannot read " + config_path);
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid JSON: ") + e.what());
      }
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    if (!j.contains("command")) j["command"] = command;
    if (j["command"] != command) throw ConfigError("config command does not match the subcommand");
    config = parse_run_config(j);
    auto* sub = app.get_subcommand(command);
    if (sub->count("--seed")) config.seed = seed;
    if (sub->count("--threads")) {
      if (threads == 0) throw ConfigError("--threads must be at least 1");
      config.threads = threads;
    }
    if (sub->count("--out")) config.out = out;
    if (negative_control) config.params["negative_control"] = true;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  return execute(config, std::cout, std::cerr);
}
