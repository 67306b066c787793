// nkrr: command-line driver for the experiments.
//
//   nkrr <command> [--config file.json] [--seed N] [--out path] [--set key=value ...]
//
// Exit codes: 0 success, 2 configuration/argument/data error, 3 numerical failure.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nkrr/harness/config.hpp"
#include "nkrr/harness/experiments.hpp"
#include "nkrr/harness/real_data.hpp"

using namespace nkrr;
using namespace nkrr::harness;

namespace {

struct CommonOptions {
  std::string config;
  std::string out;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<long long> n, trials;
  std::optional<double> sigma2, lambda;
  std::optional<std::string> data, target;
  bool print_config = false;
};

void add_common(CLI::App* cmd, CommonOptions& o, Experiment e) {
  cmd->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--out", o.out, "output CSV (default: stdout)");
  cmd->add_option("--set", o.sets, "override a config key, e.g. --set mu.rate=4");
  cmd->add_flag("--print-config", o.print_config, "print the effective config and exit");
  const json defaults = default_config(e);
  if (defaults.contains("n")) cmd->add_option("--n", o.n, "problem size");
  if (defaults.contains("trials")) cmd->add_option("--trials", o.trials, "Monte-Carlo trials");
  if (defaults.contains("sigma2")) cmd->add_option("--sigma2", o.sigma2, "noise variance");
  if (defaults.contains("lambda")) cmd->add_option("--lambda", o.lambda, "regularization parameter");
  if (defaults.contains("data")) {
    cmd->add_option("--data", o.data, "dataset CSV");
    cmd->add_option("--target", o.target, "target column (default: last)");
  }
}

json overrides_from(const CommonOptions& o) {
  json j = json::object();
  for (const auto& s : o.sets) set_override(j, s);
  if (o.seed) j["seed"] = *o.seed;
  if (!o.out.empty()) j["output"] = o.out;
  if (o.n) j["n"] = *o.n;
  if (o.trials) j["trials"] = *o.trials;
  if (o.sigma2) j["sigma2"] = *o.sigma2;
  if (o.lambda) j["lambda"] = *o.lambda;
  if (o.data) j["data"] = *o.data;
  if (o.target) j["target"] = *o.target;
  return j;
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  f << text;
  if (!f) throw ConfigError("write failed for '" + path + "'");
}

std::string render(const csv::Table& t) {
  std::ostringstream os;
  csv::write(os, t);
  return os.str();
}

std::string run(Experiment e, const json& cfg) {
  switch (e) {
    case Experiment::fig1: return render(run_fig1(cfg).table);
    case Experiment::rates: return render(run_rate_check(cfg).table);
    case Experiment::rank_ratio: return render(run_rank_ratio(cfg).table);
    case Experiment::verify_theorem: return render(run_verify_theorem(cfg).table);
    case Experiment::verify_lemma: return render(run_verify_lemma(cfg).table);
    case Experiment::cv: {
      auto r = run_cv(cfg);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
      return render(r.table);
    }
    case Experiment::fit: {
      auto r = run_fit(cfg);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
      return r.text;
    }
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nystrom kernel ridge regression experiments"};
  app.require_subcommand(1);
  const std::vector<std::pair<Experiment, const char*>> commands = {
      {Experiment::fig1, "relative kernel and prediction errors versus rank"},
      {Experiment::rates, "optimal lambda, error and degrees of freedom versus n, with fitted exponents"},
      {Experiment::rank_ratio, "sufficient rank over degrees of freedom across a lambda grid"},
      {Experiment::verify_theorem, "Monte-Carlo check of the sufficient-rank bound"},
      {Experiment::verify_lemma, "Monte-Carlo check of the subsampled covariance tail bound"},
      {Experiment::fit, "fit kernel ridge regression on a CSV dataset"},
      {Experiment::cv, "cross-validate lambda on a CSV dataset"},
  };
  std::vector<CommonOptions> opts(commands.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    subs.push_back(app.add_subcommand(command_name(commands[i].first), commands[i].second));
    add_common(subs.back(), opts[i], commands[i].first);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    const Experiment e = commands[i].first;
    try {
      const json file = opts[i].config.empty() ? json() : read_config_file(opts[i].config);
      const json cfg = merge_config(e, file, overrides_from(opts[i]));
      if (opts[i].print_config) {
        std::cout << cfg.dump(2) << '\n';
        return 0;
      }
      emit(run(e, cfg), cfg.at("output").get<std::string>());
      return 0;
    } catch (const DataError& err) {
      std::cerr << "data error: " << err.what() << '\n';
      return 2;
    } catch (const ConfigError& err) {
      std::cerr << "config error: " << err.what() << '\n';
      return 2;
    } catch (const NumericalError& err) {
      std::cerr << "numerical failure: " << err.what() << '\n';
      return 3;
    } catch (const json::exception& err) {
      std::cerr << "config error: " << err.what() << '\n';
      return 2;
    }
  }
  return 2;
}
