// SPDX-License-Identifier: MIT
// Key-rate sweeps for BB84, MUB and DMCV protocols, written as CSV.
#include "qkdcone/sweep.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>

using namespace qkdcone;

namespace {

struct Flags {
  std::string protocol;
  std::string n = "1e6";
  std::string loss_db = "0";
  std::string distance_km = "15";
  std::string v;
  double f = -1;
  long d = 5, m = 6;
  double amplitude = 0.8;
  long cutoff = 10;
  double delta_mod = 4.0, delta_s = 1.5;
  std::string pk = "auto";
  std::string alpha = "auto";
  std::string alpha_range = "1e-7:1e-1:12";
  std::string cone = "fast";
  bool nested = false;
  double eps_pa = 9e-11, eps_ec = 1e-11, eps_pe = 9e-11;
  std::string out;
  unsigned jobs = 1;
  bool verbose = false;
  bool timing = false;
};

// JSON config values become leading command-line tokens, so explicit flags given later win.
std::vector<std::string> config_tokens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config file " + path);
  const auto doc = nlohmann::json::parse(in);
  if (!doc.is_object()) throw std::invalid_argument("config file must hold a JSON object");
  std::vector<std::string> out;
  for (const auto& [key, value] : doc.items()) {
    if (key == "protocol") continue;
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
      continue;
    }
    out.push_back(flag);
    if (value.is_string()) {
      out.push_back(value.get<std::string>());
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& item : value) joined += (joined.empty() ? "" : ",") + (item.is_string() ? item.get<std::string>() : item.dump());
      out.push_back(joined);
    } else {
      out.push_back(value.dump());
    }
  }
  if (doc.contains("protocol")) out.insert(out.begin(), doc["protocol"].get<std::string>());
  return out;
}

SweepConfig<double> to_config(const Flags& fl) {
  SweepConfig<double> cfg;
  if (fl.protocol == "bb84") cfg.protocol = Protocol::BB84;
  else if (fl.protocol == "mub") cfg.protocol = Protocol::MUB;
  else if (fl.protocol == "dmcv") cfg.protocol = Protocol::DMCV;
  else throw std::invalid_argument("unknown protocol '" + fl.protocol + "'");

  cfg.n_values = parse_grid(fl.n);
  switch (cfg.protocol) {
    case Protocol::BB84: {
      cfg.sweep_values = parse_grid(fl.loss_db);
      const auto v = parse_grid(fl.v.empty() ? "0.97" : fl.v);
      if (v.size() != 1) throw std::invalid_argument("bb84 takes a single --v");
      cfg.visibility = v.front();
      cfg.ec_efficiency = fl.f > 0 ? fl.f : 1.16;
      break;
    }
    case Protocol::MUB:
      cfg.sweep_values = parse_grid(fl.v.empty() ? "0.9" : fl.v);
      cfg.mub_dim = fl.d;
      cfg.mub_bases = fl.m;
      cfg.ec_efficiency = fl.f > 0 ? fl.f : 1.16;
      break;
    case Protocol::DMCV:
      cfg.sweep_values = parse_grid(fl.distance_km);
      cfg.dmcv.amplitude = fl.amplitude;
      cfg.dmcv.cutoff = fl.cutoff;
      cfg.dmcv.delta = fl.delta_mod;
      cfg.dmcv.delta_s = fl.delta_s;
      cfg.ec_efficiency = fl.f > 0 ? fl.f : 1.0;
      break;
  }

  if (fl.pk != "auto") {
    const auto pk = parse_grid(fl.pk);
    if (pk.size() == 1) cfg.fixed_pk = pk.front();
    else cfg.pk_grid = pk;
  }
  // alpha grid: lo:hi:points of alpha - 1, log spaced
  {
    const auto first = fl.alpha_range.find(':'), second = fl.alpha_range.rfind(':');
    if (first == std::string::npos || first == second) throw std::invalid_argument("--alpha-range is lo:hi:points");
    const double lo = std::stod(fl.alpha_range.substr(0, first));
    const double hi = std::stod(fl.alpha_range.substr(first + 1, second - first - 1));
    const int points = std::stoi(fl.alpha_range.substr(second + 1));
    cfg.alpha_grid = log_spaced_alpha_grid<double>(lo, hi, points);
  }
  if (fl.alpha == "sweep") {
    cfg.alpha_sweep = true;
  } else if (fl.alpha != "auto") {
    const auto a = parse_grid(fl.alpha);
    if (a.size() != 1) throw std::invalid_argument("--alpha takes auto, sweep or a single value");
    cfg.fixed_alpha = a.front();
  }

  if (fl.cone == "fast") cfg.cone = ConeVariant::Fast;
  else if (fl.cone == "true") cfg.cone = ConeVariant::True;
  else throw std::invalid_argument("--cone must be fast or true");
  cfg.nested = fl.nested;
  cfg.security.eps_pa = fl.eps_pa;
  cfg.security.eps_ec = fl.eps_ec;
  cfg.security.eps_pe_bar = fl.eps_pe;
  cfg.jobs = std::max(1u, fl.jobs);
  cfg.verbose = fl.verbose;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite-size key rates from sandwiched Renyi entropies via conic optimization", "qkdrate"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  Flags fl;
  std::string config_path;
  app.add_option("protocol", fl.protocol, "bb84 | mub | dmcv")->required();
  app.add_option("--config", config_path, "JSON file whose keys mirror the long flags");
  app.add_option("--n", fl.n, "number of rounds: list or start:step:stop");
  app.add_option("--loss-db", fl.loss_db, "bb84 total loss grid in dB");
  app.add_option("--distance-km", fl.distance_km, "dmcv fibre length grid in km");
  app.add_option("--v", fl.v, "visibility (bb84: single value, mub: sweep grid)");
  app.add_option("--f", fl.f, "error-correction efficiency (default 1.16, dmcv 1.0)");
  app.add_option("--d", fl.d, "mub dimension");
  app.add_option("--m", fl.m, "mub number of bases");
  app.add_option("--amplitude", fl.amplitude, "dmcv coherent amplitude");
  app.add_option("--cutoff", fl.cutoff, "dmcv Fock cutoff");
  app.add_option("--delta-mod", fl.delta_mod, "dmcv outer test radius");
  app.add_option("--delta-s", fl.delta_s, "dmcv inner test radius");
  app.add_option("--pk", fl.pk, "key-round probability: auto, a value, or a grid");
  app.add_option("--alpha", fl.alpha, "Renyi parameter: auto, sweep, or a value");
  app.add_option("--alpha-range", fl.alpha_range, "alpha - 1 grid as lo:hi:points, log spaced");
  app.add_option("--cone", fl.cone, "fast | true");
  app.add_flag("--nested", fl.nested, "true cone: outer search over q(bot)");
  app.add_option("--eps-pa", fl.eps_pa, "privacy-amplification failure probability");
  app.add_option("--eps-ec", fl.eps_ec, "error-correction failure probability");
  app.add_option("--eps-pe", fl.eps_pe, "parameter-estimation failure probability");
  app.add_option("--out", fl.out, "CSV path (default: standard output)");
  app.add_option("--jobs", fl.jobs, "worker threads");
  app.add_flag("--verbose", fl.verbose, "progress and solver logs on standard error");
  app.add_flag("--timing", fl.timing, "record wall time (otherwise time_s is 0)");

  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) config_path = argv[i + 1];
    else if (a.rfind("--config=", 0) == 0) config_path = a.substr(9);
  }
  try {
    if (!config_path.empty()) {
      auto tokens = config_tokens(config_path);
      // a protocol given first on the command line replaces the one from the file
      const bool cli_protocol = argc > 1 && argv[1][0] != '-';
      if (cli_protocol && !tokens.empty() && tokens.front().rfind("--", 0) != 0) tokens.erase(tokens.begin());
      args = std::move(tokens);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 1;
  }
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector

  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  SweepConfig<double> cfg;
  try {
    cfg = to_config(fl);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 1;
  }

  std::ofstream file;
  if (!fl.out.empty()) {
    file.open(fl.out);
    if (!file) {
      std::cerr << "error: cannot write " << fl.out << "\n";
      return 1;
    }
  }
  std::ostream& os = fl.out.empty() ? std::cout : file;
  std::vector<SweepRow<double>> rows;
  try {
    rows = run_sweep<double>(cfg, &std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  write_csv(os, rows, fl.timing);
  os.flush();
  if (!os) {
    std::cerr << "error: writing the CSV failed\n";
    return 1;
  }
  return sweep_exit_code(rows);
}
