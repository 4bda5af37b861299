// SPDX-License-Identifier: MIT
#pragma once

#include "qkdcone/keyrate.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace qkdcone {

// Parses "a,b,start:step:stop,..." into values. Range items include stop when it lies on the grid.
inline std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream items(text);
  std::string item;
  auto number = [](const std::string& s) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("grid: cannot parse '" + s + "'");
    }
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument("grid: cannot parse '" + s + "'");
    return v;
  };
  while (std::getline(items, item, ',')) {
    if (item.empty()) continue;
    const auto first = item.find(':');
    if (first == std::string::npos) {
      out.push_back(number(item));
      continue;
    }
    const auto second = item.find(':', first + 1);
    if (second == std::string::npos || item.find(':', second + 1) != std::string::npos)
      throw std::invalid_argument("grid: ranges are start:step:stop, got '" + item + "'");
    const double start = number(item.substr(0, first));
    const double step = number(item.substr(first + 1, second - first - 1));
    const double stop = number(item.substr(second + 1));
    if (!(step > 0)) throw std::invalid_argument("grid: range step must be positive");
    for (long i = 0;; ++i) {
      const double v = start + double(i) * step;
      if (v > stop + 1e-9 * step) break;
      out.push_back(v);
    }
  }
  return out;
}

template <class T = double>
struct SweepConfig {
  Protocol protocol = Protocol::BB84;
  std::vector<T> n_values{T(1e6)};
  // loss in dB (bb84), visibility (mub) or distance in km (dmcv)
  std::vector<T> sweep_values;
  std::optional<T> fixed_alpha;
  bool alpha_sweep = false;  // one row per alpha grid value
  std::vector<T> alpha_grid = log_spaced_alpha_grid<T>();
  std::optional<T> fixed_pk;
  std::vector<T> pk_grid = default_pk_grid<T>();
  T visibility = T(0.97);  // bb84 only
  T ec_efficiency = T(1.16);
  Eigen::Index mub_dim = 5, mub_bases = 6;
  DmcvParams<T> dmcv;
  SecurityParams<T> security;
  ConeVariant cone = ConeVariant::Fast;
  bool nested = false;
  unsigned jobs = 1;
  bool verbose = false;

  void validate() const {
    if (n_values.empty()) throw std::invalid_argument("config: the n list is empty");
    if (sweep_values.empty()) throw std::invalid_argument("config: the sweep grid is empty");
    if (!fixed_alpha && alpha_grid.empty()) throw std::invalid_argument("config: the alpha grid is empty");
    if (!fixed_pk && pk_grid.empty()) throw std::invalid_argument("config: the p^K grid is empty");
    if (fixed_alpha && alpha_sweep) throw std::invalid_argument("config: alpha cannot be both fixed and swept");
    for (const T a : fixed_alpha ? std::vector<T>{*fixed_alpha} : alpha_grid)
      if (!(a > 1 && a < 2)) throw std::invalid_argument("config: alpha must lie in (1, 2)");
    for (const T p : fixed_pk ? std::vector<T>{*fixed_pk} : pk_grid)
      if (!(p > 0 && p < 1)) throw std::invalid_argument("config: p^K must lie in (0, 1)");
    if (!(ec_efficiency >= 1)) throw std::invalid_argument("config: error-correction efficiency must be >= 1");
    if (nested && cone != ConeVariant::True) throw std::invalid_argument("config: nested q(bot) search needs the true cone");
    for (const T n : n_values) {
      SecurityParams<T> s = security;
      s.n = n;
      s.validate();
    }
    for (const T v : sweep_values) {
      switch (protocol) {
        case Protocol::BB84:
          if (!(v >= 0)) throw std::invalid_argument("config: loss must be nonnegative");
          break;
        case Protocol::MUB:
          if (!(v >= 0 && v <= 1)) throw std::invalid_argument("config: visibility must lie in [0, 1]");
          break;
        case Protocol::DMCV:
          if (!(v >= 0)) throw std::invalid_argument("config: distance must be nonnegative");
          break;
      }
    }
    if (protocol == Protocol::BB84 && !(visibility >= 0 && visibility <= 1))
      throw std::invalid_argument("config: visibility must lie in [0, 1]");
  }

  // Instance builder at one sweep value, parametrized by p^K.
  [[nodiscard]] std::function<ProtocolInstance<T>(T)> builder(T sweep_value) const {
    switch (protocol) {
      case Protocol::BB84:
        return [v = visibility, sweep_value](T pk) { return build_bb84<T>(v, sweep_value, pk); };
      case Protocol::MUB:
        return [d = mub_dim, m = mub_bases, sweep_value](T pk) { return build_mub<T>(d, m, sweep_value, pk); };
      case Protocol::DMCV:
        return [prm = dmcv, sweep_value](T pk) {
          auto p = prm;
          p.distance_km = sweep_value;
          p.p_key = pk;
          return build_dmcv<T>(p);
        };
    }
    throw std::logic_error("unknown protocol");
  }
};

template <class T = double>
struct SweepRow {
  Protocol protocol = Protocol::BB84;
  T n = 0;
  T sweep_param = 0;
  KeyRateResult<T> result;
  bool ok = false;  // at least one grid point produced a bound
};

// Rows in (n, sweep value, alpha when swept) order; independent of the worker count.
template <class T>
std::vector<SweepRow<T>> run_sweep(const SweepConfig<T>& cfg, std::ostream* progress = nullptr) {
  cfg.validate();
  PipelineOptions<T> opts;
  opts.nested_q_bot = cfg.nested;
  if (cfg.verbose && cfg.jobs <= 1) opts.solver.log = progress;
  const std::vector<T> pks = cfg.fixed_pk ? std::vector<T>{*cfg.fixed_pk} : cfg.pk_grid;
  std::vector<std::vector<T>> alpha_sets;
  if (cfg.fixed_alpha) alpha_sets.push_back({*cfg.fixed_alpha});
  else if (cfg.alpha_sweep)
    for (const T a : cfg.alpha_grid) alpha_sets.push_back({a});
  else alpha_sets.push_back(cfg.alpha_grid);

  std::vector<SweepRow<T>> rows;
  for (const T n : cfg.n_values) {
    SecurityParams<T> sec = cfg.security;
    sec.n = n;
    for (const T value : cfg.sweep_values) {
      const auto build = cfg.builder(value);
      for (const auto& alphas : alpha_sets) {
        const auto opt = optimize_parameters<T>(build, sec, cfg.cone, alphas, pks, cfg.ec_efficiency, cfg.jobs, opts);
        SweepRow<T> row{cfg.protocol, n, value, opt.best, opt.any_success};
        if (progress && cfg.verbose)
          *progress << to_string(cfg.protocol) << " n=" << n << " param=" << value << " alpha=" << row.result.alpha_used
                    << " pk=" << row.result.pk_used << " rate=" << row.result.rate << " status=" << row.result.status
                    << "\n";
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Status strings may carry commas (error text); quote them.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// time_s is written as 0 unless `with_timing`, so identical configs give identical files.
template <class T>
void write_csv(std::ostream& os, const std::vector<SweepRow<T>>& rows, bool with_timing) {
  os << "protocol,n,sweep_param,alpha,pk,delta,h_bits,leak_bits,ell,rate_bits_per_pulse,solver_status,iterations,time_s\n";
  for (const auto& row : rows) {
    const auto& r = row.result;
    os << to_string(row.protocol) << ',' << format_number(double(row.n)) << ',' << format_number(double(row.sweep_param))
       << ',' << format_number(double(r.alpha_used)) << ',' << format_number(double(r.pk_used)) << ','
       << format_number(double(r.delta_used)) << ',' << format_number(double(r.h_bits)) << ','
       << format_number(double(r.leak_bits)) << ',' << format_number(double(r.ell)) << ','
       << format_number(double(r.rate)) << ',' << csv_field(r.status) << ',' << r.iterations << ','
       << format_number(with_timing ? r.time_s : 0.0) << '\n';
  }
}

// 0 when every row has a bound, 2 when some rows failed.
template <class T>
int sweep_exit_code(const std::vector<SweepRow<T>>& rows) {
  for (const auto& r : rows)
    if (!r.ok) return 2;
  return 0;
}

}  // namespace qkdcone
