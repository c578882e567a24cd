#pragma once

// Run artifacts: density grid (CSV and binary PGM), step history, key=value
// summaries and multi-trial statistics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rto/acmdsa.hpp"
#include "rto/config.hpp"
#include "rto/error.hpp"
#include "rto/mesh_fem.hpp"

namespace rto {

/// File could not be written or read.
class IoError : public Error {
 public:
  using Error::Error;
};

namespace artifacts {

namespace fs = std::filesystem;

/// Value as written to density.csv: 6 decimals, masked cells -1.
inline std::string format_density(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// Grid of cell values, top row first; masked cells hold -1.
inline std::vector<std::vector<double>> density_grid(const fem::Mesh& mesh, const Vector& xbar) {
  if (xbar.size() != mesh.num_elements()) throw PreconditionError("density size does not match mesh");
  std::vector<std::vector<double>> grid(static_cast<std::size_t>(mesh.ny()),
                                        std::vector<double>(static_cast<std::size_t>(mesh.nx()), -1.0));
  for (int iy = 0; iy < mesh.ny(); ++iy) {
    for (int ix = 0; ix < mesh.nx(); ++ix) {
      const int e = mesh.element_at(ix, iy);
      if (e >= 0) grid[mesh.ny() - 1 - iy][ix] = xbar[e];
    }
  }
  return grid;
}

inline std::string density_csv(const fem::Mesh& mesh, const Vector& xbar) {
  std::string out;
  for (const auto& row : density_grid(mesh, xbar)) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      out += row[i] < 0.0 ? std::string("-1") : format_density(row[i]);
    }
    out += '\n';
  }
  return out;
}

/// pixel = round(255 (1 - v)) of the 6-decimal value; masked cells are white.
inline std::uint8_t pixel(double csv_value) {
  if (csv_value < 0.0) return 255;
  const double v = std::clamp(csv_value, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - v)));
}

inline std::string density_pgm(const fem::Mesh& mesh, const Vector& xbar) {
  std::string out = "P5\n" + std::to_string(mesh.nx()) + " " + std::to_string(mesh.ny()) + "\n255\n";
  for (const auto& row : density_grid(mesh, xbar)) {
    for (double v : row) out += static_cast<char>(pixel(v < 0.0 ? v : detail::to_double("density", format_density(v))));
  }
  return out;
}

/// Parses density.csv back into an active-element vector.
inline Vector read_density_csv(std::istream& in, const fem::Mesh& mesh) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(detail::to_double("density", cell));
    rows.push_back(std::move(row));
  }
  if (static_cast<int>(rows.size()) != mesh.ny()) throw ParameterError("density grid row count does not match mesh");
  Vector xbar(mesh.num_elements());
  for (int r = 0; r < mesh.ny(); ++r) {
    if (static_cast<int>(rows[r].size()) != mesh.nx()) {
      throw ParameterError("density grid column count does not match mesh");
    }
    const int iy = mesh.ny() - 1 - r;
    for (int ix = 0; ix < mesh.nx(); ++ix) {
      const int e = mesh.element_at(ix, iy);
      const double v = rows[r][ix];
      if (e < 0) {
        if (v != -1.0) throw ParameterError("density grid has a value in a masked cell");
        continue;
      }
      if (!(v >= 0.0 && v <= 1.0)) throw ParameterError("density outside [0, 1]");
      xbar[e] = v;
    }
  }
  return xbar;
}

inline std::string history_csv(const std::vector<acmdsa::StepRecord>& history) {
  std::string out = "step,J_m,mu_m,var_m,eta,move,dx_ag_l2,recal,damp\n";
  for (const auto& s : history) {
    out += std::to_string(s.step);
    for (double v : {s.J_m, s.mu_m, s.var_m, s.eta, s.move, s.dx_ag_l2}) out += "," + detail::exact(v);
    out += std::string(",") + (s.recal ? "1" : "0") + "," + (s.damp ? "1" : "0") + "\n";
  }
  return out;
}

inline std::string summary_text(const acmdsa::RunRecord& rec, const KeyValues& echo) {
  std::string out;
  auto line = [&](const std::string& k, const std::string& v) { out += k + "=" + v + "\n"; };
  line("J_hat", detail::exact(rec.J_hat));
  line("mu_hat", detail::exact(rec.mu_hat));
  line("sigma_hat", detail::exact(rec.sigma_hat));
  line("J_std_error", detail::exact(rec.J_std_error));
  line("N_step", std::to_string(rec.N_step));
  line("N_solve", std::to_string(rec.N_solve));
  line("recalibrations", std::to_string(rec.recalibrations));
  line("dampings", std::to_string(rec.dampings));
  line("volume_error", detail::exact(rec.final_volume_error));
  line("volume_inactive_steps", std::to_string(rec.volume_inactive_steps));
  line("clipped_exponents", std::to_string(rec.clipped_exponents));
  char wall[32];
  std::snprintf(wall, sizeof wall, "%.3f", rec.wall_s);
  line("wall_s", wall);
  for (const auto& [k, v] : echo) line(k, v);
  return out;
}

inline void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

/// Writes density.csv, density.pgm, history.csv and summary.txt into `dir`.
inline void emit(const fs::path& dir, const fem::Mesh& mesh, const acmdsa::RunRecord& rec, const KeyValues& echo) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_file(dir / "density.csv", density_csv(mesh, rec.xbar_star));
  write_file(dir / "density.pgm", density_pgm(mesh, rec.xbar_star));
  write_file(dir / "history.csv", history_csv(rec.history));
  write_file(dir / "summary.txt", summary_text(rec, echo));
}

struct TrialRow {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double J_hat = 0.0;
  double mu_hat = 0.0;
  double sigma_hat = 0.0;
  int N_step = 0;
  long N_solve = 0;
  double wall_s = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double sd = 0.0;
};

inline Aggregate aggregate(const std::vector<double>& v) {
  Aggregate a;
  if (v.empty()) return a;
  a.min = *std::min_element(v.begin(), v.end());
  a.max = *std::max_element(v.begin(), v.end());
  for (double x : v) a.mean += x;
  a.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - a.mean) * (x - a.mean);
    a.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return a;
}

struct TrialStats {
  std::vector<TrialRow> rows;

  std::vector<const TrialRow*> successes() const {
    std::vector<const TrialRow*> ok;
    for (const auto& r : rows) {
      if (r.ok) ok.push_back(&r);
    }
    return ok;
  }

  template <class F>
  Aggregate over(F field) const {
    std::vector<double> v;
    for (const auto* r : successes()) v.push_back(static_cast<double>(field(*r)));
    return aggregate(v);
  }

  /// Trial with J_hat closest to the mean, lowest seed on ties; -1 when none succeeded.
  int representative() const {
    const double mean = over([](const TrialRow& r) { return r.J_hat; }).mean;
    int best = -1;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!rows[i].ok) continue;
      if (best < 0) {
        best = static_cast<int>(i);
        continue;
      }
      const double d = std::abs(rows[i].J_hat - mean);
      const double db = std::abs(rows[best].J_hat - mean);
      if (d < db || (d == db && rows[i].seed < rows[best].seed)) best = static_cast<int>(i);
    }
    return best;
  }

  std::string csv() const {
    std::string out = "seed,status,J_hat,mu_hat,sigma_hat,N_step,N_solve,wall_s\n";
    char buf[256];
    for (const auto& r : rows) {
      if (!r.ok) {
        out += std::to_string(r.seed) + ",failed,,,,,,\n";
        continue;
      }
      std::snprintf(buf, sizeof buf, "%llu,ok,%.6f,%.6f,%.6f,%d,%ld,%.3f\n", static_cast<unsigned long long>(r.seed),
                    r.J_hat, r.mu_hat, r.sigma_hat, r.N_step, r.N_solve, r.wall_s);
      out += buf;
    }
    auto agg_row = [&](const char* name, auto pick) {
      const Aggregate J = over([](const TrialRow& r) { return r.J_hat; });
      const Aggregate mu = over([](const TrialRow& r) { return r.mu_hat; });
      const Aggregate s = over([](const TrialRow& r) { return r.sigma_hat; });
      const Aggregate ns = over([](const TrialRow& r) { return r.N_step; });
      const Aggregate nv = over([](const TrialRow& r) { return r.N_solve; });
      const Aggregate w = over([](const TrialRow& r) { return r.wall_s; });
      std::snprintf(buf, sizeof buf, "%s,agg,%.6f,%.6f,%.6f,%.3f,%.3f,%.3f\n", name, pick(J), pick(mu), pick(s),
                    pick(ns), pick(nv), pick(w));
      out += buf;
    };
    agg_row("mean", [](const Aggregate& a) { return a.mean; });
    agg_row("min", [](const Aggregate& a) { return a.min; });
    agg_row("max", [](const Aggregate& a) { return a.max; });
    agg_row("sd", [](const Aggregate& a) { return a.sd; });
    return out;
  }
};

}  // namespace artifacts
}  // namespace rto
