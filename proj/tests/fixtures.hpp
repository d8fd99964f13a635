#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "tapool/datamodel.hpp"
#include "tapool/simlab.hpp"

namespace fixture {

// One simulated desk-scale pair of samples.
inline tapool::CombinedData desk_samples(double b, std::uint64_t seed, int N = 20000) {
  tapool::SimConfig cfg = tapool::SimConfig::desk();
  cfg.N = N;
  cfg.b = b;
  tapool::FinitePopulation pop = tapool::generate_population(cfg.N, seed);
  return tapool::draw_samples(pop, cfg, seed + 1);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("tapool_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Writes both samples as CSV with covariates x1, x2, outcome y and weight d.
inline void write_samples(const tapool::CombinedData& data, const std::filesystem::path& prob,
                          const std::filesystem::path& nonprob) {
  std::ofstream a(prob), b(nonprob);
  a.precision(17);
  b.precision(17);
  a << "x1,x2,y,d\n";
  for (int i = 0; i < data.n_A(); ++i) {
    a << data.prob.X(i, 1) << "," << data.prob.X(i, 2) << "," << data.prob.y(i) << "," << data.prob.d(i) << "\n";
  }
  b << "x1,x2,y\n";
  for (int i = 0; i < data.n_B(); ++i) {
    b << data.nonprob.X(i, 1) << "," << data.nonprob.X(i, 2) << "," << data.nonprob.y(i) << "\n";
  }
}

}  // namespace fixture
