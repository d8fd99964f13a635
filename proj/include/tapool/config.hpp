#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tapool/adaptive_ci.hpp"
#include "tapool/datamodel.hpp"
#include "tapool/simlab.hpp"
#include "tapool/tap.hpp"

namespace tapool {

// Flat "key = value" text grouped under [section] headers; '#' starts a comment.
struct ConfigFile {
  std::map<std::string, std::map<std::string, std::string>> sections;

  static ConfigFile parse(const std::string& text, const std::string& origin);
  static ConfigFile load(const std::string& path);
  bool has(const std::string& section, const std::string& key) const;
  const std::string& get(const std::string& section, const std::string& key) const;
};

struct RunConfig {
  // [data]
  std::string prob_path;
  std::string nonprob_path;
  Schema schema;
  // [estimand]
  Estimand estimand = Estimand::mean();
  // [nuisance], [variance], [tuning]
  TapOptions tap;
  // [ci]
  BaciConfig ci;
  std::vector<CiMethod> ci_methods{CiMethod::Wald, CiMethod::BaciF, CiMethod::Paci};
  // [simulation]
  SimConfig sim = SimConfig::desk();
  Scale scale = Scale::Desk;
  // [toy]
  ToyGrid toy = ToyGrid::defaults();
  // [run]
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out;

  // Applies every key of the file; unknown sections or keys are usage errors.
  void apply(const ConfigFile& file);
  // Pushes seed and thread count into the module configurations.
  void finalize();
};

std::vector<double> parse_double_list(const std::string& text, const std::string& what);
double parse_double(const std::string& text, const std::string& what);
long long parse_int(const std::string& text, const std::string& what);
bool parse_bool(const std::string& text, const std::string& what);
Scale parse_scale(const std::string& text);

}  // namespace tapool
