#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "urcsa/network.hpp"
#include "urcsa/trainer.hpp"

// Run configuration: one key=value per line; blank lines and lines starting
// with '#' are ignored. Unknown keys and repeated keys are errors.
namespace urcsa {

enum class RunMode { image, video };

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  RunMode mode = RunMode::image;
  std::string dataset;       // training root (required for train)
  std::string val_dataset;   // empty: validate on the training set
  std::string checkpoint = "model.ckpt";
  std::string log;           // empty: log to stdout
  std::vector<std::size_t> extractor_widths{8, 16, 32};
  std::uint64_t extractor_seed = 7;
  std::size_t extractor_layer = 0;  // 0 = last block
  std::string extractor_weights;    // empty: seeded random weights

  std::string to_text() const;
  bool set(const std::string& key, const std::string& value);
  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::filesystem::path& path);
  void validate() const {
    model.validate();
    train.validate();
    if (extractor_widths.empty()) throw ConfigError("extractor_widths must list at least one width");
    if (extractor_layer > extractor_widths.size()) throw ConfigError("extractor_layer exceeds extractor depth");
  }
};

inline double parse_double(const std::string& key, const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
  }
  if (used != s.size()) throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << model.to_text();
  os << "mode=" << (mode == RunMode::image ? "image" : "video") << '\n'
     << "dataset=" << dataset << '\n'
     << "val_dataset=" << val_dataset << '\n'
     << "checkpoint=" << checkpoint << '\n'
     << "log=" << log << '\n'
     << "initial_lr=" << format_double(train.initial_lr) << '\n'
     << "decay_factor=" << format_double(train.decay_factor) << '\n'
     << "decay_every=" << train.decay_every << '\n'
     << "total_epochs=" << train.total_epochs << '\n'
     << "stage1_fraction=" << format_double(train.stage1_fraction) << '\n'
     << "crop_h=" << train.crop_h << '\n'
     << "crop_w=" << train.crop_w << '\n'
     << "batch_size=" << train.batch_size << '\n'
     << "max_steps=" << train.max_steps << '\n'
     << "validate_every=" << train.validate_every << '\n'
     << "train_seed=" << train.seed << '\n'
     << "tv_weight=" << format_double(train.loss.tv_weight) << '\n'
     << "alpha=" << format_double(train.loss.alpha) << '\n'
     << "beta=" << format_double(train.loss.beta) << '\n';
  os << "extractor_widths=";
  for (std::size_t i = 0; i < extractor_widths.size(); ++i) os << (i ? "," : "") << extractor_widths[i];
  os << '\n'
     << "extractor_seed=" << extractor_seed << '\n'
     << "extractor_layer=" << extractor_layer << '\n'
     << "extractor_weights=" << extractor_weights << '\n';
  return os.str();
}

inline bool RunConfig::set(const std::string& key, const std::string& value) {
  if (model.set(key, value)) return true;
  if (key == "mode") {
    if (value == "image") mode = RunMode::image;
    else if (value == "video") mode = RunMode::video;
    else throw ConfigError("key 'mode': expected image or video, got '" + value + "'");
  } else if (key == "dataset") dataset = value;
  else if (key == "val_dataset") val_dataset = value;
  else if (key == "checkpoint") checkpoint = value;
  else if (key == "log") log = value;
  else if (key == "initial_lr") train.initial_lr = parse_double(key, value);
  else if (key == "decay_factor") train.decay_factor = parse_double(key, value);
  else if (key == "decay_every") train.decay_every = parse_uint(key, value);
  else if (key == "total_epochs") train.total_epochs = parse_uint(key, value);
  else if (key == "stage1_fraction") train.stage1_fraction = parse_double(key, value);
  else if (key == "crop_h") train.crop_h = parse_uint(key, value);
  else if (key == "crop_w") train.crop_w = parse_uint(key, value);
  else if (key == "batch_size") train.batch_size = parse_uint(key, value);
  else if (key == "max_steps") train.max_steps = parse_uint(key, value);
  else if (key == "validate_every") train.validate_every = parse_uint(key, value);
  else if (key == "train_seed") train.seed = parse_uint(key, value);
  else if (key == "tv_weight") train.loss.tv_weight = parse_double(key, value);
  else if (key == "alpha") train.loss.alpha = parse_double(key, value);
  else if (key == "beta") train.loss.beta = parse_double(key, value);
  else if (key == "extractor_widths") {
    extractor_widths.clear();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) extractor_widths.push_back(parse_uint(key, trim(item)));
  } else if (key == "extractor_seed") extractor_seed = parse_uint(key, value);
  else if (key == "extractor_layer") extractor_layer = parse_uint(key, value);
  else if (key == "extractor_weights") extractor_weights = value;
  else return false;
  return true;
}

inline RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    if (!cfg.set(key, value)) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

inline RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFoundError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

}  // namespace urcsa
