#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "urcsa/rcsa.hpp"
#include "urcsa/unet.hpp"

namespace urcsa {

enum class Ordering { u_rcsa, rcsa_u };

inline const char* to_string(Ordering o) { return o == Ordering::u_rcsa ? "U-RCSA" : "RCSA-U"; }

inline Ordering parse_ordering(const std::string& s) {
  if (s == "U-RCSA") return Ordering::u_rcsa;
  if (s == "RCSA-U") return Ordering::rcsa_u;
  throw ConfigError("unknown ordering '" + s + "' (expected U-RCSA or RCSA-U)");
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + s + "'");
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + s + "'");
  }
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': integer out of range '" + s + "'");
  }
}

// Everything that determines the parameter set and its initial values.
struct ModelConfig {
  std::size_t base_channels = 32;
  std::size_t n_blocks = 3;
  bool use_rcsa = true;
  BranchMode rcsa_branch = BranchMode::both;
  Ordering ordering = Ordering::u_rcsa;
  bool improved_unet = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_blocks < 1 || n_blocks > 4) throw ConfigError("n_blocks must be in [1, 4], got " + std::to_string(n_blocks));
    if (base_channels < 1) throw ConfigError("base_channels must be positive");
  }

  // Canonical key=value text, one key per line in a fixed order.
  std::string to_text() const {
    std::ostringstream os;
    os << "base_channels=" << base_channels << '\n'
       << "n_blocks=" << n_blocks << '\n'
       << "use_rcsa=" << (use_rcsa ? "true" : "false") << '\n'
       << "rcsa_branch=" << to_string(rcsa_branch) << '\n'
       << "ordering=" << to_string(ordering) << '\n'
       << "improved_unet=" << (improved_unet ? "true" : "false") << '\n'
       << "seed=" << seed << '\n';
    return os.str();
  }

  // Applies one key; returns false for keys that are not model keys.
  bool set(const std::string& key, const std::string& value) {
    if (key == "base_channels") base_channels = parse_uint(key, value);
    else if (key == "n_blocks") n_blocks = parse_uint(key, value);
    else if (key == "use_rcsa") use_rcsa = parse_bool(key, value);
    else if (key == "rcsa_branch") rcsa_branch = parse_branch_mode(value);
    else if (key == "ordering") ordering = parse_ordering(value);
    else if (key == "improved_unet") improved_unet = parse_bool(key, value);
    else if (key == "seed") seed = parse_uint(key, value);
    else return false;
    return true;
  }

  static ModelConfig from_text(const std::string& text) {
    ModelConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("malformed model config line '" + line + "'");
      if (!cfg.set(line.substr(0, eq), line.substr(eq + 1))) {
        throw ConfigError("unknown model config key '" + line.substr(0, eq) + "'");
      }
    }
    cfg.validate();
    return cfg;
  }

  bool operator==(const ModelConfig&) const = default;
};

// Per-pass intermediate outputs, for inspection.
template <typename T>
struct ForwardTrace {
  Tensor<T> head;
  std::vector<Tensor<T>> block_outputs;
  std::vector<Tensor<T>> unet_outputs;
  std::vector<RcsaTrace<T>> rcsa;
};

// Head conv (3 -> C), one U-RCSA block applied n_blocks times with the same
// parameters, tail conv (C -> 3).
template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg) : config_(cfg) {
    cfg.validate();
    const std::size_t c = cfg.base_channels;
    Rng rng(cfg.seed);
    // Head, tail and U-Net are created before the attention module so that
    // toggling use_rcsa leaves their initial values unchanged.
    head_ = Conv<T>::create(params_, "head", 3, c, 3, 1, rng);
    tail_ = Conv<T>::create(params_, "tail", c, 3, 3, 1, rng);
    const bool rcsa_first = cfg.use_rcsa && cfg.ordering == Ordering::rcsa_u;
    unet_ = UnetParams<T>::create(params_, "block.unet",
                                  UnetConfig{rcsa_first ? 2 * c : c, c, c, cfg.improved_unet}, rng);
    if (cfg.use_rcsa) {
      const std::size_t fused = rcsa_first ? c : 2 * c;
      rcsa_ = RcsaParams<T>::create(params_, "block.rcsa", fused, c, cfg.rcsa_branch, rng);
    }
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  const ParameterSet<T>& params() const { return params_; }
  ParameterSet<T>& params() { return params_; }
  std::size_t param_count() const { return urcsa::param_count(params_); }

  const UnetParams<T>& unet() const { return unet_; }
  UnetParams<T>& unet() { return unet_; }
  const std::optional<RcsaParams<T>>& rcsa() const { return rcsa_; }

  // One pass through the shared block, including its residual from x.
  //   U-RCSA: u = unet(x); r = rcsa(concat(x, u)) + u; out = r + x
  //   RCSA-U: r = rcsa(x) + x; u = unet(concat(x, r)); out = u + x
  //   no attention: out = unet(x) + x
  Tensor<T> block_forward(const Tensor<T>& x, ForwardTrace<T>* trace = nullptr) const {
    Tensor<T> out;
    RcsaTrace<T> rt;
    RcsaTrace<T>* rtp = trace ? &rt : nullptr;
    if (!rcsa_) {
      const Tensor<T> u = unet_forward(x, unet_);
      if (trace) trace->unet_outputs.push_back(u);
      out = add(u, x);
    } else if (config_.ordering == Ordering::u_rcsa) {
      const Tensor<T> u = unet_forward(x, unet_);
      if (trace) trace->unet_outputs.push_back(u);
      out = add(rcsa_forward(concat_channels(x, u), *rcsa_, u, rtp), x);
    } else {
      const Tensor<T> r = rcsa_forward(x, *rcsa_, x, rtp);
      const Tensor<T> u = unet_forward(concat_channels(x, r), unet_);
      if (trace) trace->unet_outputs.push_back(u);
      out = add(u, x);
    }
    if (trace) {
      trace->block_outputs.push_back(out);
      if (rcsa_) trace->rcsa.push_back(std::move(rt));
    }
    return out;
  }

  // Unclamped network output. Input spatial size must be divisible by 4.
  Tensor<T> forward(const Tensor<T>& img, ForwardTrace<T>* trace = nullptr) const {
    detail::require_chw(img, "network_forward");
    if (img.dim(0) != 3) throw DimensionError("network_forward: expected 3 channels, got " + to_string(img.shape()));
    Tensor<T> h = head_(img);
    if (trace) trace->head = h;
    for (std::size_t i = 0; i < config_.n_blocks; ++i) h = block_forward(h, trace);
    return tail_(h);
  }

 private:
  ModelConfig config_;
  ParameterSet<T> params_;
  Conv<T> head_, tail_;
  UnetParams<T> unet_;
  std::optional<RcsaParams<T>> rcsa_;
};

}  // namespace urcsa
