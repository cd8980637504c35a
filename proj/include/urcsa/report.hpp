#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "urcsa/config.hpp"
#include "urcsa/dataset.hpp"

// Metrics report. Text form: one "key=value" per line, means first, then
// "image.<name>.<metric>=" lines. JSON form mirrors it as
// {"mode", "count", "metrics": {...}, "items": [{"name", <metric>: ...}]}.
namespace urcsa {

struct MetricsReport {
  std::string mode;  // "image" or "video"
  std::size_t count = 0;
  std::map<std::string, double> metrics;
  struct Item {
    std::string name;
    std::map<std::string, double> values;
  };
  std::vector<Item> items;

  std::string to_text() const {
    std::ostringstream os;
    os.precision(10);
    os << "mode=" << mode << '\n' << "count=" << count << '\n';
    for (const auto& [k, v] : metrics) os << k << '=' << v << '\n';
    for (const auto& it : items) {
      for (const auto& [k, v] : it.values) os << (mode == "image" ? "image." : "scene.") << it.name << '.' << k << '=' << v << '\n';
    }
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["mode"] = mode;
    j["count"] = count;
    j["metrics"] = metrics;
    j["items"] = nlohmann::json::array();
    for (const auto& it : items) {
      nlohmann::json e = it.values;
      e["name"] = it.name;
      j["items"].push_back(std::move(e));
    }
    return j;
  }
};

template <typename T>
MetricsReport evaluate_image_dataset(const Model<T>& model, const std::vector<ImagePair<T>>& pairs) {
  MetricsReport r;
  r.mode = "image";
  r.count = pairs.size();
  for (const char* k : {"psnr", "ssim", "rmse", "delta_e76"}) r.metrics[k] = 0.0;
  for (const auto& p : pairs) {
    const Tensor<T> out = enhance(model, p.low);
    MetricsReport::Item it{p.name, {}};
    it.values["psnr"] = psnr(out, p.high);
    it.values["ssim"] = ssim_index(out, p.high);
    it.values["rmse"] = rmse(out, p.high);
    it.values["delta_e76"] = delta_e76(out, p.high);
    for (const auto& [k, v] : it.values) r.metrics[k] += v / static_cast<double>(pairs.size());
    r.items.push_back(std::move(it));
  }
  return r;
}

// Temporal metrics per scene plus frame-wise PSNR/SSIM; means are over scenes.
template <typename T>
MetricsReport evaluate_video_dataset(const Model<T>& model, const std::vector<LoadedScene<T>>& scenes) {
  MetricsReport r;
  r.mode = "video";
  r.count = scenes.size();
  for (const char* k : {"AB", "MABD", "TPSNR", "TSSIM", "psnr", "ssim"}) r.metrics[k] = 0.0;
  for (const auto& s : scenes) {
    FrameSequence<T> pred;
    MetricsReport::Item it{s.name, {}};
    double ps = 0.0, ss = 0.0;
    for (std::size_t k = 0; k < s.low.size(); ++k) {
      pred.push_back(enhance(model, s.low[k]));
      ps += psnr(pred.back(), s.high[k]);
      ss += ssim_index(pred.back(), s.high[k]);
    }
    const TemporalMetrics tm = temporal_metrics(pred, s.high);
    it.values["AB"] = tm.ab;
    it.values["MABD"] = tm.mabd;
    it.values["TPSNR"] = tm.tpsnr;
    it.values["TSSIM"] = tm.tssim;
    it.values["psnr"] = ps / static_cast<double>(s.low.size());
    it.values["ssim"] = ss / static_cast<double>(s.low.size());
    for (const auto& [k, v] : it.values) r.metrics[k] += v / static_cast<double>(scenes.size());
    r.items.push_back(std::move(it));
  }
  return r;
}

}  // namespace urcsa
