#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "urcsa/png_io.hpp"
#include "urcsa/trainer.hpp"

// Directory layouts:
//   image mode  <root>/low/<name>.png        <root>/high/<name>.png
//   video mode  <root>/low/<scene>/NNNN.png  <root>/high/<scene>/NNNN.png
// Frame indices are zero-padded decimal and must be contiguous per scene.
namespace urcsa {

namespace fs = std::filesystem;

struct ImageEntry {
  std::string name;
  fs::path low, high;
};

struct SceneEntry {
  std::string name;
  std::size_t first_index = 0;
  std::vector<fs::path> low, high;
};

namespace detail {

inline void require_dir(const fs::path& p) {
  if (!fs::is_directory(p)) throw FileNotFoundError("missing dataset directory '" + p.string() + "'");
}

inline bool is_png_name(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png";
}

inline std::vector<std::string> sorted_pngs(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_png_name(e.path())) names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

inline std::vector<std::string> sorted_subdirs(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

inline std::size_t frame_index(const std::string& scene, const std::string& file) {
  const std::string stem = fs::path(file).stem().string();
  if (stem.empty() || stem.find_first_not_of("0123456789") != std::string::npos) {
    throw FormatError("scene '" + scene + "': frame file '" + file + "' is not a numeric index");
  }
  return static_cast<std::size_t>(std::stoull(stem));
}

}  // namespace detail

inline std::vector<ImageEntry> scan_image_dataset(const fs::path& root) {
  const fs::path low = root / "low", high = root / "high";
  detail::require_dir(low);
  detail::require_dir(high);
  std::vector<ImageEntry> out;
  for (const auto& name : detail::sorted_pngs(low)) {
    if (!fs::is_regular_file(high / name)) throw FormatError("no high/ counterpart for low/" + name);
    out.push_back({fs::path(name).stem().string(), low / name, high / name});
  }
  if (out.empty()) throw UsageError("no PNG pairs under '" + root.string() + "'");
  return out;
}

inline std::vector<SceneEntry> scan_video_dataset(const fs::path& root) {
  const fs::path low = root / "low", high = root / "high";
  detail::require_dir(low);
  detail::require_dir(high);
  std::vector<SceneEntry> out;
  for (const auto& scene : detail::sorted_subdirs(low)) {
    if (!fs::is_directory(high / scene)) throw FormatError("no high/ counterpart for scene '" + scene + "'");
    SceneEntry s{scene, 0, {}, {}};
    const auto files = detail::sorted_pngs(low / scene);
    for (std::size_t i = 0; i < files.size(); ++i) {
      const std::size_t idx = detail::frame_index(scene, files[i]);
      if (i == 0) s.first_index = idx;
      else if (idx != s.first_index + i) {
        throw FormatError("scene '" + scene + "': frame indices not contiguous at '" + files[i] + "'");
      }
      if (!fs::is_regular_file(high / scene / files[i])) {
        throw FormatError("scene '" + scene + "': no high/ counterpart for frame '" + files[i] + "'");
      }
      s.low.push_back(low / scene / files[i]);
      s.high.push_back(high / scene / files[i]);
    }
    if (s.low.empty()) throw FormatError("scene '" + scene + "' has no frames");
    out.push_back(std::move(s));
  }
  if (out.empty()) throw UsageError("no scenes under '" + root.string() + "'");
  return out;
}

template <typename T>
std::vector<ImagePair<T>> load_image_pairs(const fs::path& root) {
  std::vector<ImagePair<T>> out;
  for (const auto& e : scan_image_dataset(root)) {
    ImagePair<T> p{load_png<T>(e.low), load_png<T>(e.high), e.name};
    if (p.low.shape() != p.high.shape()) throw DimensionError("pair '" + e.name + "': low/high sizes differ");
    out.push_back(std::move(p));
  }
  return out;
}

template <typename T>
struct LoadedScene {
  std::string name;
  std::vector<Tensor<T>> low, high;
};

template <typename T>
std::vector<LoadedScene<T>> load_scenes(const fs::path& root) {
  std::vector<LoadedScene<T>> out;
  for (const auto& s : scan_video_dataset(root)) {
    LoadedScene<T> ls{s.name, {}, {}};
    for (std::size_t i = 0; i < s.low.size(); ++i) {
      ls.low.push_back(load_png<T>(s.low[i]));
      ls.high.push_back(load_png<T>(s.high[i]));
      if (ls.low.back().shape() != ls.high.back().shape() || ls.low.back().shape() != ls.low.front().shape()) {
        throw DimensionError("scene '" + s.name + "': frame sizes differ at " + s.low[i].filename().string());
      }
    }
    out.push_back(std::move(ls));
  }
  return out;
}

// Every adjacent (k, k+1) pair of every scene.
template <typename T>
std::vector<FramePair<T>> adjacent_pairs(const std::vector<LoadedScene<T>>& scenes) {
  std::vector<FramePair<T>> out;
  for (const auto& s : scenes) {
    for (std::size_t k = 0; k + 1 < s.low.size(); ++k) {
      out.push_back({s.low[k], s.low[k + 1], s.high[k], s.high[k + 1], s.name + ":" + std::to_string(k)});
    }
  }
  return out;
}

}  // namespace urcsa
