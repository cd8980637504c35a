#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <regex>

#include "urcsa/urcsa.hpp"
#include "urcsa/gradcheck_suite.hpp"

namespace fs = std::filesystem;
using namespace urcsa;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct BadUsage : std::runtime_error {
  using std::runtime_error::runtime_error;
};

FeatureExtractor<float> make_extractor(const RunConfig& cfg) {
  FeatureExtractor<float> fe(cfg.extractor_widths, cfg.extractor_seed, cfg.extractor_layer);
  if (!cfg.extractor_weights.empty()) fe.load_weights(cfg.extractor_weights);
  return fe;
}

int cmd_train(const std::string& config_path) {
  const RunConfig cfg = RunConfig::from_file(config_path);
  if (cfg.dataset.empty()) throw ConfigError("config has no dataset");
  const FeatureExtractor<float> fe = make_extractor(cfg);
  Model<float> model(cfg.model);

  std::unique_ptr<std::ofstream> log_file;
  TrainOptions opts;
  opts.checkpoint = fs::path(cfg.checkpoint);
  opts.log = &std::cout;
  if (!cfg.log.empty()) {
    log_file = std::make_unique<std::ofstream>(cfg.log, std::ios::app);
    if (!*log_file) throw IoError("cannot open log '" + cfg.log + "'");
    opts.log = log_file.get();
  }
  if (!opts.checkpoint->parent_path().empty()) fs::create_directories(opts.checkpoint->parent_path());

  TrainingLog log;
  if (cfg.mode == RunMode::image) {
    const auto train = load_image_pairs<float>(cfg.dataset);
    const auto val = cfg.val_dataset.empty() ? std::vector<ImagePair<float>>{} : load_image_pairs<float>(cfg.val_dataset);
    log = train_images(model, train, val, cfg.train, fe, opts);
  } else {
    const auto pairs = adjacent_pairs(load_scenes<float>(cfg.dataset));
    if (pairs.empty()) throw UsageError("video dataset has no scene with two or more frames");
    log = train_video(model, pairs, cfg.train, fe, opts);
  }
  std::printf("trained %zu epochs, %zu steps; best psnr %.4f at epoch %zu; checkpoint %s\n", log.epochs.size(),
              log.steps, log.best_psnr, log.best_epoch, cfg.checkpoint.c_str());
  return 0;
}

int cmd_enhance(const std::string& model_path, const fs::path& input, const fs::path& output, double sigma,
                std::uint64_t seed) {
  if (sigma < 0) throw BadUsage("--noise-sigma must be non-negative");
  if (!fs::is_directory(input)) throw FileNotFoundError("input directory '" + input.string() + "' not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(input))
    if (e.is_regular_file() && detail::is_png_name(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageError("no PNG files in '" + input.string() + "'");
  const Model<float> model = load_checkpoint<float>(model_path);

  fs::create_directories(output);
  Rng rng(seed);
  for (const auto& f : files) {
    const Tensor<float> img = add_gaussian_noise(load_png<float>(f), sigma, rng);
    save_png(enhance(model, img), output / f.filename());
    std::printf("%s -> %s\n", f.string().c_str(), (output / f.filename()).string().c_str());
  }
  return 0;
}

int cmd_eval(const std::string& model_path, const fs::path& dataset, bool video, const std::string& json_path) {
  const Model<float> model = load_checkpoint<float>(model_path);
  const MetricsReport report = video ? evaluate_video_dataset(model, load_scenes<float>(dataset))
                                     : evaluate_image_dataset(model, load_image_pairs<float>(dataset));
  std::cout << report.to_text();
  if (!json_path.empty()) {
    std::ofstream out(json_path);
    if (!out) throw IoError("cannot write '" + json_path + "'");
    out << report.to_json().dump(2) << '\n';
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& size, std::size_t blocks, std::size_t stride) {
  std::smatch m;
  static const std::regex pattern(R"((\d+)x(\d+)x(\d+))");
  if (!std::regex_match(size, m, pattern)) throw BadUsage("--size must look like CxHxW, got '" + size + "'");
  GradCheckSuiteOptions o;
  o.seed = seed;
  o.channels = std::stoul(m[1]);
  o.height = std::stoul(m[2]);
  o.width = std::stoul(m[3]);
  o.n_blocks = blocks;
  o.network_stride = stride;
  if (o.channels == 0 || o.height == 0 || o.width == 0 || o.height % 4 || o.width % 4) {
    throw BadUsage("--size needs positive C and H, W divisible by 4");
  }
  if (blocks < 1 || blocks > 4) throw BadUsage("--blocks must be in [1, 4]");
  bool ok = true;
  double worst = 0.0;
  run_gradcheck_suite(o, [&](const GradCheckEntry& e) {
    std::printf("%-16s max_rel_error=%.3e threshold=%.0e checked=%zu skipped=%zu time=%.1fs %s\n", e.name.c_str(),
                e.result.max_rel_error, e.threshold, e.result.checked, e.result.skipped, e.seconds,
                e.passed() ? "ok" : "FAIL");
    std::fflush(stdout);
    ok = ok && e.passed();
    worst = std::max(worst, e.result.max_rel_error);
  });
  std::printf("gradcheck %s: max rel error %.3e\n", ok ? "passed" : "failed", worst);
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"U-RCSA low-light enhancement: train, enhance, eval, gradcheck"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "Train a model from a key=value config file");
  train->add_option("--config", config_path, "Run configuration")->required();

  std::string model_path, input, output;
  double sigma = 0.0;
  std::uint64_t noise_seed = 0;
  auto* enh = app.add_subcommand("enhance", "Enhance every PNG in a directory");
  enh->add_option("--model", model_path, "Checkpoint")->required();
  enh->add_option("--input", input, "Input directory")->required();
  enh->add_option("--output", output, "Output directory (created)")->required();
  enh->add_option("--noise-sigma", sigma, "Gaussian noise sigma added to inputs before enhancement");
  enh->add_option("--seed", noise_seed, "Noise seed");

  std::string dataset, json_path;
  bool video = false;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a paired dataset");
  ev->add_option("--model", model_path, "Checkpoint")->required();
  ev->add_option("--dataset", dataset, "Dataset root with low/ and high/")->required();
  ev->add_flag("--video", video, "Scenes of numbered frames; adds temporal metrics");
  ev->add_option("--json", json_path, "Also write the report as JSON");

  std::uint64_t gc_seed = 0;
  std::string size = "4x8x8";
  std::size_t blocks = 3, stride = 1;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every module and the full network");
  gc->add_option("--seed", gc_seed, "Seed");
  gc->add_option("--size", size, "Feature width and spatial size, CxHxW")->capture_default_str();
  gc->add_option("--blocks", blocks, "Block count of the network check")->capture_default_str();
  gc->add_option("--stride", stride, "Check every n-th network parameter")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return cmd_train(config_path);
    if (*enh) return cmd_enhance(model_path, input, output, sigma, noise_seed);
    if (*ev) return cmd_eval(model_path, dataset, video, json_path);
    if (*gc) return cmd_gradcheck(gc_seed, size, blocks, stride);
  } catch (const BadUsage& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
