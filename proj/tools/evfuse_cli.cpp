#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "evfuse/augment.hpp"
#include "evfuse/conv.hpp"
#include "evfuse/core.hpp"
#include "evfuse/filters.hpp"
#include "evfuse/io.hpp"
#include "evfuse/metrics.hpp"
#include "evfuse/noise.hpp"
#include "evfuse/sim.hpp"

namespace fs = std::filesystem;
using namespace evfuse;

namespace {

struct CommonArgs {
  std::string dataset;
  std::string config_file;
  std::vector<std::string> sets;  // raw key=value overrides
  std::string out_dir = "out";
};

void apply_config(io::RunConfig& cfg, const CommonArgs& args) {
  if (!args.config_file.empty()) cfg.load_file(args.config_file);
  for (const std::string& kv : args.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw io::DataError("--set expects key=value, got " + kv);
    cfg.set_key(kv.substr(0, eq), kv.substr(eq + 1));
  }
}

Kernel make_kernel(const io::RunConfig& cfg, const std::string& name) {
  if (name == "identity") return Kernel::identity();
  if (name == "gaussian") return Kernel::gaussian(cfg.kernel_sigma);
  if (name == "sobelx") return Kernel::sobel_x();
  if (name == "sobely") return Kernel::sobel_y();
  if (name == "laplacian") return Kernel::laplacian();
  if (name == "custom") {
    if (cfg.kernel_file.empty()) throw io::DataError("custom kernel needs conv.kernel_file");
    return io::read_kernel(cfg.kernel_file);
  }
  throw io::DataError("unknown kernel '" + name + "'");
}

struct LoadedRun {
  io::Dataset dataset;
  io::RunConfig cfg;
  Timeline timeline;
  std::unique_ptr<ReferenceProvider> provider;  // null in highpass mode
};

LoadedRun prepare_run(const CommonArgs& args, io::RunConfig cfg) {
  LoadedRun run;
  std::optional<double> sigma_override;
  if (cfg.crf_sigma2_im > 0.0) sigma_override = cfg.crf_sigma2_im;
  run.dataset = io::load_dataset(args.dataset, cfg.polarity, sigma_override);

  if (cfg.auto_ct) {
    cfg.filter.c = global_ct_estimate(run.dataset.frames, run.dataset.events, run.dataset.crf,
                                      cfg.I_0);
    std::fprintf(stderr, "estimated contrast threshold c = %.6f\n", cfg.filter.c);
  }

  run.timeline = interleave(run.dataset.events, run.dataset.frames);
  if (cfg.filter.mode != FilterMode::HighPass) {
    if (run.dataset.frames.empty()) {
      throw io::DataError("cf/akf reconstruction needs frames; use --mode highpass otherwise");
    }
    run.provider = make_reference_provider(run.dataset.frames, run.dataset.events,
                                           run.dataset.crf, cfg.filter.c, cfg.augment, cfg.I_0);
  }
  run.cfg = std::move(cfg);
  return run;
}

std::int64_t timeline_end(const Timeline& timeline) {
  return timeline.empty() ? 0 : timeline.back().t.micros;
}

// Stream the timeline, querying the filter at each scheduled instant. Items
// at a scheduled time are applied before the query.
template <typename Engine>
std::vector<ImageF> run_schedule(Engine& engine, const LoadedRun& run,
                                 std::span<const std::int64_t> times) {
  std::vector<ImageF> snapshots;
  snapshots.reserve(times.size());
  std::size_t cursor = 0;
  for (const std::int64_t t : times) {
    while (cursor < run.timeline.size() && run.timeline[cursor].t.micros <= t) {
      engine.process_item(run.timeline[cursor], run.dataset.events, run.dataset.frames);
      ++cursor;
    }
    snapshots.push_back(engine.query(t));
  }
  return snapshots;
}

int cmd_reconstruct(const CommonArgs& args, io::RunConfig cfg) {
  LoadedRun run = prepare_run(args, std::move(cfg));
  const auto times =
      run.cfg.schedule.resolve(0, timeline_end(run.timeline), run.dataset.events);

  FilterImage engine(run.dataset.width, run.dataset.height, run.cfg.filter, run.cfg.noise,
                     run.provider.get());
  std::vector<ImageF> logs = run_schedule(engine, run, times);

  std::vector<ImageF> intensities;
  intensities.reserve(logs.size());
  for (const ImageF& log_img : logs) {
    intensities.push_back(metrics::log_to_intensity(log_img, run.cfg.I_0));
  }
  const auto files = io::write_output(intensities, times, args.out_dir, run.cfg.normalization,
                                      run.cfg.output_bit_depth);
  std::printf("wrote %zu images to %s (%llu events, %llu skipped out-of-bounds)\n",
              files.size(), args.out_dir.c_str(),
              static_cast<unsigned long long>(engine.stats().events_processed),
              static_cast<unsigned long long>(engine.stats().events_skipped_oob));
  return 0;
}

int cmd_convolve(const CommonArgs& args, io::RunConfig cfg) {
  const std::string kernel_name = cfg.kernel;
  LoadedRun run = prepare_run(args, std::move(cfg));
  if (run.provider == nullptr) {
    throw io::DataError("convolve requires cf or akf mode (frame data)");
  }
  const auto times =
      run.cfg.schedule.resolve(0, timeline_end(run.timeline), run.dataset.events);

  if (kernel_name == "gradient") {
    // Two parallel directional pipelines; outputs are color-wheel encoded.
    ConvolvedPipeline gx(run.dataset.width, run.dataset.height, Kernel::sobel_x(),
                         run.cfg.filter, run.cfg.noise, *run.provider);
    ConvolvedPipeline gy(run.dataset.width, run.dataset.height, Kernel::sobel_y(),
                         run.cfg.filter, run.cfg.noise, *run.provider);
    std::vector<ImageF> gx_imgs = run_schedule(gx, run, times);
    // Re-run for gy; pipelines are independent states over the same timeline.
    std::vector<ImageF> gy_imgs;
    {
      std::size_t cursor = 0;
      gy_imgs.reserve(times.size());
      for (const std::int64_t t : times) {
        while (cursor < run.timeline.size() && run.timeline[cursor].t.micros <= t) {
          gy.process_item(run.timeline[cursor], run.dataset.events, run.dataset.frames);
          ++cursor;
        }
        gy_imgs.push_back(gy.query(t));
      }
    }
    std::error_code ec;
    fs::create_directories(args.out_dir, ec);
    for (std::size_t i = 0; i < times.size(); ++i) {
      const Image<Rgb8> color = gradient_color_encode(gx_imgs[i], gy_imgs[i]);
      char name[96];
      std::snprintf(name, sizeof(name), "gradient_%06zu_%012lld.png", i,
                    static_cast<long long>(times[i]));
      io::write_rgb_image(fs::path(args.out_dir) / name, color);
    }
    std::printf("wrote %zu gradient images to %s\n", times.size(), args.out_dir.c_str());
    return 0;
  }

  const Kernel kernel = make_kernel(run.cfg, kernel_name);
  ConvolvedPipeline pipeline(run.dataset.width, run.dataset.height, kernel, run.cfg.filter,
                             run.cfg.noise, *run.provider);
  std::vector<ImageF> states = run_schedule(pipeline, run, times);

  // The identity kernel is a plain reconstruction and is exported as
  // intensity; other kernels carry signed values and are exported raw.
  std::vector<ImageF> outputs;
  outputs.reserve(states.size());
  io::OutputNormalization norm = run.cfg.normalization;
  if (kernel_name == "identity") {
    for (const ImageF& s : states) outputs.push_back(metrics::log_to_intensity(s, run.cfg.I_0));
  } else {
    outputs = std::move(states);
    norm = io::OutputNormalization::Percentile;
  }
  const auto files = io::write_output(outputs, times, args.out_dir, norm,
                                      run.cfg.output_bit_depth, kernel.name());
  std::printf("wrote %zu images to %s (%llu state updates)\n", files.size(),
              args.out_dir.c_str(),
              static_cast<unsigned long long>(pipeline.filter().stats().state_updates));
  return 0;
}

int cmd_calibrate(const CommonArgs& args, io::RunConfig cfg) {
  apply_config(cfg, args);
  std::optional<double> sigma_override;
  if (cfg.crf_sigma2_im > 0.0) sigma_override = cfg.crf_sigma2_im;
  const io::Dataset ds = io::load_dataset(args.dataset, cfg.polarity, sigma_override);
  const double c = global_ct_estimate(ds.frames, ds.events, ds.crf, cfg.I_0);
  std::printf("c = %.6f\n", c);
  return 0;
}

// ---- simulate ------------------------------------------------------------------

struct SimArgs {
  std::string out_dir = "dataset";
  std::string scene = "sinstep";
  std::string crf_shape = "linear";
  int width = 64;
  int height = 64;
  double duration = 2.0;
  double rate = 30.0;
  double exposure = 0.0;
  double c = 0.1;
  double refractory = 0.0;
  double noise_sigma = 0.0;
  double clip_lo = 0.0;
  double clip_hi = 1.0;
  bool no_quantize = false;
  std::uint64_t seed = 0;
};

sim::Scene build_scene(const SimArgs& a) {
  sim::Scene scene(a.width, a.height);
  if (a.scene == "constant") {
    scene.add(sim::Constant{std::log(0.5 + kDefaultI0)});
  } else if (a.scene == "ramp") {
    scene.add(sim::Constant{std::log(0.3 + kDefaultI0)});
    scene.add(sim::TemporalRamp{0.8 / std::max(a.duration, 1e-6)});
  } else if (a.scene == "sine") {
    scene.add(sim::Constant{std::log(0.4 + kDefaultI0)});
    scene.add(sim::MovingSinusoid{0.6, a.width / 4.0, a.width / 2.0, 0.0, 0.0});
  } else if (a.scene == "edge") {
    scene.add(sim::MovingStepEdge{std::log(0.2 + kDefaultI0), std::log(0.8 + kDefaultI0),
                                  a.width / std::max(a.duration, 1e-6), 0.0, 1.0});
  } else if (a.scene == "sinstep") {
    scene.add(sim::Constant{std::log(0.45 + kDefaultI0)});
    scene.add(sim::MovingSinusoid{0.9, a.width / 3.0, a.width / 2.0, 0.3, 0.0});
    scene.add(sim::MovingStepEdge{0.0, 0.8, a.width / std::max(a.duration, 1e-6), 0.0, 2.0});
  } else {
    throw io::DataError("unknown scene '" + a.scene +
                        "' (constant, ramp, sine, edge, sinstep)");
  }
  return scene;
}

CrfModel build_sim_crf(const std::string& shape) {
  if (shape == "linear") return CrfModel::identity();
  if (shape == "scurve") {
    // Smoothstep response: compressive at both ends like a real camera.
    std::vector<double> irr(CrfModel::kTableSize), resp(CrfModel::kTableSize);
    for (int i = 0; i < CrfModel::kTableSize; ++i) {
      const double u = double(i) / (CrfModel::kTableSize - 1);
      irr[i] = u;
      resp[i] = u * u * (3.0 - 2.0 * u);
    }
    return CrfModel::from_samples(irr, resp, CrfModel::kDefaultSigma2Im);
  }
  throw io::DataError("unknown crf shape '" + shape + "' (linear, scurve)");
}

int cmd_simulate(const SimArgs& a) {
  const sim::Scene scene = build_scene(a);
  sim::SimConfig config;
  config.duration = a.duration;
  config.frame_rate = a.rate;
  config.exposure = a.exposure;
  config.c = a.c;
  config.refractory = a.refractory;
  config.frame_noise_sigma = a.noise_sigma;
  config.clip_lo = a.clip_lo;
  config.clip_hi = a.clip_hi;
  config.quantize = !a.no_quantize;
  config.seed = a.seed;

  const CrfModel crf = build_sim_crf(a.crf_shape);
  const auto events = sim::simulate_events(scene, config);
  const auto frames = sim::simulate_frames(scene, config, crf);

  const fs::path out(a.out_dir);
  std::error_code ec;
  fs::create_directories(out / "frames", ec);

  io::write_events(out / "events.txt", events, a.width, a.height);
  std::vector<io::FrameIndexEntry> index;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    char name[64];
    std::snprintf(name, sizeof(name), "frame_%06zu.pgm", k);
    io::write_gray_image(out / "frames" / name, frames[k].response,
                         config.quantize ? 8 : 16);
    index.push_back({frames[k].t_mid.micros, name, frames[k].exposure});
  }
  io::write_frame_index(out / "index.csv", index);
  io::write_crf(out / "crf.txt", crf);

  io::DatasetManifest manifest;
  manifest.width = a.width;
  manifest.height = a.height;
  manifest.events_path = out / "events.txt";
  manifest.frame_index_path = out / "index.csv";
  manifest.frame_dir = out / "frames";
  manifest.crf_path = out / "crf.txt";
  manifest.sensor_profile = "sim";
  manifest.save(out / "manifest.cfg");

  std::printf("simulated %zu events, %zu frames -> %s\n", events.size(), frames.size(),
              a.out_dir.c_str());
  return 0;
}

int cmd_evaluate(const std::string& recon_dir, const std::string& ref_dir) {
  auto list_images = [](const fs::path& dir) {
    std::vector<fs::path> files;
    if (!fs::is_directory(dir)) throw io::DataError("not a directory: " + dir.string());
    for (const auto& entry : fs::directory_iterator(dir)) {
      const auto ext = entry.path().extension();
      if (ext == ".pgm" || ext == ".png") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
  };
  const auto recon_files = list_images(recon_dir);
  const auto ref_files = list_images(ref_dir);
  if (recon_files.empty() || recon_files.size() != ref_files.size()) {
    throw io::DataError("evaluate: directories must hold the same nonzero image count (" +
                        std::to_string(recon_files.size()) + " vs " +
                        std::to_string(ref_files.size()) + ")");
  }
  metrics::MetricReport report;
  for (std::size_t i = 0; i < recon_files.size(); ++i) {
    const ImageF a = io::read_gray_image(recon_files[i]);
    const ImageF b = io::read_gray_image(ref_files[i]);
    report.add(metrics::mse(a, b), metrics::ssim(a, b));
  }
  report.write_csv(std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evfuse: asynchronous event-frame fusion filters"};
  app.require_subcommand(1);
  app.footer("Configuration keys (for --config files and --set):\n" +
             io::RunConfig::documented_keys());

  CommonArgs common;
  io::RunConfig cfg;
  std::string mode = "cf";
  std::string augmentation = "full";

  auto add_common = [&](CLI::App* sub, bool needs_dataset = true) {
    if (needs_dataset) {
      sub->add_option("--dataset", common.dataset, "dataset manifest file or directory")
          ->required();
    }
    sub->add_option("--config", common.config_file, "key=value configuration file");
    sub->add_option("--set", common.sets, "override a configuration key (key=value)");
    sub->add_option("--out", common.out_dir, "output directory");
  };

  auto* rec = app.add_subcommand("reconstruct", "fuse events and frames into HDR video");
  add_common(rec);
  rec->add_option("--mode", mode, "cf|akf|highpass");
  rec->add_option("--augmentation", augmentation, "full|zoh");
  rec->add_option("--alpha", cfg.filter.alpha, "CF gain / high-pass corner (rad/s)");
  double c_flag = -1.0;
  rec->add_option("--c", c_flag, "contrast threshold");
  bool auto_ct = false;
  rec->add_flag("--auto-ct", auto_ct, "estimate c from the data first");
  double rate_flag = -1.0;
  rec->add_option("--rate", rate_flag, "output rate in Hz");
  bool per_event = false;
  rec->add_flag("--per-event", per_event, "one output per event");

  auto* conv = app.add_subcommand("convolve", "event-space spatial convolution outputs");
  add_common(conv);
  std::string kernel_flag = "identity";
  conv->add_option("--kernel", kernel_flag,
                   "identity|gaussian|sobelx|sobely|laplacian|gradient|custom");
  double sigma_flag = -1.0;
  conv->add_option("--sigma", sigma_flag, "gaussian kernel sigma (px)");
  std::string kernel_file_flag;
  conv->add_option("--kernel-file", kernel_file_flag, "custom kernel tap file");
  conv->add_option("--mode", mode, "cf|akf");
  conv->add_option("--rate", rate_flag, "output rate in Hz");

  auto* cal = app.add_subcommand("calibrate-ct", "estimate the global contrast threshold");
  add_common(cal);

  auto* sim_cmd = app.add_subcommand("simulate", "generate a synthetic dataset");
  SimArgs sim_args;
  sim_cmd->add_option("--out", sim_args.out_dir, "dataset directory");
  sim_cmd->add_option("--scene", sim_args.scene, "constant|ramp|sine|edge|sinstep");
  sim_cmd->add_option("--crf", sim_args.crf_shape, "linear|scurve");
  sim_cmd->add_option("--width", sim_args.width, "image width");
  sim_cmd->add_option("--height", sim_args.height, "image height");
  sim_cmd->add_option("--duration", sim_args.duration, "seconds");
  sim_cmd->add_option("--frame-rate", sim_args.rate, "Hz");
  sim_cmd->add_option("--exposure", sim_args.exposure, "seconds");
  sim_cmd->add_option("--c", sim_args.c, "true contrast threshold");
  sim_cmd->add_option("--refractory", sim_args.refractory, "seconds");
  sim_cmd->add_option("--frame-noise", sim_args.noise_sigma, "response-domain sigma");
  sim_cmd->add_option("--clip-lo", sim_args.clip_lo, "window low edge (intensity)");
  sim_cmd->add_option("--clip-hi", sim_args.clip_hi, "window high edge (intensity)");
  sim_cmd->add_flag("--no-quantize", sim_args.no_quantize, "skip 8-bit quantization");
  sim_cmd->add_option("--seed", sim_args.seed, "noise seed");

  auto* eval = app.add_subcommand("evaluate", "MSE/SSIM of a reconstruction vs a reference");
  std::string recon_dir, ref_dir;
  eval->add_option("--recon", recon_dir, "reconstruction image directory")->required();
  eval->add_option("--ref", ref_dir, "reference image directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints usage/error
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  try {
    if (rec->parsed()) {
      apply_config(cfg, common);
      cfg.set_key("filter.mode", mode);
      cfg.set_key("augment.mode", augmentation);
      if (c_flag > 0.0) cfg.filter.c = c_flag;
      if (auto_ct) cfg.auto_ct = true;
      if (rate_flag > 0.0) {
        cfg.schedule.kind = io::OutputSchedule::Kind::FixedRate;
        cfg.schedule.rate_hz = rate_flag;
      }
      if (per_event) cfg.schedule.kind = io::OutputSchedule::Kind::PerEvent;
      return cmd_reconstruct(common, std::move(cfg));
    }
    if (conv->parsed()) {
      apply_config(cfg, common);
      cfg.set_key("filter.mode", mode);
      cfg.kernel = kernel_flag;
      if (sigma_flag > 0.0) cfg.kernel_sigma = sigma_flag;
      if (!kernel_file_flag.empty()) cfg.kernel_file = kernel_file_flag;
      if (rate_flag > 0.0) {
        cfg.schedule.kind = io::OutputSchedule::Kind::FixedRate;
        cfg.schedule.rate_hz = rate_flag;
      }
      return cmd_convolve(common, std::move(cfg));
    }
    if (cal->parsed()) return cmd_calibrate(common, cfg);
    if (sim_cmd->parsed()) return cmd_simulate(sim_args);
    if (eval->parsed()) return cmd_evaluate(recon_dir, ref_dir);
  } catch (const io::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
