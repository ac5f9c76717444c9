#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "evfuse/augment.hpp"
#include "evfuse/conv.hpp"
#include "evfuse/core.hpp"
#include "evfuse/noise.hpp"

namespace evfuse::io {

/// Malformed or inconsistent input data. The CLI maps this to exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Parse decimal seconds to integer microseconds. More than six fractional
/// digits (or any non-decimal notation) is rejected rather than rounded.
std::int64_t parse_decimal_seconds(const std::string& text);

enum class PolarityConvention {
  ZeroOne,    // 0 -> -1, 1 -> +1 (IJRR-style text files)
  PlusMinus,  // -1/+1 kept; 0 marks a hardware sync record and is dropped
};

struct EventFileData {
  std::vector<Event> events;
  int width = -1;   // from an optional "# width height" header, else -1
  int height = -1;
  std::int64_t sync_dropped = 0;
};

/// Text event files: one "t x y p" record per line, t in decimal seconds.
EventFileData read_events(const std::filesystem::path& path,
                          PolarityConvention convention = PolarityConvention::ZeroOne);
void write_events(const std::filesystem::path& path, std::span<const Event> events, int width,
                  int height);

// ---- Images -----------------------------------------------------------------

/// Grayscale image file (PGM or PNG by extension), normalized to [0,1].
/// bit_depth receives 8 or 16.
ImageF read_gray_image(const std::filesystem::path& path, int* bit_depth = nullptr);
/// Values are clamped to [0,1] and quantized to the requested depth.
void write_gray_image(const std::filesystem::path& path, const ImageF& image,
                      int bit_depth = 16);
void write_rgb_image(const std::filesystem::path& path, const Image<Rgb8>& image);

// ---- Frame index --------------------------------------------------------------

struct FrameIndexEntry {
  std::int64_t t_mid_micros = 0;
  std::string filename;
  double exposure = 0.0;
};

/// CSV lines "timestamp_mid_seconds,filename,exposure_seconds".
std::vector<FrameIndexEntry> read_frame_index(const std::filesystem::path& path);
void write_frame_index(const std::filesystem::path& path,
                       std::span<const FrameIndexEntry> entries);

/// Load all frames named by an index file, images resolved against frame_dir.
/// Throws DataError when geometries disagree.
std::vector<Frame> read_frames(const std::filesystem::path& index_path,
                               const std::filesystem::path& frame_dir);

// ---- Tables -------------------------------------------------------------------

/// CRF table file: 256 lines "irradiance response", '#' comments.
CrfModel read_crf(const std::filesystem::path& path, double sigma2_im, double f_w_floor = 0.01);
void write_crf(const std::filesystem::path& path, const CrfModel& crf);

/// Kernel file: lines "dx dy weight".
Kernel read_kernel(const std::filesystem::path& path);

// ---- Dataset manifest ----------------------------------------------------------

struct DatasetManifest {
  int width = 0;
  int height = 0;
  std::filesystem::path events_path;
  std::filesystem::path frame_index_path;
  std::filesystem::path frame_dir;
  std::optional<std::filesystem::path> crf_path;
  std::string sensor_profile = "sim";

  static DatasetManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

struct Dataset {
  int width = 0;
  int height = 0;
  std::vector<Event> events;
  std::vector<Frame> frames;
  CrfModel crf = CrfModel::identity();
  std::string sensor_profile = "sim";
};

/// sigma2_im for a named sensor profile ("davis240c", "flir", "sim").
double profile_sigma2_im(const std::string& profile);

/// Load and validate a whole dataset behind a manifest file (or a directory
/// containing "manifest.cfg").
Dataset load_dataset(const std::filesystem::path& manifest_or_dir,
                     PolarityConvention convention = PolarityConvention::ZeroOne,
                     std::optional<double> sigma2_im_override = std::nullopt);

// ---- Output schedule and writing ------------------------------------------------

struct OutputSchedule {
  enum class Kind { FixedRate, PerEvent, ExplicitTimes } kind = Kind::FixedRate;
  double rate_hz = 30.0;
  std::vector<std::int64_t> times_micros;  // ExplicitTimes

  /// Materialize the scheduled query times over [t_begin, t_end].
  std::vector<std::int64_t> resolve(std::int64_t t_begin_micros, std::int64_t t_end_micros,
                                    std::span<const Event> events) const;
};

enum class OutputNormalization { FixedRange, Percentile };

/// Write one grayscale image per scheduled time; filenames embed the
/// microsecond timestamp. Intensities are normalized either by clamping to
/// [0,1] or by the 1st/99th percentile over the whole sequence.
std::vector<std::filesystem::path> write_output(std::span<const ImageF> intensity_images,
                                                std::span<const std::int64_t> times_micros,
                                                const std::filesystem::path& dir,
                                                OutputNormalization norm,
                                                int bit_depth = 16,
                                                const std::string& prefix = "recon");

// ---- Run configuration ------------------------------------------------------------

/// Flat key=value configuration with section prefixes (e.g. "filter.alpha").
/// Unknown keys are rejected. Every key is documented in the CLI help.
struct RunConfig {
  FilterParams filter;
  EventNoiseParams noise;
  AugmentParams augment;
  double I_0 = kDefaultI0;
  double crf_sigma2_im = -1.0;  // <0: take from the sensor profile
  double crf_f_w_floor = 0.01;
  std::string kernel = "identity";
  double kernel_sigma = 1.0;
  std::filesystem::path kernel_file;
  OutputSchedule schedule;
  OutputNormalization normalization = OutputNormalization::FixedRange;
  int output_bit_depth = 16;
  PolarityConvention polarity = PolarityConvention::ZeroOne;
  bool auto_ct = false;  // estimate the global contrast threshold before running

  void load_file(const std::filesystem::path& path);
  void set_key(const std::string& key, const std::string& value);
  static std::string documented_keys();
};

}  // namespace evfuse::io
